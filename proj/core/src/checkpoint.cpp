#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vrfuse/error.hpp"
#include "vrfuse/models.hpp"

namespace vrfuse::models {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'V', 'R', 'F', 'W'};
constexpr std::uint32_t kVersion = 1;

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::Transfer: return "transfer";
    case Architecture::VRFuseNet: return "vrfusenet";
    case Architecture::SmallCnn: return "smallcnn";
  }
  return "?";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "transfer") return Architecture::Transfer;
  if (s == "vrfusenet") return Architecture::VRFuseNet;
  if (s == "smallcnn") return Architecture::SmallCnn;
  throw ValidationError("unknown architecture '" + s + "'");
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <typename T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    std::istringstream conv(item);
    T v{};
    if (!(conv >> v)) throw ValidationError("bad list entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void write_backbone(std::ostream& os, const std::string& key, const BackboneSpec& b) {
  os << key << ": " << backbone_name(b.name) << "\n";
  os << key << "_pretrained: " << (b.pretrained ? 1 : 0) << "\n";
  os << key << "_weights: " << b.weights.string() << "\n";
  os << key << "_trainable: " << (b.trainable ? 1 : 0) << "\n";
}

void read_backbone(const std::map<std::string, std::string>& kv, const std::string& key, BackboneSpec& b) {
  auto get = [&](const std::string& k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get(key)) b.name = parse_backbone(*v);
  if (auto* v = get(key + "_pretrained")) b.pretrained = *v == "1";
  if (auto* v = get(key + "_weights")) b.weights = *v;
  if (auto* v = get(key + "_trainable")) b.trainable = *v != "0";
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("weights file truncated");
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("weights file truncated");
  return v;
}

std::map<std::string, nn::Tensor*> tensor_table(Model& model) {
  std::map<std::string, nn::Tensor*> out;
  for (auto& [name, p] : model.named_parameters()) out[name] = &p->value;
  for (auto& [name, t] : model.named_buffers()) out[name] = t;
  return out;
}

}  // namespace

void save_weights(Model& model, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error("cannot write " + file.string());
  const auto table = tensor_table(model);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, table.size());
  for (const auto& [name, t] : table) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t->rank()));
    for (int d : t->shape()) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(nn::Real)));
  }
  if (!os) throw Error("failed writing " + file.string());
}

std::size_t load_weights(Model& model, const fs::path& file, std::string_view prefix) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error("cannot open weights file " + file.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error(file.string() + " is not a weights file");
  if (read_u32(is) != kVersion) throw Error(file.string() + ": unsupported weights version");
  const auto table = tensor_table(model);
  const std::uint64_t count = read_u64(is);
  std::size_t loaded = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(read_u32(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw Error("weights file truncated");
    nn::Shape shape(read_u32(is));
    for (int& d : shape) d = static_cast<int>(read_u32(is));
    std::vector<nn::Real> values(nn::element_count(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(nn::Real)))) {
      throw Error("weights file truncated");
    }
    if (!prefix.empty() && name.rfind(std::string(prefix) + "/", 0) != 0) continue;
    auto it = table.find(name);
    if (it == table.end()) continue;
    if (it->second->shape() != shape) {
      throw ValidationError("weights for " + name + " have shape " + nn::Tensor(shape).shape_string() +
                            ", model expects " + it->second->shape_string());
    }
    *it->second = nn::Tensor(shape, std::move(values));
    ++loaded;
  }
  return loaded;
}

void save_checkpoint(Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  const ModelSpec& s = model.spec();
  std::ofstream os(dir / "model.txt");
  if (!os) throw Error("cannot write " + (dir / "model.txt").string());
  os.precision(17);
  os << "format: vrfuse-model 1\n";
  os << "architecture: " << architecture_name(s.architecture) << "\n";
  os << "width: " << s.width << "\n";
  os << "input_size: " << s.input_size << "\n";
  os << "seed: " << s.seed << "\n";
  os << "config_id: " << s.config_id << "\n";
  write_backbone(os, "backbone", s.backbone);
  os << "head_widths: " << join(s.head.dense_widths) << "\n";
  os << "head_dropout: " << join(s.head.dropout_rates) << "\n";
  os << "head_classes: " << s.head.classes << "\n";
  write_backbone(os, "fusion_a", s.fusion.backbone_a);
  write_backbone(os, "fusion_b", s.fusion.backbone_b);
  os << "refine_channels: " << s.fusion.refine_channels << "\n";
  os << "fusion_head: " << join(s.fusion.head_widths) << "\n";
  os << "fusion_dropout: " << s.fusion.dropout << "\n";
  os << "fusion_classes: " << s.fusion.classes << "\n";
  os << "labels: " << join(label_order()) << "\n";
  os.close();
  save_weights(model, dir / "weights.bin");
}

ModelSpec read_model_spec(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    kv[line.substr(0, colon)] = value;
  }
  if (kv["format"] != "vrfuse-model 1") throw ValidationError(file.string() + " is not a model description");
  if (kv["labels"] != join(label_order())) {
    throw ValidationError("checkpoint label order '" + kv["labels"] + "' does not match " + join(label_order()));
  }
  ModelSpec s;
  s.architecture = parse_architecture(kv["architecture"]);
  s.width = std::stod(kv["width"]);
  s.input_size = std::stoi(kv["input_size"]);
  s.seed = std::stoull(kv["seed"]);
  s.config_id = kv["config_id"];
  read_backbone(kv, "backbone", s.backbone);
  s.head.dense_widths = split_list<int>(kv["head_widths"]);
  s.head.dropout_rates = split_list<double>(kv["head_dropout"]);
  s.head.classes = std::stoi(kv["head_classes"]);
  read_backbone(kv, "fusion_a", s.fusion.backbone_a);
  read_backbone(kv, "fusion_b", s.fusion.backbone_b);
  s.fusion.refine_channels = std::stoi(kv["refine_channels"]);
  s.fusion.head_widths = split_list<int>(kv["fusion_head"]);
  s.fusion.dropout = std::stod(kv["fusion_dropout"]);
  s.fusion.classes = std::stoi(kv["fusion_classes"]);
  return s;
}

Model load_checkpoint(const fs::path& dir) {
  ModelSpec spec = read_model_spec(dir / "model.txt");
  // Weights come from the checkpoint itself.
  spec.backbone.pretrained = false;
  spec.fusion.backbone_a.pretrained = false;
  spec.fusion.backbone_b.pretrained = false;
  Model model(spec);
  const std::size_t expected = model.named_parameters().size() + model.named_buffers().size();
  const std::size_t loaded = load_weights(model, dir / "weights.bin");
  if (loaded != expected) {
    throw ValidationError("checkpoint " + dir.string() + " restored " + std::to_string(loaded) + " of " +
                          std::to_string(expected) + " tensors");
  }
  return model;
}

}  // namespace vrfuse::models
