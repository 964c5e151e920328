#include "vrfuse/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "vrfuse/error.hpp"
#include "vrfuse/random.hpp"

namespace fs = std::filesystem;

namespace vrfuse::dataset {

namespace {

constexpr std::array<std::pair<Corpus, std::string_view>, 7> kCorpusNames = {{
    {Corpus::Aptos2019, "aptos2019"},
    {Corpus::DDR, "ddr"},
    {Corpus::IDRiD, "idrid"},
    {Corpus::Messidor2, "messidor2"},
    {Corpus::Retino, "retino"},
    {Corpus::EyePACS, "eyepacs"},
    {Corpus::Synthetic, "synthetic"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool has_image_magic(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return false;
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto got = in.gcount();
  static constexpr std::array<unsigned char, 8> png = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got >= 8 && std::equal(png.begin(), png.end(), head.begin())) return true;
  return got >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF;
}

}  // namespace

std::string_view corpus_name(Corpus c) {
  for (const auto& [id, name] : kCorpusNames) {
    if (id == c) return name;
  }
  return "?";
}

std::optional<Corpus> parse_corpus(std::string_view name) {
  std::string key;
  for (char c : lower(name)) {
    if (c != '_' && c != '-' && c != ' ') key.push_back(c);
  }
  if (key == "aptos") key = "aptos2019";
  if (key == "messidor") key = "messidor2";
  for (const auto& [id, n] : kCorpusNames) {
    if (n == key) return id;
  }
  return std::nullopt;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Unassigned: return "unassigned";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view name) {
  const std::string key = lower(name);
  if (key == "unassigned") return Split::Unassigned;
  if (key == "train") return Split::Train;
  if (key == "val" || key == "validation") return Split::Val;
  if (key == "test") return Split::Test;
  return std::nullopt;
}

ClassDistribution DatasetManifest::distribution() const {
  ClassDistribution d;
  for (const auto& r : records) ++d[r.label];
  return d;
}

ClassDistribution DatasetManifest::distribution(Split s) const {
  ClassDistribution d;
  for (const auto& r : records) {
    if (r.split == s) ++d[r.label];
  }
  return d;
}

std::vector<ImageRecord> DatasetManifest::with_split(Split s) const {
  std::vector<ImageRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [s](const ImageRecord& r) { return r.split == s; });
  return out;
}

DatasetManifest DatasetManifest::from_source(Corpus source) const {
  DatasetManifest out{.records = {}, .provenance = provenance, .seed = seed};
  std::copy_if(records.begin(), records.end(), std::back_inserter(out.records),
               [source](const ImageRecord& r) { return r.source == source; });
  return out;
}

std::set<Corpus> DatasetManifest::sources() const {
  std::set<Corpus> out;
  for (const auto& r : records) out.insert(r.source);
  return out;
}

CorpusLayout CorpusLayout::canonical() {
  CorpusLayout layout;
  for (Grade g : kAllGrades) layout.aliases[g] = {std::string(canonical_name(g))};
  return layout;
}

bool has_image_extension(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

ScanResult scan_corpus(const fs::path& root, Corpus source, const CorpusLayout& layout) {
  ScanResult result;
  result.manifest.provenance = "scan " + std::string(corpus_name(source)) + " " + root.string();
  if (!fs::is_directory(root)) {
    result.warnings.push_back("corpus root " + root.string() + " is not a directory");
    return result;
  }
  for (Grade g : kAllGrades) {
    auto alias_it = layout.aliases.find(g);
    std::optional<fs::path> dir;
    if (alias_it != layout.aliases.end()) {
      for (const auto& name : alias_it->second) {
        if (fs::is_directory(root / name)) {
          dir = root / name;
          break;
        }
      }
    }
    if (!dir) {
      result.warnings.push_back("missing directory for grade " + std::string(canonical_name(g)) +
                                " under " + root.string());
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(*dir)) {
      if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
      if (layout.excluded.contains(entry.path().filename().string())) continue;
      files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      if (!has_image_magic(f)) {
        result.errors.push_back({f, "not a readable PNG/JPEG file"});
        continue;
      }
      result.manifest.records.push_back({.path = std::move(f), .label = g, .source = source});
    }
  }
  return result;
}

DatasetManifest merge(std::span<const DatasetManifest> manifests) {
  if (manifests.empty()) throw ValidationError("merge: no manifests given");
  DatasetManifest out;
  out.seed = manifests.front().seed;
  std::unordered_map<std::string, Corpus> seen;
  for (const auto& m : manifests) {
    if (!m.provenance.empty()) {
      if (!out.provenance.empty()) out.provenance += " | ";
      out.provenance += m.provenance;
    }
    for (const auto& r : m.records) {
      auto [it, inserted] = seen.emplace(r.path.string(), r.source);
      if (!inserted) {
        throw ValidationError("merge: duplicate path " + r.path.string() + " in sources " +
                              std::string(corpus_name(it->second)) + " and " +
                              std::string(corpus_name(r.source)));
      }
      out.records.push_back(r);
    }
  }
  return out;
}

SplitRatios parse_ratios(std::string_view text) {
  std::vector<double> parts;
  std::string token;
  std::istringstream is{std::string(text)};
  while (std::getline(is, token, ',')) {
    try {
      parts.push_back(std::stod(trim(token)));
    } catch (const std::exception&) {
      throw ValidationError("bad ratio '" + token + "'");
    }
  }
  if (parts.size() != 3) throw ValidationError("ratios must have three comma-separated values");
  return {parts[0], parts[1], parts[2]};
}

DatasetManifest split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  const double r[3] = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v >= 0.0)) throw ValidationError("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  const bool three_way = r[0] > 0 && r[1] > 0 && r[2] > 0;

  std::array<std::vector<std::size_t>, kNumGrades> by_class;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_class[index_of(manifest.records[i].label)].push_back(i);
  }
  std::string too_small;
  for (Grade g : kAllGrades) {
    const auto n = by_class[index_of(g)].size();
    if (three_way && n > 0 && n < 3) {
      if (!too_small.empty()) too_small += ", ";
      too_small += std::string(canonical_name(g)) + " (" + std::to_string(n) + ")";
    }
  }
  if (!too_small.empty()) {
    throw ValidationError("split: classes with fewer than 3 records: " + too_small);
  }

  DatasetManifest out = manifest;
  out.seed = seed;
  for (Grade g : kAllGrades) {
    auto& idx = by_class[index_of(g)];
    const std::size_t n = idx.size();
    if (n == 0) continue;
    Rng rng = Rng::derive(seed, index_of(g));
    rng.shuffle(std::span<std::size_t>(idx));
    auto count = [&](double ratio) {
      auto c = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
      if (three_way) c = std::max<std::size_t>(c, 1);
      return c;
    };
    std::size_t n_test = std::min(count(r[2]), n);
    std::size_t n_val = std::min(count(r[1]), n - n_test);
    if (r[0] == 0.0) n_val = n - n_test;
    for (std::size_t k = 0; k < n; ++k) {
      Split s = Split::Train;
      if (k < n_test) {
        s = Split::Test;
      } else if (k < n_test + n_val) {
        s = Split::Val;
      }
      out.records[idx[k]].split = s;
    }
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest, std::ostream& os) {
  os << "# vrfuse manifest v1\n";
  os << "# seed: " << manifest.seed << '\n';
  std::string prov = manifest.provenance;
  std::replace(prov.begin(), prov.end(), '\n', ' ');
  os << "# provenance: " << prov << '\n';
  os << "path\tlabel\tsource\tsplit\n";
  for (const auto& r : manifest.records) {
    os << r.path.string() << '\t' << canonical_name(r.label) << '\t' << corpus_name(r.source) << '\t'
       << split_name(r.split) << '\n';
  }
}

DatasetManifest read_manifest(std::istream& is) {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool saw_columns = false;
  std::unordered_map<std::string, std::size_t> paths;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string body = trim(std::string_view(line).substr(1));
      if (body.rfind("seed:", 0) == 0) {
        m.seed = std::stoull(trim(std::string_view(body).substr(5)));
      } else if (body.rfind("provenance:", 0) == 0) {
        m.provenance = trim(std::string_view(body).substr(11));
      }
      continue;
    }
    if (!saw_columns) {
      if (line != "path\tlabel\tsource\tsplit") {
        throw ValidationError("manifest line " + std::to_string(line_no) + ": expected column header");
      }
      saw_columns = true;
      continue;
    }
    std::vector<std::string> cols;
    std::string col;
    std::istringstream ls(line);
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 4 columns");
    }
    auto label = parse_grade(cols[1]);
    auto source = parse_corpus(cols[2]);
    auto sp = parse_split(cols[3]);
    if (!label || !source || !sp) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": bad label/source/split");
    }
    if (!paths.emplace(cols[0], line_no).second) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": duplicate path " + cols[0]);
    }
    m.records.push_back({.path = cols[0], .label = *label, .source = *source, .split = *sp});
  }
  if (!saw_columns) throw ValidationError("manifest has no column header");
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write manifest " + file.string());
  write_manifest(manifest, os);
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ValidationError("cannot read manifest " + file.string());
  return read_manifest(is);
}

}  // namespace vrfuse::dataset
