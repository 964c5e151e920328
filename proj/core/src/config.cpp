#include "vrfuse/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "vrfuse/error.hpp"

namespace vrfuse::config {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return p.empty() || path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get(const YAML::Node& node, const char* key, T fallback) {
  const YAML::Node v = node[key];
  if (!v) return fallback;
  try {
    return v.as<T>();
  } catch (const YAML::Exception&) {
    throw ValidationError(std::string("config key '") + key + "' has an invalid value");
  }
}

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node || !node.IsMap()) return;
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + key + "' in " + where);
  }
}

Grade grade_key(const std::string& name) {
  const auto g = parse_grade(name);
  if (!g) throw ValidationError("unknown grade '" + name + "' in config");
  return *g;
}

dataset::Corpus corpus_key(const std::string& name) {
  const auto c = dataset::parse_corpus(name);
  if (!c) throw ValidationError("unknown corpus '" + name + "' in config");
  return *c;
}

ClassDistribution parse_counts(const YAML::Node& node) {
  ClassDistribution d;
  if (node.IsSequence()) {
    if (node.size() != kNumGrades) throw ValidationError("generate counts need one entry per grade");
    for (std::size_t i = 0; i < kNumGrades; ++i) d[kAllGrades[i]] = node[i].as<std::int64_t>();
  } else if (node.IsMap()) {
    for (const auto& kv : node) d[grade_key(kv.first.as<std::string>())] = kv.second.as<std::int64_t>();
  } else {
    const auto n = node.as<std::int64_t>();
    for (Grade g : kAllGrades) d[g] = n;
  }
  return d;
}

models::BackboneSpec parse_backbone(const YAML::Node& node, const fs::path& base, models::BackboneSpec b) {
  if (!node) return b;
  if (node.IsScalar()) {
    b.name = models::parse_backbone(node.as<std::string>());
    return b;
  }
  check_keys(node, "backbone", {"name", "pretrained", "weights", "trainable"});
  if (node["name"]) b.name = models::parse_backbone(node["name"].as<std::string>());
  b.pretrained = get(node, "pretrained", b.pretrained);
  if (node["weights"]) b.weights = resolve(base, node["weights"].as<std::string>());
  b.trainable = get(node, "trainable", b.trainable);
  return b;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_backbone(YAML::Emitter& out, const models::BackboneSpec& b) {
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << std::string(models::backbone_name(b.name));
  out << YAML::Key << "pretrained" << YAML::Value << b.pretrained;
  out << YAML::Key << "weights" << YAML::Value << b.weights.generic_string();
  out << YAML::Key << "trainable" << YAML::Value << b.trainable;
  out << YAML::EndMap;
}

}  // namespace

PipelineConfig parse(const std::string& text, const fs::path& base) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ValidationError("config must be a mapping");
  check_keys(root, "config", {"seed", "output", "corpora", "smote", "clahe", "split", "model", "train", "xai"});

  PipelineConfig cfg;
  cfg.seed = get<std::uint64_t>(root, "seed", 0);
  cfg.output = resolve(base, get<std::string>(root, "output", "run"));

  for (const auto& c : root["corpora"]) {
    check_keys(c, "corpora entry", {"name", "root", "aliases", "exclude", "generate", "generate_size"});
    CorpusConfig cc;
    cc.corpus = corpus_key(get<std::string>(c, "name", ""));
    if (c["root"]) cc.root = resolve(base, c["root"].as<std::string>());
    for (const auto& kv : c["aliases"]) {
      auto& list = cc.aliases[grade_key(kv.first.as<std::string>())];
      if (kv.second.IsSequence()) {
        for (const auto& a : kv.second) list.push_back(a.as<std::string>());
      } else {
        list.push_back(kv.second.as<std::string>());
      }
    }
    for (const auto& e : c["exclude"]) cc.exclude.push_back(e.as<std::string>());
    if (c["generate"]) cc.generate = parse_counts(c["generate"]);
    cc.generate_size = get(c, "generate_size", cc.generate_size);
    cfg.corpora.push_back(std::move(cc));
  }

  if (const auto s = root["smote"]) {
    check_keys(s, "smote", {"enabled", "k", "policy", "overrides", "image_size"});
    cfg.smote.enabled = get(s, "enabled", cfg.smote.enabled);
    cfg.smote.k = get(s, "k", cfg.smote.k);
    cfg.smote.policy = get(s, "policy", cfg.smote.policy);
    if (cfg.smote.policy != "mean") cfg.smote.policy = resolve(base, cfg.smote.policy).string();
    for (const auto& kv : s["overrides"]) {
      cfg.smote.overrides[corpus_key(kv.first.as<std::string>())] = resolve(base, kv.second.as<std::string>());
    }
    cfg.smote.image_size = get(s, "image_size", cfg.smote.image_size);
  }

  if (const auto c = root["clahe"]) {
    check_keys(c, "clahe", {"enabled", "grid", "clip", "alpha", "s_max"});
    cfg.clahe.enabled = get(c, "enabled", cfg.clahe.enabled);
    if (c["grid"]) cfg.clahe.grid = enhance::parse_grid(c["grid"].as<std::string>());
    if (c["alpha"] || c["s_max"]) {
      if (c["clip"]) throw ValidationError("clahe: give either clip or alpha/s_max, not both");
      cfg.clahe.clip = enhance::ClipSpec::slope(get(c, "alpha", 0.0), get(c, "s_max", 1.0));
    } else if (c["clip"]) {
      cfg.clahe.clip = enhance::ClipSpec::normalized(c["clip"].as<double>());
    }
  }

  if (root["split"]) cfg.split = dataset::parse_ratios(root["split"].as<std::string>());

  if (const auto m = root["model"]) {
    check_keys(m, "model", {"name", "width", "input_size", "backbone", "backbone_a", "backbone_b", "refine_channels",
                            "head", "dropout"});
    cfg.model = models::spec_for(get<std::string>(m, "name", "vrfusenet"));
    cfg.model.width = get(m, "width", cfg.model.width);
    cfg.model.input_size = get(m, "input_size", cfg.model.input_size);
    cfg.model.backbone = parse_backbone(m["backbone"], base, cfg.model.backbone);
    cfg.model.fusion.backbone_a = parse_backbone(m["backbone_a"], base, cfg.model.fusion.backbone_a);
    cfg.model.fusion.backbone_b = parse_backbone(m["backbone_b"], base, cfg.model.fusion.backbone_b);
    cfg.model.fusion.refine_channels = get(m, "refine_channels", cfg.model.fusion.refine_channels);
    if (m["head"]) {
      auto widths = m["head"].as<std::vector<int>>();
      if (cfg.model.architecture == models::Architecture::Transfer) {
        cfg.model.head.dense_widths = widths;
      } else {
        cfg.model.fusion.head_widths = widths;
      }
    }
    if (m["dropout"]) {
      const double d = m["dropout"].as<double>();
      cfg.model.fusion.dropout = d;
      cfg.model.head.dropout_rates.assign(cfg.model.head.dense_widths.size(), d);
    }
  }
  cfg.model.seed = cfg.seed;

  if (const auto t = root["train"]) {
    check_keys(t, "train", {"batch_size", "learning_rate", "epochs", "optimizer", "bn_recalibration"});
    cfg.train.batch_size = get(t, "batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = get(t, "learning_rate", cfg.train.learning_rate);
    cfg.train.epochs = get(t, "epochs", cfg.train.epochs);
    cfg.train.optimizer = get(t, "optimizer", cfg.train.optimizer);
    cfg.train.bn_recalibration = get(t, "bn_recalibration", cfg.train.bn_recalibration);
  }
  cfg.train.seed = cfg.seed;

  if (const auto x = root["xai"]) {
    check_keys(x, "xai", {"methods", "layer", "class", "faster_channels", "images", "opacity"});
    if (const auto methods = x["methods"]) {
      cfg.xai.methods.clear();
      const auto names = methods.IsSequence() ? methods.as<std::vector<std::string>>()
                                              : std::vector<std::string>{methods.as<std::string>()};
      for (const auto& n : names) {
        if (n == "all") {
          cfg.xai.methods.assign(std::begin(xai::kAllMethods), std::end(xai::kAllMethods));
        } else {
          cfg.xai.methods.push_back(xai::parse_method(n));
        }
      }
    }
    cfg.xai.layer = get<std::string>(x, "layer", "");
    const auto cls = get<std::string>(x, "class", "auto");
    if (cls != "auto") cfg.xai.target_class = static_cast<int>(index_of(grade_key(cls)));
    cfg.xai.faster_channels = get(x, "faster_channels", cfg.xai.faster_channels);
    cfg.xai.images = get(x, "images", cfg.xai.images);
    cfg.xai.opacity = get(x, "opacity", cfg.xai.opacity);
  }
  return cfg;
}

PipelineConfig load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ValidationError("cannot open config " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), file.parent_path());
}

void PipelineConfig::validate() const {
  if (corpora.empty()) throw ValidationError("config lists no corpora");
  std::set<dataset::Corpus> seen;
  for (const auto& c : corpora) {
    if (!seen.insert(c.corpus).second) {
      throw ValidationError("corpus " + std::string(dataset::corpus_name(c.corpus)) + " listed twice");
    }
    if (c.generate) {
      for (Grade g : kAllGrades) {
        if ((*c.generate)[g] < 1) throw ValidationError("generate counts must be >= 1");
      }
      continue;
    }
    if (c.root.empty()) throw ValidationError("corpus " + std::string(dataset::corpus_name(c.corpus)) + " has no root");
    if (!fs::is_directory(c.root)) throw ValidationError("corpus root " + c.root.string() + " does not exist");
  }
  if (smote.k < 1) throw ValidationError("smote.k must be >= 1");
  if (smote.policy != "mean" && !fs::is_regular_file(smote.policy)) {
    throw ValidationError("smote policy file " + smote.policy + " does not exist");
  }
  for (const auto& [corpus, file] : smote.overrides) {
    if (!fs::is_regular_file(file)) throw ValidationError("smote override " + file.string() + " does not exist");
  }
  if (smote.image_size < 8) throw ValidationError("smote.image_size must be >= 8");
  if (clahe.grid.rows < 1 || clahe.grid.cols < 1) throw ValidationError("clahe.grid must be positive");
  train.validate();
  if (model.input_size < 32) throw ValidationError("model.input_size must be >= 32");
  if (!(model.width > 0)) throw ValidationError("model.width must be > 0");
  for (const auto* b : {&model.backbone, &model.fusion.backbone_a, &model.fusion.backbone_b}) {
    if (b->pretrained && !fs::is_regular_file(b->weights)) {
      throw ValidationError("pretrained weights " + b->weights.string() + " do not exist");
    }
  }
  if (xai.methods.empty()) throw ValidationError("xai.methods is empty");
  if (xai.faster_channels < 1) throw ValidationError("xai.faster_channels must be >= 1");
  if (xai.opacity < 0 || xai.opacity > 1) throw ValidationError("xai.opacity must be in [0, 1]");
  if (xai.images < 0) throw ValidationError("xai.images must be >= 0");
}

std::string to_yaml(const PipelineConfig& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "output" << YAML::Value << cfg.output.generic_string();
  out << YAML::Key << "corpora" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : cfg.corpora) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << std::string(dataset::corpus_name(c.corpus));
    out << YAML::Key << "root" << YAML::Value << c.root.generic_string();
    out << YAML::Key << "aliases" << YAML::Value << YAML::BeginMap;
    for (const auto& [g, names] : c.aliases) {
      out << YAML::Key << std::string(canonical_name(g)) << YAML::Value << YAML::Flow << names;
    }
    out << YAML::EndMap;
    out << YAML::Key << "exclude" << YAML::Value << YAML::Flow << c.exclude;
    if (c.generate) {
      std::vector<std::int64_t> counts;
      for (Grade g : kAllGrades) counts.push_back((*c.generate)[g]);
      out << YAML::Key << "generate" << YAML::Value << YAML::Flow << counts;
      out << YAML::Key << "generate_size" << YAML::Value << c.generate_size;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "smote" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << cfg.smote.enabled;
  out << YAML::Key << "k" << YAML::Value << cfg.smote.k;
  out << YAML::Key << "policy" << YAML::Value << cfg.smote.policy;
  out << YAML::Key << "overrides" << YAML::Value << YAML::BeginMap;
  for (const auto& [corpus, file] : cfg.smote.overrides) {
    out << YAML::Key << std::string(dataset::corpus_name(corpus)) << YAML::Value << file.generic_string();
  }
  out << YAML::EndMap;
  out << YAML::Key << "image_size" << YAML::Value << cfg.smote.image_size;
  out << YAML::EndMap;

  out << YAML::Key << "clahe" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << cfg.clahe.enabled;
  out << YAML::Key << "grid" << YAML::Value
      << std::to_string(cfg.clahe.grid.rows) + "x" + std::to_string(cfg.clahe.grid.cols);
  if (cfg.clahe.clip.normalized_clip) {
    out << YAML::Key << "clip" << YAML::Value << format_double(*cfg.clahe.clip.normalized_clip);
  } else {
    out << YAML::Key << "alpha" << YAML::Value << format_double(cfg.clahe.clip.alpha);
    out << YAML::Key << "s_max" << YAML::Value << format_double(cfg.clahe.clip.s_max);
  }
  out << YAML::EndMap;

  out << YAML::Key << "split" << YAML::Value
      << format_double(cfg.split.train) + "," + format_double(cfg.split.val) + "," + format_double(cfg.split.test);

  const auto& m = cfg.model;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << m.name();
  out << YAML::Key << "width" << YAML::Value << format_double(m.width);
  out << YAML::Key << "input_size" << YAML::Value << m.input_size;
  if (m.architecture == models::Architecture::Transfer) {
    out << YAML::Key << "backbone" << YAML::Value;
    emit_backbone(out, m.backbone);
    out << YAML::Key << "head" << YAML::Value << YAML::Flow << m.head.dense_widths;
    out << YAML::Key << "dropout" << YAML::Value
        << format_double(m.head.dropout_rates.empty() ? 0.0 : m.head.dropout_rates.front());
  } else if (m.architecture == models::Architecture::VRFuseNet) {
    out << YAML::Key << "backbone_a" << YAML::Value;
    emit_backbone(out, m.fusion.backbone_a);
    out << YAML::Key << "backbone_b" << YAML::Value;
    emit_backbone(out, m.fusion.backbone_b);
    out << YAML::Key << "refine_channels" << YAML::Value << m.fusion.refine_channels;
    out << YAML::Key << "head" << YAML::Value << YAML::Flow << m.fusion.head_widths;
    out << YAML::Key << "dropout" << YAML::Value << format_double(m.fusion.dropout);
  }
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << cfg.train.batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << format_double(cfg.train.learning_rate);
  out << YAML::Key << "epochs" << YAML::Value << cfg.train.epochs;
  out << YAML::Key << "optimizer" << YAML::Value << cfg.train.optimizer;
  out << YAML::Key << "bn_recalibration" << YAML::Value << cfg.train.bn_recalibration;
  out << YAML::EndMap;

  out << YAML::Key << "xai" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> methods;
  for (auto meth : cfg.xai.methods) methods.emplace_back(xai::method_name(meth));
  out << YAML::Key << "methods" << YAML::Value << YAML::Flow << methods;
  out << YAML::Key << "layer" << YAML::Value << cfg.xai.layer;
  out << YAML::Key << "class" << YAML::Value
      << (cfg.xai.target_class ? std::string(canonical_name(kAllGrades[*cfg.xai.target_class])) : "auto");
  out << YAML::Key << "faster_channels" << YAML::Value << cfg.xai.faster_channels;
  out << YAML::Key << "images" << YAML::Value << cfg.xai.images;
  out << YAML::Key << "opacity" << YAML::Value << format_double(cfg.xai.opacity);
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string config_hash(const PipelineConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_yaml(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vrfuse::config
