#include "vrfuse/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "vrfuse/error.hpp"
#include "vrfuse/image.hpp"
#include "vrfuse/synth.hpp"

#ifndef VRFUSE_VERSION
#define VRFUSE_VERSION "0.0.0"
#endif

namespace vrfuse::pipeline {

namespace fs = std::filesystem;

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Prepare: return "prepare";
    case Stage::Merge: return "merge";
    case Stage::Balance: return "balance";
    case Stage::Enhance: return "enhance";
    case Stage::Split: return "split";
    case Stage::Train: return "train";
    case Stage::Evaluate: return "evaluate";
    case Stage::Explain: return "explain";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

fs::path RunLayout::manifest(std::string_view name) const { return manifests() / (std::string(name) + ".tsv"); }

fs::path RunLayout::stamp(Stage s) const { return config() / "stages" / (std::string(stage_name(s)) + ".done"); }

void RunLayout::create() const {
  for (const auto& d : {config() / "stages", manifests(), images(), checkpoints(), reports(), xai()}) {
    fs::create_directories(d);
  }
}

// ---------------------------------------------------------------- run record

void write_run_record(const RunRecord& r, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os << "tool_version: " << r.tool_version << "\n";
  os << "config_hash: " << r.config_hash << "\n";
  os << "status: " << (r.ok ? "ok" : "failed") << "\n";
  if (r.failed_stage) os << "failed_stage: " << stage_name(*r.failed_stage) << "\n";
  if (!r.error.empty()) {
    std::string e = r.error;
    std::replace(e.begin(), e.end(), '\n', ' ');
    os << "error: " << e << "\n";
  }
  for (const auto& t : r.timings) {
    os << "stage: " << stage_name(t.stage) << " " << std::fixed << std::setprecision(3) << t.seconds
       << (t.resumed ? " resumed" : "") << "\n";
  }
  for (const auto& [k, v] : r.artifacts) os << "artifact: " << k << " " << v << "\n";
  os << "config:\n";
  std::istringstream cfg(r.config_yaml);
  std::string line;
  while (std::getline(cfg, line)) os << "  " << line << "\n";
}

RunRecord read_run_record(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open run record " + file.string());
  RunRecord r;
  std::string line;
  bool in_config = false;
  while (std::getline(is, line)) {
    if (in_config) {
      r.config_yaml += (line.size() >= 2 ? line.substr(2) : "") + "\n";
      continue;
    }
    const auto colon = line.find(": ");
    const std::string key = line.substr(0, line.find(':'));
    const std::string value = colon == std::string::npos ? "" : line.substr(colon + 2);
    if (key == "tool_version") r.tool_version = value;
    else if (key == "config_hash") r.config_hash = value;
    else if (key == "status") r.ok = value == "ok";
    else if (key == "failed_stage") r.failed_stage = parse_stage(value);
    else if (key == "error") r.error = value;
    else if (key == "stage") {
      std::istringstream s(value);
      std::string name, flag;
      StageTiming t{};
      s >> name >> t.seconds >> flag;
      t.stage = parse_stage(name);
      t.resumed = flag == "resumed";
      r.timings.push_back(t);
    } else if (key == "artifact") {
      const auto space = value.find(' ');
      r.artifacts[value.substr(0, space)] = space == std::string::npos ? "" : value.substr(space + 1);
    } else if (key == "config") {
      in_config = true;
    }
  }
  return r;
}

// ---------------------------------------------------------------- building blocks

EnhanceResult enhance_manifest(const dataset::DatasetManifest& manifest, const config::ClaheSection& clahe,
                               const fs::path& out_dir, int size) {
  EnhanceResult result;
  result.manifest.seed = manifest.seed;
  result.manifest.provenance = manifest.provenance + " | enhance " +
                               (clahe.enabled ? "clahe " + std::to_string(clahe.grid.rows) + "x" +
                                                    std::to_string(clahe.grid.cols)
                                              : std::string("resize-only")) +
                               " size=" + std::to_string(size);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    const cv::Mat src = read_color(rec.path);
    const cv::Mat eq = clahe.enabled ? enhance::clahe(src, clahe.grid, clahe.clip) : src;
    cv::Mat resized;
    cv::resize(eq, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%06zu_", i);
    const fs::path out = out_dir / std::string(dataset::corpus_name(rec.source)) /
                         std::string(canonical_name(rec.label)) /
                         (prefix + rec.path.stem().string() + ".png");
    write_image(out, resized);
    auto copy = rec;
    copy.path = out;
    result.manifest.records.push_back(copy);
    result.contrast.push_back({rec.path, out, enhance::luminance_stddev(src), enhance::luminance_stddev(eq)});
  }
  return result;
}

void write_contrast_report(const std::vector<ContrastRow>& rows, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os << "source,enhanced,l_std_before,l_std_after\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) os << r.source.string() << "," << r.enhanced.string() << "," << r.before << "," << r.after << "\n";
}

balance::TargetPolicy default_policy(const config::SmoteSection& smote) {
  return smote.policy == "mean" ? balance::TargetPolicy::mean() : balance::load_target_policy(smote.policy);
}

std::map<dataset::Corpus, balance::TargetPolicy> smote_policies(const config::SmoteSection& smote,
                                                                const std::set<dataset::Corpus>& corpora) {
  std::map<dataset::Corpus, balance::TargetPolicy> out;
  for (const auto& [corpus, file] : smote.overrides) {
    if (corpora.contains(corpus)) out[corpus] = balance::load_target_policy(file);
  }
  return out;
}

ClassDistribution published_hybrid_totals() {
  ClassDistribution d;
  d[Grade::Mild] = 3967;
  d[Grade::Moderate] = 4194;
  d[Grade::NoDR] = 9534;
  d[Grade::Proliferative] = 3967;
  d[Grade::Severe] = 6473;
  return d;
}

std::vector<std::string> hybrid_notes(const ClassDistribution& merged) {
  const ClassDistribution pub = published_hybrid_totals();
  std::vector<std::string> notes;
  for (Grade g : kAllGrades) {
    const std::string name(canonical_name(g));
    if (merged[g] == pub[g]) {
      notes.push_back(name + " " + std::to_string(merged[g]) + " matches the published hybrid table");
    } else {
      notes.push_back(name + " " + std::to_string(merged[g]) + " differs from the published " +
                      std::to_string(pub[g]));
    }
  }
  if (merged[Grade::Severe] == pub[Grade::Moderate] && merged[Grade::Moderate] != pub[Grade::Moderate]) {
    notes.push_back("Moderate/Severe appear transposed in the published hybrid table: summation gives Moderate " +
                    std::to_string(merged[Grade::Moderate]) + " / Severe " + std::to_string(merged[Grade::Severe]) +
                    ", published lists Moderate " + std::to_string(pub[Grade::Moderate]) + " / Severe " +
                    std::to_string(pub[Grade::Severe]));
  }
  if (merged.total() != pub.total()) {
    notes.push_back("total " + std::to_string(merged.total()) + " vs published " + std::to_string(pub.total()));
  }
  return notes;
}

void write_balance_report(const balance::BalanceResult& result, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os << "corpus,grade,before,after\n";
  ClassDistribution before, after;
  std::set<dataset::Corpus> corpora;
  for (const auto& c : result.per_corpus) {
    corpora.insert(c.corpus);
    for (Grade g : kAllGrades) {
      os << dataset::corpus_name(c.corpus) << "," << canonical_name(g) << "," << c.before[g] << "," << c.after[g] << "\n";
    }
    before += c.before;
    after += c.after;
  }
  if (result.per_corpus.empty()) return;
  for (Grade g : kAllGrades) os << "hybrid," << canonical_name(g) << "," << before[g] << "," << after[g] << "\n";
  const std::set<dataset::Corpus> public_corpora = {dataset::Corpus::Aptos2019, dataset::Corpus::DDR,
                                                   dataset::Corpus::IDRiD, dataset::Corpus::Messidor2,
                                                   dataset::Corpus::Retino};
  if (corpora == public_corpora) {
    for (const auto& n : hybrid_notes(after)) os << "# note: " << n << "\n";
  }
}

render::Grid explain_image(models::Model& model, const fs::path& image, const std::vector<xai::Method>& methods,
                           const xai::CamOptions& opts, const fs::path& out_dir, double opacity) {
  fs::create_directories(out_dir);
  const cv::Mat bgr = read_color(image);
  std::vector<std::optional<xai::Heatmap>> heatmaps;
  const int size = model.spec().input_size;
  render::Grid grid = render::comparison_grid({{model.spec().name(), &model}}, bgr, methods, opts, size, opacity,
                                              &heatmaps);
  cv::Mat original;
  cv::resize(bgr, original, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    if (!heatmaps[m]) continue;
    const std::string name(xai::method_name(methods[m]));
    xai::write_heatmap(heatmaps[m]->map, out_dir / ("heatmap_" + name + ".txt"));
    write_image(out_dir / ("overlay_" + name + ".png"), render::overlay(original, heatmaps[m]->map, opacity));
  }
  write_image(out_dir / "grid.png", grid.image);
  render::write_grid_manifest(grid, out_dir / "manifest.txt");
  return grid;
}

// ---------------------------------------------------------------- run

namespace {

class Runner {
 public:
  Runner(const config::PipelineConfig& cfg, const RunOptions& opts)
      : cfg_(cfg), opts_(opts), layout_{cfg.output}, hash_(config::config_hash(cfg)) {}

  RunRecord run() {
    layout_.create();
    record_.tool_version = VRFUSE_VERSION;
    record_.config_hash = hash_;
    record_.config_yaml = config::to_yaml(cfg_);
    {
      std::ofstream os(layout_.config() / "config.yaml");
      os << record_.config_yaml;
    }
    for (Stage s : kAllStages) {
      if (!run_stage(s)) break;
      if (opts_.stop_after && *opts_.stop_after == s) break;
    }
    write_run_record(record_, layout_.record());
    return record_;
  }

 private:
  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  bool stamped(Stage s) const {
    if (opts_.force) return false;
    std::ifstream is(layout_.stamp(s));
    std::string h;
    return is && (is >> h) && h == hash_;
  }

  bool run_stage(Stage s) {
    const auto start = std::chrono::steady_clock::now();
    StageTiming t{s, 0, false};
    try {
      if (stamped(s)) {
        t.resumed = true;
        log(std::string(stage_name(s)) + ": up to date");
        artifacts(s);
      } else {
        log(std::string(stage_name(s)) + ": running");
        fs::remove(layout_.stamp(s));
        execute(s);
        artifacts(s);
        std::ofstream(layout_.stamp(s)) << hash_ << "\n";
      }
    } catch (const std::exception& e) {
      t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      record_.timings.push_back(t);
      record_.ok = false;
      record_.failed_stage = s;
      record_.error = e.what();
      log(std::string(stage_name(s)) + ": failed: " + e.what());
      // Downstream stamps are stale now.
      for (Stage later : kAllStages) {
        if (later >= s) fs::remove(layout_.stamp(later));
      }
      return false;
    }
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    record_.timings.push_back(t);
    return true;
  }

  void artifacts(Stage s) {
    auto add = [&](const std::string& k, const fs::path& p) { record_.artifacts[k] = p.string(); };
    switch (s) {
      case Stage::Prepare:
        for (const auto& c : cfg_.corpora) {
          add("manifest." + std::string(dataset::corpus_name(c.corpus)), layout_.manifest(dataset::corpus_name(c.corpus)));
        }
        break;
      case Stage::Merge: add("manifest.merged", layout_.manifest("merged")); break;
      case Stage::Balance:
        add("manifest.balanced", layout_.manifest("balanced"));
        add("report.balance", layout_.reports() / "balance.csv");
        break;
      case Stage::Enhance:
        add("manifest.enhanced", layout_.manifest("enhanced"));
        add("report.contrast", layout_.reports() / "contrast.csv");
        break;
      case Stage::Split: add("manifest.split", layout_.manifest("split")); break;
      case Stage::Train:
        add("checkpoint", checkpoint_dir());
        add("report.history", layout_.reports() / "history.csv");
        add("plot.loss", layout_.reports() / "loss.png");
        break;
      case Stage::Evaluate:
        add("report.metrics", metrics_dir() / "metrics.csv");
        add("plot.roc", layout_.reports() / "roc.png");
        break;
      case Stage::Explain: add("xai", layout_.xai()); break;
    }
  }

  fs::path checkpoint_dir() const { return layout_.checkpoints() / cfg_.model.name(); }
  fs::path metrics_dir() const { return layout_.reports() / "metrics" / cfg_.model.name(); }

  void execute(Stage s) {
    switch (s) {
      case Stage::Prepare: prepare(); break;
      case Stage::Merge: merge(); break;
      case Stage::Balance: balance(); break;
      case Stage::Enhance: enhance(); break;
      case Stage::Split: split(); break;
      case Stage::Train: train(); break;
      case Stage::Evaluate: evaluate(); break;
      case Stage::Explain: explain(); break;
    }
  }

  void prepare() {
    std::ofstream notes(layout_.reports() / "prepare.txt");
    for (std::size_t i = 0; i < cfg_.corpora.size(); ++i) {
      const auto& c = cfg_.corpora[i];
      const std::string name(dataset::corpus_name(c.corpus));
      fs::path root = c.root;
      if (c.generate) {
        root = layout_.images() / "source" / name;
        fs::remove_all(root);
        synth::generate_synthetic_corpus(root, *c.generate, Rng::derive(cfg_.seed, 0x5000 + i).next(), c.generate_size);
      }
      auto layout = dataset::CorpusLayout::canonical();
      for (const auto& [g, names] : c.aliases) {
        auto& list = layout.aliases[g];
        list.insert(list.end(), names.begin(), names.end());
      }
      layout.excluded.insert(c.exclude.begin(), c.exclude.end());
      auto scan = dataset::scan_corpus(root, c.corpus, layout);
      for (const auto& w : scan.warnings) notes << name << ": warning: " << w << "\n";
      for (const auto& e : scan.errors) notes << name << ": error: " << e.path.string() << ": " << e.message << "\n";
      if (scan.manifest.records.empty()) throw Error("corpus " + name + " at " + root.string() + " has no images");
      scan.manifest.seed = cfg_.seed;
      dataset::save_manifest(scan.manifest, layout_.manifest(name));
      log("  " + name + ": " + to_string(scan.manifest.distribution()));
    }
  }

  void merge() {
    std::vector<dataset::DatasetManifest> parts;
    for (const auto& c : cfg_.corpora) parts.push_back(dataset::load_manifest(layout_.manifest(dataset::corpus_name(c.corpus))));
    auto merged = dataset::merge(parts);
    merged.seed = cfg_.seed;
    dataset::save_manifest(merged, layout_.manifest("merged"));
    log("  merged: " + to_string(merged.distribution()));
  }

  void balance() {
    const auto merged = dataset::load_manifest(layout_.manifest("merged"));
    if (!cfg_.smote.enabled) {
      dataset::save_manifest(merged, layout_.manifest("balanced"));
      std::ofstream(layout_.reports() / "balance.csv") << "corpus,grade,before,after\n";
      return;
    }
    balance::SmoteConfig sc;
    sc.k = cfg_.smote.k;
    sc.policy = default_policy(cfg_.smote);
    sc.seed = cfg_.seed;
    const fs::path out = layout_.images() / "smote";
    fs::remove_all(out);
    const auto result = balance::balance_manifest(merged, sc, smote_policies(cfg_.smote, merged.sources()), out,
                                                  {cfg_.smote.image_size, cfg_.smote.image_size, 3});
    dataset::save_manifest(result.manifest, layout_.manifest("balanced"));
    write_balance_report(result, layout_.reports() / "balance.csv");
    log("  balanced: " + to_string(result.manifest.distribution()));
  }

  void enhance() {
    const auto balanced = dataset::load_manifest(layout_.manifest("balanced"));
    const fs::path out = layout_.images() / "enhanced";
    fs::remove_all(out);
    const auto result = enhance_manifest(balanced, cfg_.clahe, out, cfg_.model.input_size);
    dataset::save_manifest(result.manifest, layout_.manifest("enhanced"));
    write_contrast_report(result.contrast, layout_.reports() / "contrast.csv");
  }

  void split() {
    const auto enhanced = dataset::load_manifest(layout_.manifest("enhanced"));
    const auto out = dataset::split(enhanced, cfg_.split, cfg_.seed);
    dataset::save_manifest(out, layout_.manifest("split"));
    log("  train " + std::to_string(out.with_split(dataset::Split::Train).size()) + " / val " +
        std::to_string(out.with_split(dataset::Split::Val).size()) + " / test " +
        std::to_string(out.with_split(dataset::Split::Test).size()));
  }

  void train() {
    const auto manifest = dataset::load_manifest(layout_.manifest("split"));
    models::ModelSpec spec = cfg_.model;
    spec.config_id = hash_;
    models::Model model(spec);
    const auto history = train::train(model, manifest, cfg_.train, [&](const train::EpochLog& e) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << "  epoch " << e.epoch << " loss " << e.train_loss << " acc "
         << e.train_accuracy << " val_loss " << e.val_loss << " val_acc " << e.val_accuracy << " ("
         << std::setprecision(1) << e.seconds << " s)";
      log(os.str());
    });
    fs::remove_all(checkpoint_dir());
    models::save_checkpoint(model, checkpoint_dir());
    train::write_history(history, layout_.reports() / "history.csv");
    write_image(layout_.reports() / "loss.png", render::plot_history(history));
  }

  void evaluate() {
    const auto manifest = dataset::load_manifest(layout_.manifest("split"));
    auto model = models::load_checkpoint(checkpoint_dir());
    const auto report = train::evaluate(model, manifest);
    eval::write_report(report, metrics_dir());
    write_image(layout_.reports() / "roc.png", render::plot_roc(report));
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "  accuracy " << report.accuracy << " macro-F1 " << report.f1
       << " macro-AUC " << report.auc;
    log(os.str());
  }

  void explain() {
    if (cfg_.xai.images == 0) return;
    const auto manifest = dataset::load_manifest(layout_.manifest("split"));
    auto model = models::load_checkpoint(checkpoint_dir());
    std::map<Grade, std::vector<dataset::ImageRecord>> by_class;
    for (const auto& r : manifest.with_split(dataset::Split::Test)) by_class[r.label].push_back(r);
    std::vector<dataset::ImageRecord> chosen;
    for (std::size_t depth = 0; static_cast<int>(chosen.size()) < cfg_.xai.images; ++depth) {
      bool any = false;
      for (Grade g : kAllGrades) {
        if (depth < by_class[g].size() && static_cast<int>(chosen.size()) < cfg_.xai.images) {
          chosen.push_back(by_class[g][depth]);
          any = true;
        }
      }
      if (!any) break;
    }
    fs::remove_all(layout_.xai());
    xai::CamOptions opts;
    opts.layer = cfg_.xai.layer;
    opts.target_class = cfg_.xai.target_class;
    opts.faster_channels = cfg_.xai.faster_channels;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      char dir[32];
      std::snprintf(dir, sizeof dir, "%02zu_", i);
      const auto out = layout_.xai() / (dir + std::string(canonical_name(chosen[i].label)));
      const auto grid = explain_image(model, chosen[i].path, cfg_.xai.methods, opts, out, cfg_.xai.opacity);
      for (const auto& cell : grid.cells) {
        if (!cell.ok) log("  " + out.filename().string() + " " + cell.method + ": " + cell.message);
      }
    }
  }

  const config::PipelineConfig& cfg_;
  const RunOptions& opts_;
  RunLayout layout_;
  std::string hash_;
  RunRecord record_;
};

}  // namespace

RunRecord run_pipeline(const config::PipelineConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return Runner(cfg, opts).run();
}

// ---------------------------------------------------------------- report

std::string report(const fs::path& run_dir) {
  const RunLayout layout{run_dir};
  const RunRecord rec = read_run_record(layout.record());
  std::ostringstream os;
  os << "Run " << run_dir.string() << "\n";
  os << "  tool version: " << rec.tool_version << "\n";
  os << "  config hash:  " << rec.config_hash << "\n";
  os << "  status:       " << (rec.ok ? "ok" : "failed");
  if (rec.failed_stage) os << " at " << stage_name(*rec.failed_stage) << " (" << rec.error << ")";
  os << "\n\nStages\n";
  for (const auto& t : rec.timings) {
    os << "  " << std::left << std::setw(10) << stage_name(t.stage) << std::right << std::fixed << std::setprecision(2)
       << std::setw(10) << t.seconds << " s" << (t.resumed ? "  (resumed)" : "") << "\n";
  }

  const fs::path metrics_root = layout.reports() / "metrics";
  if (fs::is_directory(metrics_root)) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(metrics_root)) {
      if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    os << "\nPerformance (macro averages)\n";
    os << "  " << std::left << std::setw(14) << "model" << std::right;
    for (const char* h : {"accuracy", "precision", "recall", "F1", "AUC"}) os << std::setw(11) << h;
    os << "\n";
    for (const auto& d : dirs) {
      if (!fs::exists(d / "metrics.csv")) continue;
      std::map<std::string, double> m;
      for (const auto& [k, v] : eval::read_metrics_csv(d / "metrics.csv")) m[k] = v;
      os << "  " << std::left << std::setw(14) << d.filename().string() << std::right << std::fixed
         << std::setprecision(4);
      for (const char* k : {"accuracy", "precision_macro", "recall_macro", "f1_macro", "auc_macro"}) {
        os << std::setw(11) << m[k];
      }
      os << "\n";
    }
  }

  const fs::path balance_csv = layout.reports() / "balance.csv";
  if (fs::exists(balance_csv)) {
    std::ifstream is(balance_csv);
    std::string line;
    std::getline(is, line);
    std::map<std::string, std::pair<ClassDistribution, ClassDistribution>> table;
    std::vector<std::string> order, notes;
    while (std::getline(is, line)) {
      if (line.rfind("# note: ", 0) == 0) {
        notes.push_back(line.substr(8));
        continue;
      }
      std::istringstream row(line);
      std::string corpus, grade, before, after;
      std::getline(row, corpus, ',');
      std::getline(row, grade, ',');
      std::getline(row, before, ',');
      std::getline(row, after, ',');
      const auto g = parse_grade(grade);
      if (!g) continue;
      if (!table.contains(corpus)) order.push_back(corpus);
      table[corpus].first[*g] = std::stoll(before);
      table[corpus].second[*g] = std::stoll(after);
    }
    if (!order.empty()) {
      for (int phase = 0; phase < 2; ++phase) {
        os << "\nClass distribution " << (phase == 0 ? "before" : "after") << " SMOTE\n";
        os << "  " << std::left << std::setw(12) << "corpus" << std::right;
        for (Grade g : kAllGrades) os << std::setw(18) << canonical_name(g);
        os << std::setw(10) << "total" << "\n";
        for (const auto& c : order) {
          const auto& d = phase == 0 ? table[c].first : table[c].second;
          os << "  " << std::left << std::setw(12) << c << std::right;
          for (Grade g : kAllGrades) os << std::setw(18) << d[g];
          os << std::setw(10) << d.total() << "\n";
        }
      }
    }
    for (const auto& n : notes) os << "  note: " << n << "\n";
  }

  os << "\nArtifacts\n";
  for (const auto& [k, v] : rec.artifacts) os << "  " << std::left << std::setw(22) << k << v << "\n";
  return os.str();
}

}  // namespace vrfuse::pipeline
