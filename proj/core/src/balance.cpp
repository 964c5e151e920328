#include "vrfuse/balance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "vrfuse/error.hpp"
#include "vrfuse/image.hpp"
#include "vrfuse/random.hpp"

namespace fs = std::filesystem;

namespace vrfuse::balance {

namespace {

double unit_max(IntensityUnit u) { return u == IntensityUnit::Unit ? 1.0 : 255.0; }

}  // namespace

TargetPolicy parse_target_policy(const std::string& text) {
  TargetPolicy policy;
  policy.kind = TargetPolicy::Kind::Explicit;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), '=', ' ');
    std::replace(line.begin(), line.end(), ':', ' ');
    std::istringstream ls(line);
    std::string name;
    std::int64_t count = 0;
    if (!(ls >> name)) continue;
    if (!(ls >> count) || count < 0) {
      throw ValidationError("targets line " + std::to_string(line_no) + ": expected '<grade> <count>'");
    }
    auto g = parse_grade(name);
    if (!g) throw ValidationError("targets line " + std::to_string(line_no) + ": unknown grade " + name);
    policy.targets[*g] = count;
  }
  return policy;
}

TargetPolicy load_target_policy(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot read target file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_target_policy(ss.str());
}

Targets compute_targets(const ClassDistribution& dist, const TargetPolicy& policy) {
  Targets out;
  if (policy.kind == TargetPolicy::Kind::Mean) {
    const std::int64_t mean_floor = dist.total() / static_cast<std::int64_t>(kNumGrades);
    for (Grade g : kAllGrades) out[g] = std::max(dist[g], mean_floor);
    return out;
  }
  for (Grade g : kAllGrades) {
    auto it = policy.targets.find(g);
    const std::int64_t t = it == policy.targets.end() ? dist[g] : it->second;
    if (t < dist[g]) {
      throw ValidationError("target " + std::to_string(t) + " for " + std::string(canonical_name(g)) +
                            " is below the current count " + std::to_string(dist[g]) +
                            " (oversampling only)");
    }
    out[g] = t;
  }
  return out;
}

std::vector<std::size_t> knn(std::span<const double> query, std::span<const FeatureVector> pool,
                             std::size_t k, std::optional<std::size_t> exclude) {
  const std::size_t available = pool.size() - (exclude && *exclude < pool.size() ? 1 : 0);
  if (k == 0 || available < k) {
    throw ValidationError("knn: pool of " + std::to_string(available) + " vectors is smaller than k=" +
                          std::to_string(k));
  }
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (exclude && *exclude == i) continue;
    const auto& v = pool[i].values;
    if (v.size() != query.size()) throw ValidationError("knn: dimension mismatch");
    double d = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double diff = v[j] - query[j];
      d += diff * diff;
    }
    dist.emplace_back(d, i);
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

FeatureVector smote_sample(const FeatureVector& x_i, const FeatureVector& x_zi, double delta) {
  if (x_i.values.size() != x_zi.values.size()) {
    throw ValidationError("smote_sample: dimension mismatch (" + std::to_string(x_i.values.size()) + " vs " +
                          std::to_string(x_zi.values.size()) + ")");
  }
  if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("smote_sample: delta outside [0, 1]");
  FeatureVector out;
  out.unit = x_i.unit;
  out.values.resize(x_i.values.size());
  const double hi = unit_max(x_i.unit);
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    const double v = x_i.values[j] + delta * (x_zi.values[j] - x_i.values[j]);
    out.values[j] = std::clamp(v, 0.0, hi);
  }
  return out;
}

std::vector<SyntheticSample> balance_class(std::span<const FeatureVector> members, std::int64_t target,
                                           const SmoteConfig& cfg, std::uint64_t stream) {
  const auto n = static_cast<std::int64_t>(members.size());
  if (target < n) {
    throw ValidationError("balance_class: target " + std::to_string(target) + " below class size " +
                          std::to_string(n));
  }
  if (target == n) return {};
  if (n <= static_cast<std::int64_t>(cfg.k)) {
    throw ValidationError("balance_class: class has " + std::to_string(n) + " members, need more than k=" +
                          std::to_string(cfg.k) + "; use a smaller k");
  }
  Rng rng = Rng::derive(cfg.seed, stream);
  std::vector<std::vector<std::size_t>> neighbors(members.size());
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(target - n));
  for (std::int64_t j = 0; j < target - n; ++j) {
    const auto base = static_cast<std::size_t>(j % n);
    auto& nb = neighbors[base];
    if (nb.empty()) nb = knn(members[base].values, members, cfg.k, base);
    const std::size_t pick = nb[rng.below(nb.size())];
    const double delta = rng.uniform(cfg.delta_min, cfg.delta_max);
    SyntheticSample s{smote_sample(members[base], members[pick], delta), base, pick, delta};
    out.push_back(std::move(s));
  }
  return out;
}

FeatureVector flatten(const cv::Mat& image, IntensityUnit unit) {
  if (image.depth() != CV_8U) throw ValidationError("flatten: expected an 8-bit image");
  cv::Mat cont = image.isContinuous() ? image : image.clone();
  FeatureVector v;
  v.unit = unit;
  const std::size_t n = cont.total() * static_cast<std::size_t>(cont.channels());
  v.values.resize(n);
  const double scale = unit == IntensityUnit::Unit ? 1.0 / 255.0 : 1.0;
  const auto* p = cont.ptr<std::uint8_t>();
  for (std::size_t i = 0; i < n; ++i) v.values[i] = p[i] * scale;
  return v;
}

cv::Mat to_image(const FeatureVector& v, const ImageShape& shape) {
  const auto expected = static_cast<std::size_t>(shape.height) * shape.width * shape.channels;
  if (v.values.size() != expected) {
    throw ValidationError("materialize: vector length " + std::to_string(v.values.size()) +
                          " does not match " + std::to_string(shape.height) + "x" + std::to_string(shape.width) +
                          "x" + std::to_string(shape.channels));
  }
  cv::Mat img(shape.height, shape.width, CV_8UC(shape.channels));
  auto* p = img.ptr<std::uint8_t>();
  const double scale = v.unit == IntensityUnit::Unit ? 255.0 : 1.0;
  for (std::size_t i = 0; i < expected; ++i) {
    p[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v.values[i] * scale), 0L, 255L));
  }
  return img;
}

dataset::ImageRecord materialize(const FeatureVector& v, const ImageShape& shape, const fs::path& file,
                                 Grade label) {
  write_image(file, to_image(v, shape));
  return {.path = file, .label = label, .source = dataset::Corpus::Synthetic};
}

FeatureSpace FeatureSpace::pixels(const ImageShape& shape) {
  FeatureSpace fs_;
  fs_.embed = [shape](const cv::Mat& img) {
    cv::Mat resized;
    if (img.rows != shape.height || img.cols != shape.width) {
      cv::resize(img, resized, cv::Size(shape.width, shape.height), 0, 0, cv::INTER_LINEAR);
    } else {
      resized = img;
    }
    return flatten(resized);
  };
  fs_.reconstruct = [shape](const FeatureVector& v) { return to_image(v, shape); };
  return fs_;
}

BalanceResult balance_manifest(const dataset::DatasetManifest& manifest, const SmoteConfig& cfg,
                               const std::map<dataset::Corpus, TargetPolicy>& policies, const fs::path& out_dir,
                               const ImageShape& shape) {
  BalanceResult result;
  result.manifest = manifest;
  const FeatureSpace space = FeatureSpace::pixels(shape);
  for (dataset::Corpus corpus : manifest.sources()) {
    if (corpus == dataset::Corpus::Synthetic) continue;
    const auto sub = manifest.from_source(corpus);
    CorpusBalance cb{corpus, sub.distribution(), {}};
    auto pit = policies.find(corpus);
    const TargetPolicy& policy = pit == policies.end() ? cfg.policy : pit->second;
    const Targets targets = compute_targets(cb.before, policy);
    for (Grade g : kAllGrades) {
      const std::int64_t have = cb.before[g];
      const std::int64_t want = targets.at(g);
      cb.after[g] = want;
      if (want == have) continue;
      std::vector<FeatureVector> members;
      for (std::size_t i = 0; i < sub.records.size(); ++i) {
        if (sub.records[i].label != g) continue;
        FeatureVector v = space.embed(read_color(sub.records[i].path));
        v.source_record = i;
        members.push_back(std::move(v));
      }
      const std::uint64_t stream = static_cast<std::uint64_t>(corpus) * 16 + index_of(g);
      const auto synthetic = balance_class(members, want, cfg, stream);
      const fs::path dir = out_dir / std::string(dataset::corpus_name(corpus)) / std::string(canonical_name(g));
      for (std::size_t j = 0; j < synthetic.size(); ++j) {
        std::ostringstream name;
        name << "smote_" << std::setw(6) << std::setfill('0') << j << ".png";
        fs::path file = dir / name.str();
        write_image(file, space.reconstruct(synthetic[j].vector));
        result.manifest.records.push_back({.path = file, .label = g, .source = dataset::Corpus::Synthetic});
      }
    }
    result.per_corpus.push_back(cb);
  }
  result.manifest.provenance += " | smote k=" + std::to_string(cfg.k) + " seed=" + std::to_string(cfg.seed);
  return result;
}

}  // namespace vrfuse::balance
