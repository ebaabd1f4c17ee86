#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/plot.hpp"
#include "centrifuge/train.hpp"

namespace centrifuge {

// ---------------------------------------------------------------------------
// Statistics

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("pearson: need at least 3 samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw std::invalid_argument("pearson: constant input");
  return sxy / std::sqrt(sxx * syy);
}

/// 1 if the predictions equal the true labels as a multiset, 0.5 if exactly
/// one true label is recovered, 0 otherwise.
inline double downstream_score(std::array<int, 2> pred, std::array<int, 2> truth) {
  int matched = 0;
  std::array<bool, 2> used{false, false};
  for (int t : truth)
    for (int k = 0; k < 2; ++k)
      if (!used[k] && pred[k] == t) {
        used[k] = true;
        ++matched;
        break;
      }
  return matched / 2.0;
}

// ---------------------------------------------------------------------------
// Reports

struct ExperimentReport {
  std::string name;
  nlohmann::json results = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::string config_digest;
  double runtime_seconds = 0;
  std::vector<std::string> notes;
  std::vector<std::pair<std::string, plot::Canvas>> figures;  // file stem, image
};

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
  j = {{"experiment", r.name},      {"results", r.results}, {"seeds", r.seeds}, {"config_digest", r.config_digest},
       {"runtime_seconds", r.runtime_seconds}, {"notes", r.notes}};
}

/// FNV-1a of the compact JSON dump, as 16 hex digits.
inline std::string config_digest(const nlohmann::json& j) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : j.dump()) h = (h ^ c) * 0x100000001B3ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline void flatten(const nlohmann::json& j, const std::string& prefix,
                    std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    out.emplace_back(prefix, j.is_string() ? j.get<std::string>() : j.dump());
  }
}

}  // namespace detail

/// <dir>/<name>.json, <name>.csv (condition,value) and one PNG per figure.
inline std::vector<fs::path> write_report(const ExperimentReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  const auto json_path = dir / (r.name + ".json");
  {
    std::ofstream o(json_path.string() + ".tmp");
    if (!o) throw IoError("cannot write " + json_path.string());
    o << nlohmann::json(r).dump(2) << '\n';
  }
  fs::rename(json_path.string() + ".tmp", json_path);
  written.push_back(json_path);

  const auto csv_path = dir / (r.name + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "condition,value\n";
  std::vector<std::pair<std::string, std::string>> flat;
  detail::flatten(r.results, "", flat);
  for (const auto& [k, v] : flat) csv << k << ',' << v << '\n';
  written.push_back(csv_path);

  for (const auto& [stem, fig] : r.figures) {
    const auto p = dir / (stem + ".png");
    fig.save(p);
    written.push_back(p);
  }
  return written;
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape-label classifier for the downstream task: a shallow encoder, global
// average pooling and a linear layer.

struct ClassifierConfig {
  int base_channels = 8;
  int num_classes = kNumClasses;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"base_channels", c.base_channels}, {"num_classes", c.num_classes}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  ClassifierConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.seed = j.value("seed", d.seed);
}

class ShapeClassifier {
 public:
  explicit ShapeClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    if (cfg_.num_classes < 2 || cfg_.base_channels < 1) throw std::invalid_argument("ShapeClassifier: bad config");
    Rng rng(cfg_.seed);
    encoder_ = nn::Encoder("classifier.enc", 3, EncoderDepth::shallow, cfg_.base_channels, true, rng);
    fc_ = nn::Linear("classifier.fc", encoder_.width(encoder_.levels() - 1), cfg_.num_classes, rng);
  }
  ShapeClassifier(const ShapeClassifier&) = delete;
  ShapeClassifier& operator=(const ShapeClassifier&) = delete;

  const ClassifierConfig& config() const { return cfg_; }

  /// N x 3 x T x H x W -> N x classes. In training mode `x` must outlive backward().
  TensorF logits(const TensorF& x, bool training) {
    input_ = &x;
    const auto feats = encoder_.forward(x, training);
    deepest_ = feats.back();
    pooled_ = nn::global_avg_pool(*deepest_);
    TensorF y = fc_.forward(pooled_);
    if (!training) release();
    return y;
  }

  void backward(const TensorF& dlogits) {
    if (!input_) throw std::logic_error("ShapeClassifier::backward without a training forward");
    TensorF dpooled = fc_.backward(pooled_, dlogits);
    std::vector<TensorF> dfeat(encoder_.levels());
    dfeat.back() = nn::global_avg_pool_backward(deepest_->shape(), dpooled);
    encoder_.backward(*input_, std::move(dfeat), false);
  }

  /// Hash of the ReLU activation pattern of the last forward.
  std::uint64_t activation_digest() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    encoder_.digest(h);
    return h;
  }

  void release() {
    encoder_.release();
    input_ = nullptr;
    deepest_ = nullptr;
  }

  /// Softmax class probabilities per clip (eval mode).
  std::vector<std::vector<double>> probabilities(std::span<const VideoClip> clips) {
    const TensorF y = logits(clips_to_tensor(clips), false);
    const int K = cfg_.num_classes;
    std::vector<std::vector<double>> out(clips.size(), std::vector<double>(K));
    for (std::size_t n = 0; n < clips.size(); ++n) {
      double mx = -INFINITY, s = 0;
      for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(y[n * K + k]));
      for (int k = 0; k < K; ++k) s += out[n][k] = std::exp(y[n * K + k] - mx);
      for (auto& p : out[n]) p /= s;
    }
    return out;
  }

  /// Class indices ordered by decreasing probability (ties: lower index first).
  std::vector<int> top_k(const VideoClip& clip, int k) {
    const auto p = probabilities(std::span<const VideoClip>(&clip, 1)).front();
    std::vector<int> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p[a] > p[b]; });
    idx.resize(std::min<std::size_t>(static_cast<std::size_t>(k), idx.size()));
    return idx;
  }
  int predict(const VideoClip& clip) { return top_k(clip, 1).front(); }

  std::vector<nn::Param*> parameters() {
    std::vector<nn::Param*> p;
    encoder_.collect(p);
    fc_.collect(p);
    return p;
  }
  std::vector<nn::Buffer*> buffers() {
    std::vector<nn::Buffer*> b;
    encoder_.collect_buffers(b);
    return b;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

 private:
  ClassifierConfig cfg_;
  nn::Encoder encoder_;
  nn::Linear fc_;
  const TensorF* input_ = nullptr;
  const TensorF* deepest_ = nullptr;
  TensorF pooled_;
};

/// Mean softmax cross-entropy over the batch; fills its gradient.
inline double softmax_cross_entropy(const TensorF& logits, std::span<const int> labels, TensorF& dlogits) {
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N) throw std::invalid_argument("softmax_cross_entropy: label count");
  dlogits.reset(logits.shape());
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double mx = -INFINITY, s = 0;
    for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits[n * K + k]));
    for (int k = 0; k < K; ++k) s += std::exp(logits[n * K + k] - mx);
    loss += std::log(s) + mx - logits[n * K + labels[n]];
    for (int k = 0; k < K; ++k) {
      const double p = std::exp(logits[n * K + k] - mx) / s;
      dlogits[n * K + k] = static_cast<float>((p - (k == labels[n])) / N);
    }
  }
  return loss / N;
}

struct ClassifierTrainConfig {
  std::int64_t steps = 600;
  int batch_size = 8;
  double lr = 0.05;
  double momentum = 0.9;
  int frames = 16, height = 64, width = 64;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const ClassifierTrainConfig& c) {
  j = {{"steps", c.steps},   {"batch_size", c.batch_size}, {"lr", c.lr},       {"momentum", c.momentum},
       {"frames", c.frames}, {"height", c.height},         {"width", c.width}, {"seed", c.seed}};
}

/// SGD on augmented clips of `corpus`; the learning rate drops tenfold for the last quarter.
inline void train_classifier(ShapeClassifier& clf, const Corpus& corpus, const ClassifierTrainConfig& cfg,
                             std::ostream* progress = nullptr) {
  Sgd sgd(clf.parameters(), cfg.momentum);
  std::vector<VideoClip> clips;
  std::vector<int> labels;
  TensorF dlogits;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Rng rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(step)));
    clips.clear();
    labels.clear();
    for (int k = 0; k < cfg.batch_size; ++k) {
      const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(corpus.size()) - 1));
      clips.push_back(augment(corpus.clip(i), cfg.frames, cfg.height, cfg.width, rng()));
      labels.push_back(corpus.label(i));
    }
    const TensorF x = clips_to_tensor(clips);
    const TensorF y = clf.logits(x, true);
    const double loss = softmax_cross_entropy(y, labels, dlogits);
    if (!std::isfinite(loss)) throw NonFiniteLoss("train_classifier: non-finite loss");
    clf.zero_grad();
    clf.backward(dlogits);
    clf.release();
    sgd.step(step < cfg.steps * 3 / 4 ? cfg.lr : cfg.lr / 10);
    if (progress && step % 100 == 0) *progress << "classifier step " << step << " loss " << loss << std::endl;
  }
}

/// Top-1 accuracy on clips `first..first+count` of `corpus` (augmentation with fixed seeds).
inline double classifier_accuracy(ShapeClassifier& clf, const Corpus& corpus, const ClassifierTrainConfig& cfg,
                                  std::size_t count) {
  count = std::min(count, corpus.size());
  if (count == 0) throw std::invalid_argument("classifier_accuracy: empty corpus");
  int correct = 0;
  for (std::size_t i = 0; i < count; ++i)
    correct += clf.predict(augment(corpus.clip(i), cfg.frames, cfg.height, cfg.width, sub_seed(cfg.seed ^ 0xACu, i))) ==
               corpus.label(i);
  return static_cast<double>(correct) / count;
}

inline CheckpointData classifier_checkpoint(ShapeClassifier& clf) {
  CheckpointData ck;
  ck.meta["classifier"] = clf.config();
  for (auto* p : clf.parameters()) ck.tensors[p->name] = p->value;
  for (auto* b : clf.buffers()) ck.tensors[b->name] = b->value;
  return ck;
}

inline std::unique_ptr<ShapeClassifier> classifier_from_checkpoint(const CheckpointData& ck) {
  if (!ck.meta.contains("classifier")) throw IoError("checkpoint does not hold a classifier");
  auto clf = std::make_unique<ShapeClassifier>(ck.meta["classifier"].get<ClassifierConfig>());
  auto take = [&](const std::string& name, TensorF& dst) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end() || !it->second.same_shape(dst)) throw IoError("classifier checkpoint lacks " + name);
    dst = it->second;
  };
  for (auto* p : clf->parameters()) take(p->name, p->value);
  for (auto* b : clf->buffers()) take(b->name, b->value);
  return clf;
}

// ---------------------------------------------------------------------------
// Training recipes with an on-disk cache keyed by the full configuration.

struct Recipe {
  ModelConfig model;
  TrainConfig train;
  ProceduralCorpusConfig train_corpus;
  ProceduralCorpusConfig val_corpus;
};

inline void to_json(nlohmann::json& j, const Recipe& r) {
  j = {{"model", r.model}, {"train", r.train}, {"train_corpus", r.train_corpus}, {"val_corpus", r.val_corpus}};
}

/// Corpora matched to the crop of `train.stream`; validation clips are held out.
inline Recipe make_recipe(const ModelConfig& model, const TrainConfig& train, int train_clips = 600,
                          int val_clips = 100) {
  const auto& s = train.stream;
  return {model, train, corpus_for_crop(s.frames, s.height, s.width, train_clips, 11),
          corpus_for_crop(s.frames, s.height, s.width, val_clips, 12)};
}

inline std::string recipe_digest(const Recipe& r) { return config_digest(nlohmann::json(r)); }

/// The validation stream of a recipe, optionally with a different pair mode.
inline PairStream recipe_val_stream(const Recipe& r, std::optional<PairMode> mode = std::nullopt,
                                    bool same_class = false) {
  auto cfg = r.train.stream;
  if (mode) cfg.mode = *mode;
  cfg.same_class = same_class;
  return PairStream(std::make_shared<ProceduralCorpus>(r.val_corpus), cfg, r.train.val_seed);
}

/// Train `r` or load it from `<cache_dir>/model-<digest>.bin`.
inline std::unique_ptr<SeparationModel> trained_model(const Recipe& r, const std::optional<fs::path>& cache_dir,
                                                      std::ostream* progress = nullptr) {
  auto model = build_model(r.model);
  const fs::path file = cache_dir ? *cache_dir / ("model-" + recipe_digest(r) + ".bin") : fs::path();
  if (cache_dir && fs::exists(file)) {
    restore_model(*model, read_checkpoint(file));
    return model;
  }
  auto train_corpus = std::make_shared<ProceduralCorpus>(r.train_corpus);
  PairStream train_stream(train_corpus, r.train.stream, r.train.data_seed);
  PairStream val_stream = recipe_val_stream(r);
  TrainOptions opt;
  opt.progress = progress;
  opt.progress_every = 250;
  auto result = train(*model, train_stream, &val_stream, r.train, opt);
  if (cache_dir) {
    result.checkpoint.meta["recipe"] = r;
    write_checkpoint(file, result.checkpoint);
  }
  return model;
}

/// Recipe variant for seed `s`: model initialization and training data both change.
inline Recipe with_seed(Recipe r, std::uint64_t s) {
  r.model.seed = s;
  r.train.data_seed = 1000 + s;
  return r;
}

// ---------------------------------------------------------------------------
// Baselines

/// Every layer is a copy of the blend.
inline Separator identity_separator(int n_layers = 2) {
  return [n_layers](std::span<const BlendedSample> batch) {
    std::vector<LayerSet> out;
    for (const auto& s : batch) out.push_back(stack_layers(std::vector<VideoClip>(n_layers, s.blended)));
    return out;
  };
}

/// Returns the true sources (test stub and upper bound).
inline Separator oracle_separator() {
  return [](std::span<const BlendedSample> batch) {
    std::vector<LayerSet> out;
    for (const auto& s : batch) out.push_back(stack_layers(std::vector<VideoClip>{s.v1, s.v2}));
    return out;
  };
}

inline double baseline_identity(const PairStream& stream, int num_samples) {
  return validate(identity_separator(), stream, num_samples).total;
}

inline double baseline_untrained(const ModelConfig& cfg, const PairStream& stream, int num_samples) {
  auto model = build_model(cfg);
  return validate(*model, stream, num_samples).total;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int val_samples = 64;
  std::optional<fs::path> cache_dir;
  std::ostream* progress = nullptr;
};

namespace detail {

inline nlohmann::json seed_summary(const std::vector<double>& v) { return {{"per_seed", v}, {"median", median(v)}}; }

inline std::vector<double> run_seeds(const Recipe& base, const AblationOptions& opt) {
  std::vector<double> losses;
  for (auto s : opt.seeds) {
    const Recipe r = with_seed(base, s);
    auto m = trained_model(r, opt.cache_dir, opt.progress);
    losses.push_back(validate(*m, recipe_val_stream(r), opt.val_samples).total);
  }
  return losses;
}

}  // namespace detail

/// Validation loss per number of output layers, predictor-only and (optionally) with the corrector.
inline ExperimentReport ablation_layer_count(const std::vector<int>& ns, const Recipe& base,
                                             const AblationOptions& opt, bool with_corrector = true) {
  detail::Stopwatch sw;
  ExperimentReport rep;
  rep.name = "layer_count";
  rep.seeds = opt.seeds;
  rep.config_digest = recipe_digest(base);
  std::vector<std::string> labels;
  std::vector<double> medians;
  for (bool corr : with_corrector ? std::vector<bool>{false, true} : std::vector<bool>{false}) {
    const std::string arm = corr ? "corrector" : "predictor";
    for (int n : ns) {
      Recipe r = base;
      r.model.n_layers = n;
      r.model.use_corrector = corr;
      const auto losses = detail::run_seeds(r, opt);
      rep.results[arm]["n=" + std::to_string(n)] = detail::seed_summary(losses);
      labels.push_back(std::string(corr ? "c" : "p") + " n=" + std::to_string(n));
      medians.push_back(median(losses));
    }
  }
  rep.figures.emplace_back("layer_count", plot::bar_chart("val loss by n layers", labels, medians));
  rep.runtime_seconds = sw.seconds();
  return rep;
}

inline ExperimentReport ablation_depth(const std::vector<EncoderDepth>& depths, const Recipe& base,
                                       const AblationOptions& opt) {
  detail::Stopwatch sw;
  ExperimentReport rep;
  rep.name = "depth";
  rep.seeds = opt.seeds;
  rep.config_digest = recipe_digest(base);
  std::vector<std::string> labels;
  std::vector<double> medians;
  for (auto d : depths) {
    Recipe r = base;
    r.model.encoder_depth = d;
    const std::string name = nlohmann::json(d).get<std::string>();
    const auto losses = detail::run_seeds(r, opt);
    rep.results[name] = detail::seed_summary(losses);
    rep.results[name]["parameters"] = build_model(r.model)->parameter_count();
    rep.results[name]["conv_layers"] = nn::encoder_conv_layers(d);
    labels.push_back(name);
    medians.push_back(median(losses));
  }
  rep.figures.emplace_back("depth", plot::bar_chart("val loss by encoder depth", labels, medians));
  rep.runtime_seconds = sw.seconds();
  return rep;
}

// ---------------------------------------------------------------------------
// Probes on trained models

/// Blends each clip with each solid color at 0.5. Reports the pair loss and the
/// error of the layer assigned to the color.
inline ExperimentReport experiment_color(const Separator& separate, const std::vector<VideoClip>& clips,
                                         const std::vector<std::string>& colors) {
  if (clips.empty()) throw std::invalid_argument("experiment_color: no clips");
  detail::Stopwatch sw;
  ExperimentReport rep;
  rep.name = "color";
  std::vector<double> losses;
  std::vector<plot::Color> bar_colors;
  for (const auto& name : colors) {
    const Rgb rgb = color_by_name(name);
    std::vector<BlendedSample> batch;
    for (const auto& c : clips) {
      BlendedSample s;
      s.v1 = c;
      s.v2 = make_solid_color(rgb, c.frames, c.height, c.width);
      s.v2.fps = c.fps;
      s.alpha = 0.5;
      s.blended = blend(s.v1, s.v2, 0.5);
      s.label2 = -1;
      batch.push_back(std::move(s));
    }
    double loss = 0, color_err = 0;
    for (std::size_t k = 0; k < batch.size(); k += 8) {
      const std::span<const BlendedSample> chunk(batch.data() + k, std::min<std::size_t>(8, batch.size() - k));
      const auto layers = separate(chunk);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const auto r = pit_loss(chunk[i].v1, chunk[i].v2, layers[i]);
        loss += r.total;
        color_err += r.l2;
      }
    }
    loss /= batch.size();
    color_err /= batch.size();
    rep.results[name] = {{"loss", loss}, {"color_layer_error", color_err}};
    losses.push_back(loss);
    bar_colors.push_back({static_cast<std::uint8_t>(rgb[0] * 200 + 30), static_cast<std::uint8_t>(rgb[1] * 200 + 30),
                          static_cast<std::uint8_t>(rgb[2] * 200 + 30)});
  }
  rep.figures.emplace_back("color", plot::bar_chart("loss vs solid color", colors, losses, bar_colors));
  rep.runtime_seconds = sw.seconds();
  return rep;
}

struct FrozenCell {
  double loss = 0;
  double diversity = 0;
};

/// Rows: models (normal-trained, frozen-trained); columns: test pairs
/// (2 frozen, 2 normal, 1 frozen + 1 normal).
inline ExperimentReport experiment_frozen(SeparationModel& normal_model, SeparationModel& frozen_model,
                                          const Recipe& recipe, int num_samples) {
  detail::Stopwatch sw;
  ExperimentReport rep;
  rep.name = "frozen";
  rep.config_digest = recipe_digest(recipe);
  const std::vector<std::pair<std::string, PairMode>> cols{
      {"2 frozen", PairMode::frozen}, {"2 normal", PairMode::normal}, {"1 frozen 1 normal", PairMode::mixed}};
  const std::vector<std::pair<std::string, SeparationModel*>> rows{{"normal-trained", &normal_model},
                                                                   {"frozen-trained", &frozen_model}};
  std::vector<std::vector<double>> loss(2), div(2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& [cname, mode] : cols) {
      const auto r = validate(*rows[i].second, recipe_val_stream(recipe, mode), num_samples);
      rep.results[rows[i].first][cname] = {{"loss", r.total}, {"diversity", r.diversity}};
      loss[i].push_back(r.total);
      div[i].push_back(r.diversity);
    }
  std::vector<std::string> row_names{rows[0].first, rows[1].first}, col_names;
  for (const auto& c : cols) col_names.push_back(c.first);
  rep.figures.emplace_back("frozen_loss", plot::heat_table("loss: train rows / test columns", row_names, col_names, loss));
  rep.figures.emplace_back("frozen_diversity", plot::heat_table("diversity score", row_names, col_names, div));
  rep.runtime_seconds = sw.seconds();
  return rep;
}

struct DownstreamScores {
  double mixed = 0;     // (a) top-2 on the blend
  double unmixed = 0;   // (b) top-1 on each selected layer
  double original = 0;  // (c) top-1 on each source clip
};

/// Percent scores under the three conditions.
inline DownstreamScores downstream_scores(const Separator& separate, ShapeClassifier& clf, const PairStream& stream,
                                          int num_samples) {
  if (num_samples < 1) throw std::invalid_argument("downstream: empty stream");
  DownstreamScores s;
  std::vector<BlendedSample> batch;
  auto flush = [&] {
    const auto layers = separate(batch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto& b = batch[k];
      const std::array<int, 2> truth{b.label1, b.label2};
      const auto top2 = clf.top_k(b.blended, 2);
      s.mixed += downstream_score({top2[0], top2[1]}, truth);
      const auto sel = select_two(layers[k]);
      s.unmixed += downstream_score({clf.predict(clamp01(extract_layer(layers[k], sel.i))),
                                     clf.predict(clamp01(extract_layer(layers[k], sel.j)))},
                                    truth);
      s.original += downstream_score({clf.predict(b.v1), clf.predict(b.v2)}, truth);
    }
    batch.clear();
  };
  for (int k = 0; k < num_samples; ++k) {
    batch.push_back(stream.sample(static_cast<std::uint64_t>(k)));
    if (batch.size() == 8) flush();
  }
  if (!batch.empty()) flush();
  s.mixed *= 100.0 / num_samples;
  s.unmixed *= 100.0 / num_samples;
  s.original *= 100.0 / num_samples;
  return s;
}

inline ExperimentReport experiment_downstream(const Separator& separate, ShapeClassifier& clf,
                                              const PairStream& stream, int num_samples) {
  detail::Stopwatch sw;
  const auto s = downstream_scores(separate, clf, stream, num_samples);
  ExperimentReport rep;
  rep.name = "downstream";
  rep.results = {{"a_mixed", s.mixed}, {"b_unmixed", s.unmixed}, {"c_original", s.original},
                 {"ordering_holds", s.mixed < s.unmixed && s.unmixed <= s.original}};
  rep.figures.emplace_back("downstream", plot::bar_chart("downstream score (%)", {"a mixed", "b unmixed", "c original"},
                                                         {s.mixed, s.unmixed, s.original}));
  rep.runtime_seconds = sw.seconds();
  return rep;
}

struct CorrelationResult {
  double r_low = 0, r_high = 0;
  std::vector<double> losses, low_distance, high_distance;
};

/// Pearson correlation between per-pair loss and the distance between the two
/// sources' pooled encoder features (stem and deepest level).
inline CorrelationResult feature_loss_correlation(SeparationModel& model, const PairStream& stream, int num_samples) {
  if (num_samples < 3) throw std::invalid_argument("experiment_correlation: need at least 3 samples");
  CorrelationResult c;
  auto distance = [](const TensorF& a, const TensorF& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  const auto sep = model_separator(model);
  for (int k = 0; k < num_samples; ++k) {
    const auto b = stream.sample(static_cast<std::uint64_t>(k));
    const auto layers = sep(std::span<const BlendedSample>(&b, 1));
    c.losses.push_back(pit_loss(b.v1, b.v2, layers.front()).total);
    const auto f = model.features(clips_to_tensor(std::vector<VideoClip>{b.v1, b.v2}));
    const int C0 = f.first.dim(1), C1 = f.second.dim(1);
    TensorF a0({1, C0}), b0({1, C0}), a1({1, C1}), b1({1, C1});
    std::copy(f.first.data(), f.first.data() + C0, a0.data());
    std::copy(f.first.data() + C0, f.first.data() + 2 * C0, b0.data());
    std::copy(f.second.data(), f.second.data() + C1, a1.data());
    std::copy(f.second.data() + C1, f.second.data() + 2 * C1, b1.data());
    c.low_distance.push_back(distance(a0, b0));
    c.high_distance.push_back(distance(a1, b1));
  }
  c.r_low = pearson(c.losses, c.low_distance);
  c.r_high = pearson(c.losses, c.high_distance);
  return c;
}

inline ExperimentReport experiment_correlation(SeparationModel& model, const PairStream& stream, int num_samples) {
  detail::Stopwatch sw;
  const auto c = feature_loss_correlation(model, stream, num_samples);
  ExperimentReport rep;
  rep.name = "correlation";
  rep.results = {{"r_low", c.r_low}, {"r_high", c.r_high}, {"samples", num_samples}};
  rep.notes.push_back("features are the separator's own encoder (stem and deepest level), globally mean-pooled");
  rep.runtime_seconds = sw.seconds();
  return rep;
}

/// Loss on pairs whose sources share a label versus unrestricted pairs.
inline ExperimentReport experiment_same_class(SeparationModel& model, const Recipe& recipe, int num_samples) {
  detail::Stopwatch sw;
  ExperimentReport rep;
  rep.name = "same_class";
  rep.config_digest = recipe_digest(recipe);
  const double same = validate(model, recipe_val_stream(recipe, std::nullopt, true), num_samples).total;
  const double any = validate(model, recipe_val_stream(recipe), num_samples).total;
  rep.results = {{"same_class", same}, {"any_class", any}, {"same_class_harder", same > any}};
  rep.runtime_seconds = sw.seconds();
  return rep;
}

}  // namespace centrifuge
