#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/checkpoint.hpp"
#include "centrifuge/datagen.hpp"
#include "centrifuge/losses.hpp"
#include "centrifuge/model.hpp"

namespace centrifuge {

struct LrMilestone {
  std::int64_t step = 0;
  double lr = 0;
  friend bool operator==(const LrMilestone&, const LrMilestone&) = default;
};

struct TrainConfig {
  std::int64_t total_steps = 3000;
  int batch_size = 8;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<LrMilestone> milestones{{1250, 0.05}, {1875, 0.025}, {2500, 0.01}};
  PairStreamConfig stream;  // clip geometry and alpha policy
  std::uint64_t data_seed = 1;
  std::uint64_t val_seed = 2;
  int val_samples = 32;
  std::int64_t val_every = 500;  // 0: only at the end
  std::int64_t checkpoint_every = 0;
  bool consistency = false;
  double consistency_weight = 0.1;
  bool diversity_penalty = false;
  double diversity_penalty_weight = 0.01;
};

inline void to_json(nlohmann::json& j, const LrMilestone& m) { j = {{"step", m.step}, {"lr", m.lr}}; }
inline void from_json(const nlohmann::json& j, LrMilestone& m) {
  m.step = j.at("step").get<std::int64_t>();
  m.lr = j.at("lr").get<double>();
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"base_lr", c.base_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"milestones", c.milestones},
       {"stream", c.stream},
       {"data_seed", c.data_seed},
       {"val_seed", c.val_seed},
       {"val_samples", c.val_samples},
       {"val_every", c.val_every},
       {"checkpoint_every", c.checkpoint_every},
       {"consistency", c.consistency},
       {"consistency_weight", c.consistency_weight},
       {"diversity_penalty", c.diversity_penalty},
       {"diversity_penalty_weight", c.diversity_penalty_weight}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.total_steps = j.value("total_steps", d.total_steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.milestones = j.value("milestones", d.milestones);
  c.stream = j.value("stream", d.stream);
  c.data_seed = j.value("data_seed", d.data_seed);
  c.val_seed = j.value("val_seed", d.val_seed);
  c.val_samples = j.value("val_samples", d.val_samples);
  c.val_every = j.value("val_every", d.val_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.consistency = j.value("consistency", d.consistency);
  c.consistency_weight = j.value("consistency_weight", d.consistency_weight);
  c.diversity_penalty = j.value("diversity_penalty", d.diversity_penalty);
  c.diversity_penalty_weight = j.value("diversity_penalty_weight", d.diversity_penalty_weight);
}

inline void validate(const TrainConfig& c) {
  if (c.total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(c.base_lr > 0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
  if (c.momentum < 0 || c.momentum >= 1) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
  if (c.weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  double prev_lr = c.base_lr;
  std::int64_t prev_step = 0;
  for (std::size_t k = 0; k < c.milestones.size(); ++k) {
    const auto& m = c.milestones[k];
    if (m.step <= 0 || (k > 0 && m.step <= prev_step))
      throw std::invalid_argument("TrainConfig: milestone steps must be positive and strictly increasing");
    if (!(m.lr < prev_lr) || !(m.lr > 0))
      throw std::invalid_argument("TrainConfig: milestone learning rates must be positive and strictly decreasing");
    prev_step = m.step;
    prev_lr = m.lr;
  }
  if (c.val_samples < 1) throw std::invalid_argument("TrainConfig: val_samples must be >= 1");
}

/// Desk-scale default: 16x64x64 clips, batch 8, 3000 steps.
inline TrainConfig desk_config() { return TrainConfig{}; }

/// Full-length schedule: lr 0.1, momentum 0.99, batch 10, drops at 100k/150k/200k.
inline TrainConfig full_scale_config() {
  TrainConfig c;
  c.total_steps = 240000;
  c.batch_size = 10;
  c.base_lr = 0.1;
  c.momentum = 0.99;
  c.milestones = {{100000, 0.05}, {150000, 0.025}, {200000, 0.01}};
  c.stream.frames = 32;
  c.stream.height = 112;
  c.stream.width = 112;
  return c;
}

/// Piecewise-constant schedule; a milestone's rate applies from its step on.
inline double lr_at(std::int64_t step, const TrainConfig& c) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  double lr = c.base_lr;
  for (const auto& m : c.milestones)
    if (step >= m.step) lr = m.lr;
  return lr;
}

// ---------------------------------------------------------------------------

/// SGD with heavy-ball momentum: v = mu v + g (+ wd p); p -= lr v.
class Sgd {
 public:
  Sgd(std::vector<nn::Param*> params, double momentum, double weight_decay = 0.0)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto* p : params_) velocity_.emplace_back(p->value.shape());
  }

  void step(double lr) {
    const auto mu = static_cast<float>(momentum_), wd = static_cast<float>(weight_decay_), a = static_cast<float>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        const float g = p.grad[i] + wd * p.value[i];
        v[i] = mu * v[i] + g;
        p.value[i] -= a * v[i];
      }
    }
  }

  void store(CheckpointData& ck) const {
    for (std::size_t k = 0; k < params_.size(); ++k) ck.tensors[params_[k]->name + ".velocity"] = velocity_[k];
  }
  void restore(const CheckpointData& ck) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto it = ck.tensors.find(params_[k]->name + ".velocity");
      if (it == ck.tensors.end()) throw IoError("checkpoint lacks optimizer state for " + params_[k]->name);
      if (!it->second.same_shape(velocity_[k])) throw IoError("optimizer state shape mismatch for " + params_[k]->name);
      velocity_[k] = it->second;
    }
  }

  const std::vector<TensorF>& velocity() const { return velocity_; }

 private:
  std::vector<nn::Param*> params_;
  std::vector<TensorF> velocity_;
  double momentum_, weight_decay_;
};

// ---------------------------------------------------------------------------

/// Maps a batch of blended samples to one layer set each.
using Separator = std::function<std::vector<LayerSet>(std::span<const BlendedSample>)>;

/// Eval-mode batched separation with `model`.
inline Separator model_separator(SeparationModel& model) {
  return [&model](std::span<const BlendedSample> batch) {
    std::vector<VideoClip> clips;
    clips.reserve(batch.size());
    for (const auto& s : batch) clips.push_back(s.blended);
    const auto out = model.forward(clips_to_tensor(clips), false);
    std::vector<LayerSet> layers;
    for (int n = 0; n < static_cast<int>(batch.size()); ++n)
      layers.push_back(tensor_sample_to_video(out.final_layers, n, batch[n].blended.fps));
    return layers;
  };
}

/// Mean loss report over samples 0..num_samples-1 of `stream`.
inline LossReport validate(const Separator& separate, const PairStream& stream, int num_samples, int batch_size = 8) {
  if (num_samples < 1) throw std::invalid_argument("validate: empty stream");
  LossReport mean;
  std::vector<BlendedSample> batch;
  auto flush = [&] {
    const auto layers = separate(batch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto r = pit_loss(batch[k].v1, batch[k].v2, layers[k]);
      mean.total += r.total;
      mean.l1 += r.l1;
      mean.l2 += r.l2;
      mean.diversity += r.diversity;
    }
    batch.clear();
  };
  for (int k = 0; k < num_samples; ++k) {
    batch.push_back(stream.sample(static_cast<std::uint64_t>(k)));
    if (static_cast<int>(batch.size()) == batch_size) flush();
  }
  if (!batch.empty()) flush();
  mean.total /= num_samples;
  mean.l1 /= num_samples;
  mean.l2 /= num_samples;
  mean.diversity /= num_samples;
  return mean;
}

inline LossReport validate(SeparationModel& model, const PairStream& stream, int num_samples, int batch_size = 8) {
  return validate(model_separator(model), stream, num_samples, batch_size);
}

// ---------------------------------------------------------------------------

struct TrainLogRow {
  std::int64_t step = 0;
  double lr = 0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  void write_csv(const fs::path& path) const {
    std::ofstream o(path);
    if (!o) throw IoError("cannot write " + path.string());
    o << "step,lr,train_loss,val_loss\n" << std::setprecision(9);
    for (const auto& r : rows) {
      o << r.step << ',' << r.lr << ',';
      if (r.train_loss) o << *r.train_loss;
      o << ',';
      if (r.val_loss) o << *r.val_loss;
      o << '\n';
    }
  }

  std::optional<double> last_val() const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it)
      if (it->val_loss) return it->val_loss;
    return std::nullopt;
  }
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::optional<fs::path> out_dir;           // checkpoint.bin, train_log.csv, config.json
  std::optional<CheckpointData> resume;      // continue from this state
  std::ostream* progress = nullptr;          // one line per logged step
  std::int64_t progress_every = 100;
};

struct TrainResult {
  CheckpointData checkpoint;
  TrainLog log;
  std::optional<double> final_val_loss;
};

/// Batched training loss and its gradient w.r.t. the model's final layers.
/// Returns the mean per-sample objective.
inline double batch_objective(const std::vector<BlendedSample>& batch, const TensorF& final_layers,
                              const TrainConfig& cfg, TensorF& d_final) {
  d_final.reset(final_layers.shape());
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  LayerSet grad;
  for (int n = 0; n < static_cast<int>(batch.size()); ++n) {
    const auto& s = batch[n];
    const LayerSet layers = tensor_sample_to_video(final_layers, n, s.blended.fps);
    const auto r = pit_loss(s.v1, s.v2, layers, false);
    double total = r.total;
    grad = LayerSet(layers.frames, layers.height, layers.width, layers.channels);
    pit_loss_grad(s.v1, s.v2, layers, r.assignment, scale, grad);
    if (cfg.consistency) {
      total += cfg.consistency_weight * consistency_loss(s.blended, layers, r.assignment, s.alpha);
      consistency_loss_grad(s.blended, layers, r.assignment, s.alpha, scale * cfg.consistency_weight, grad);
    }
    if (cfg.diversity_penalty) {
      total += cfg.diversity_penalty_weight * diversity_penalty(layers, r.assignment);
      diversity_penalty_grad(layers, r.assignment, scale * cfg.diversity_penalty_weight, grad);
    }
    loss += total * scale;
    video_to_tensor_sample(grad, d_final, n);
  }
  return loss;
}

inline nlohmann::json checkpoint_meta(SeparationModel& model, const TrainConfig& cfg) {
  return {{"model", model.config()}, {"train", cfg}};
}

/// SGD training. Sample k of step s is `train_stream.sample(s * batch + k)`, so a
/// resumed run sees exactly the data of an unbroken one.
inline TrainResult train(SeparationModel& model, const PairStream& train_stream, const PairStream* val_stream,
                         const TrainConfig& cfg, const TrainOptions& opt = {}) {
  validate(cfg);
  const auto& sc = train_stream.config();
  if (sc.frames != cfg.stream.frames || sc.height != cfg.stream.height || sc.width != cfg.stream.width)
    throw std::invalid_argument("train: stream geometry does not match the training config");
  const auto m = model.minimum_geometry();
  if (sc.frames < m[0] || sc.height < m[1] || sc.width < m[2])
    throw std::invalid_argument("train: clip geometry below the model's minimum");

  Sgd sgd(model.parameters(), cfg.momentum, cfg.weight_decay);
  std::int64_t start = 0;
  if (opt.resume) {
    restore_model(model, *opt.resume);
    sgd.restore(*opt.resume);
    start = opt.resume->step;
  }

  TrainResult result;
  auto snapshot = [&](std::int64_t step) {
    CheckpointData ck;
    ck.meta = checkpoint_meta(model, cfg);
    ck.step = step;
    store_model(model, ck);
    sgd.store(ck);
    return ck;
  };
  auto save = [&](const CheckpointData& ck, const std::string& name) {
    if (!opt.out_dir) return;
    fs::create_directories(*opt.out_dir);
    write_checkpoint(*opt.out_dir / name, ck);
  };
  if (opt.out_dir) {
    fs::create_directories(*opt.out_dir);
    std::ofstream(*opt.out_dir / "config.json") << nlohmann::json(checkpoint_meta(model, cfg)).dump(2) << '\n';
  }
  auto run_validation = [&]() -> std::optional<double> {
    if (!val_stream) return std::nullopt;
    return validate(model, *val_stream, cfg.val_samples, cfg.batch_size).total;
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<BlendedSample> batch;
  std::vector<VideoClip> inputs;
  TensorF d_final;
  for (std::int64_t step = start; step < cfg.total_steps; ++step) {
    TrainLogRow row;
    row.step = step;
    row.lr = lr_at(step, cfg);
    if (cfg.val_every > 0 && step % cfg.val_every == 0) row.val_loss = run_validation();

    batch.clear();
    inputs.clear();
    for (int k = 0; k < cfg.batch_size; ++k) {
      batch.push_back(train_stream.sample(static_cast<std::uint64_t>(step) * cfg.batch_size + k));
      inputs.push_back(batch.back().blended);
    }
    const TensorF x = clips_to_tensor(inputs);
    const auto out = model.forward(x, true);
    const double loss = batch_objective(batch, out.final_layers, cfg, d_final);
    row.train_loss = loss;
    if (!std::isfinite(loss)) {
      save(snapshot(step), "diagnostic.bin");
      model.release();
      throw NonFiniteLoss("train: non-finite loss at step " + std::to_string(step) +
                          (opt.out_dir ? " (state written to diagnostic.bin)" : ""));
    }
    model.zero_grad();
    model.backward(d_final);
    model.release();
    sgd.step(row.lr);
    result.log.rows.push_back(row);

    if (opt.progress && (step % opt.progress_every == 0 || step + 1 == cfg.total_steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *opt.progress << "step " << step << " lr " << row.lr << " loss " << loss;
      if (row.val_loss) *opt.progress << " val " << *row.val_loss;
      *opt.progress << " (" << std::fixed << std::setprecision(1) << secs << "s)" << std::defaultfloat
                    << std::setprecision(6) << std::endl;
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_steps)
      save(snapshot(step + 1), "checkpoint.bin");
  }

  TrainLogRow last;
  last.step = std::max(start, cfg.total_steps);
  last.lr = lr_at(last.step, cfg);
  last.val_loss = run_validation();
  result.log.rows.push_back(last);
  result.final_val_loss = last.val_loss;
  result.checkpoint = snapshot(last.step);
  save(result.checkpoint, "checkpoint.bin");
  if (opt.out_dir) result.log.write_csv(*opt.out_dir / "train_log.csv");
  return result;
}

}  // namespace centrifuge
