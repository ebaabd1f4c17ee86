#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "centrifuge/model.hpp"
#include "centrifuge/train.hpp"

namespace centrifuge::testing {

struct GradCheck {
  double rel_error = 0;  // ||fd - analytic|| / ||fd|| over the probes used
  int used = 0;
  int skipped = 0;
};

/// Central differences on randomly chosen parameters of `model` against the
/// gradient of `objective`, which must run a training forward, return the
/// scalar and leave the gradient w.r.t. the final layers in `d_final`.
///
/// Rectifiers make the network piecewise linear; a probe whose +-h
/// evaluations switch any rectifier measures a kink rather than the
/// derivative, so such probes are discarded by comparing activation digests.
inline GradCheck check_model_gradients(SeparationModel& model, const TensorF& x,
                                       const std::function<double(const TensorF&, TensorF&)>& objective,
                                       int probes_wanted, double h, std::uint64_t seed) {
  TensorF d_final;
  auto run = [&](std::uint64_t& digest) {
    const auto out = model.forward(x, true);
    const double v = objective(out.final_layers, d_final);
    digest = model.activation_digest();
    return v;
  };
  std::uint64_t d0 = 0;
  run(d0);
  model.zero_grad();
  model.backward(d_final);
  model.release();

  auto params = model.parameters();
  Rng rng(seed);
  GradCheck r;
  double num = 0, den = 0;
  for (int attempt = 0; r.used < probes_wanted && attempt < 50 * probes_wanted; ++attempt) {
    auto* p = params[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(params.size()) - 1))];
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(p->value.size()) - 1));
    const float old = p->value[i];
    std::uint64_t da = 0, db = 0;
    p->value[i] = old + static_cast<float>(h);
    const double up = run(da);
    model.release();
    p->value[i] = old - static_cast<float>(h);
    const double down = run(db);
    model.release();
    p->value[i] = old;
    if (da != d0 || db != d0) {
      ++r.skipped;
      continue;
    }
    ++r.used;
    const double fd = (up - down) / (2 * h);
    num += (fd - p->grad[i]) * (fd - p->grad[i]);
    den += fd * fd;
  }
  r.rel_error = den > 0 ? std::sqrt(num / den) : 0.0;
  return r;
}

/// Fixed random linear functional of the output: sum(w * y).
inline std::function<double(const TensorF&, TensorF&)> linear_probe(const TensorF& w) {
  return [&w](const TensorF& y, TensorF& dy) {
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(w[i]) * y[i];
    dy = w;
    return s;
  };
}

/// The training objective on a fixed batch.
inline std::function<double(const TensorF&, TensorF&)> training_objective(const std::vector<BlendedSample>& batch,
                                                                          const TrainConfig& cfg) {
  return [&batch, &cfg](const TensorF& y, TensorF& dy) { return batch_objective(batch, y, cfg, dy); };
}

}  // namespace centrifuge::testing
