#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/video.hpp"

// Reconstruction objectives for layer separation.
//
//   l(U, V) = 1/(2T) * sum_t [ mean|U_t - V_t| + mean|grad U_t - grad V_t| ]
//
// "mean" runs over every element of the operand (H*W*C for pixels, H*W*2C for
// the stacked x/y forward differences). The permutation-invariant loss takes
// the cheapest ordered pair (i != j) of output layers for the two targets.

namespace centrifuge {

struct Assignment {
  int i = 0;  // layer matched to the first target
  int j = 1;  // layer matched to the second target
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct LossReport {
  double total = 0;
  Assignment assignment;
  double l1 = 0;  // l(v1, O^i)
  double l2 = 0;  // l(v2, O^j)
  double diversity = 0;
  std::optional<double> consistency;
  std::optional<double> diversity_penalty;
};

inline nlohmann::json to_json(const LossReport& r) {
  nlohmann::json j = {{"total", r.total},         {"i", r.assignment.i}, {"j", r.assignment.j},
                      {"l1", r.l1},               {"l2", r.l2},          {"diversity", r.diversity}};
  if (r.consistency) j["consistency"] = *r.consistency;
  if (r.diversity_penalty) j["diversity_penalty"] = *r.diversity_penalty;
  return j;
}

namespace detail {

// A strided RGB view into a video: element (p, c) lives at base[p*stride + offset + c].
template <class S>
struct RgbView {
  const S* base;
  int stride;
  int offset;
  const S& operator()(std::size_t p, int c) const { return base[p * stride + offset + c]; }
};

template <class S>
RgbView<S> layer_view(const Video<S>& v, int layer) {
  return {v.data.data(), v.channels, 3 * layer};
}

template <class S>
RgbView<S> clip_view(const Video<S>& v) {
  return {v.data.data(), v.channels, 0};
}

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

/// l between two RGB views of geometry T x H x W.
template <class S>
double recon(RgbView<S> a, RgbView<S> b, int T, int H, int W) {
  const double n_pix = static_cast<double>(H) * W * 3;
  const double n_grad = 2.0 * n_pix;
  double total = 0;
  for (int t = 0; t < T; ++t) {
    double pix = 0, grad = 0;
    const std::size_t f0 = static_cast<std::size_t>(t) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = f0 + static_cast<std::size_t>(y) * W + x;
        for (int c = 0; c < 3; ++c) {
          const double d = static_cast<double>(a(p, c)) - static_cast<double>(b(p, c));
          pix += std::abs(d);
          if (x + 1 < W) {
            const double dx = static_cast<double>(a(p + 1, c)) - static_cast<double>(b(p + 1, c));
            grad += std::abs(dx - d);
          }
          if (y + 1 < H) {
            const double dy = static_cast<double>(a(p + W, c)) - static_cast<double>(b(p + W, c));
            grad += std::abs(dy - d);
          }
        }
      }
    }
    total += pix / n_pix + grad / n_grad;
  }
  return total / (2.0 * T);
}

/// Adds scale * dl/da into `ga`, laid out like `a` (same stride and offset).
template <class S>
void recon_grad(RgbView<S> a, RgbView<S> b, int T, int H, int W, double scale, S* ga) {
  const double n_pix = static_cast<double>(H) * W * 3;
  const double wp = scale / (2.0 * T * n_pix);
  const double wg = scale / (2.0 * T * 2.0 * n_pix);
  auto g = [&](std::size_t p, int c) -> S& { return ga[p * a.stride + a.offset + c]; };
  for (int t = 0; t < T; ++t) {
    const std::size_t f0 = static_cast<std::size_t>(t) * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = f0 + static_cast<std::size_t>(y) * W + x;
        for (int c = 0; c < 3; ++c) {
          const double d = static_cast<double>(a(p, c)) - static_cast<double>(b(p, c));
          g(p, c) += static_cast<S>(wp * sign(d));
          if (x + 1 < W) {
            const double dx = static_cast<double>(a(p + 1, c)) - static_cast<double>(b(p + 1, c));
            const double s = wg * sign(dx - d);
            g(p + 1, c) += static_cast<S>(s);
            g(p, c) -= static_cast<S>(s);
          }
          if (y + 1 < H) {
            const double dy = static_cast<double>(a(p + W, c)) - static_cast<double>(b(p + W, c));
            const double s = wg * sign(dy - d);
            g(p + W, c) += static_cast<S>(s);
            g(p, c) -= static_cast<S>(s);
          }
        }
      }
    }
  }
}

/// Mean absolute pixel difference between two layers (no gradient term).
template <class S>
double mean_abs(RgbView<S> a, RgbView<S> b, std::size_t pixels) {
  double s = 0;
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) s += std::abs(static_cast<double>(a(p, c)) - static_cast<double>(b(p, c)));
  return s / (static_cast<double>(pixels) * 3);
}

template <class S>
void require_layers(const Video<S>& layers, const char* what) {
  if (layers.channels % 3 != 0 || layers.channels < 6)
    throw std::invalid_argument(std::string(what) + ": need at least 2 RGB layers, got " +
                                std::to_string(layers.channels) + " channels");
}

template <class S>
void require_geometry(const Video<S>& a, const Video<S>& b, const char* what) {
  if (!a.same_geometry(b))
    throw std::invalid_argument(std::string(what) + ": geometry mismatch " + geometry_string(a) + " vs " +
                                geometry_string(b));
}

template <class S>
void require_assignment(const Video<S>& layers, Assignment a, const char* what) {
  const int n = layer_count(layers);
  if (a.i < 0 || a.j < 0 || a.i >= n || a.j >= n || a.i == a.j)
    throw std::invalid_argument(std::string(what) + ": invalid assignment (" + std::to_string(a.i) + "," +
                                std::to_string(a.j) + ") for " + std::to_string(n) + " layers");
}

}  // namespace detail

/// Forward differences of one H x W x C frame; result is H x W x 2C with the
/// x-differences in the first C channels. The far row/column is zero.
template <class S>
std::vector<S> spatial_gradient(std::span<const S> frame, int height, int width, int channels) {
  if (height < 1 || width < 1 || channels < 1) throw std::invalid_argument("spatial_gradient: empty frame");
  if (frame.size() != static_cast<std::size_t>(height) * width * channels)
    throw std::invalid_argument("spatial_gradient: size does not match geometry");
  std::vector<S> g(static_cast<std::size_t>(height) * width * 2 * channels, S(0));
  auto at = [&](int y, int x, int c) { return frame[(static_cast<std::size_t>(y) * width + x) * channels + c]; };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        S* out = &g[(static_cast<std::size_t>(y) * width + x) * 2 * channels];
        if (x + 1 < width) out[c] = at(y, x + 1, c) - at(y, x, c);
        if (y + 1 < height) out[channels + c] = at(y + 1, x, c) - at(y, x, c);
      }
  return g;
}

/// Reconstruction loss l(U, V) between two videos of equal shape. Any channel
/// count is accepted; the gradient term is taken per channel.
template <class S>
double recon_loss(const Video<S>& u, const Video<S>& v) {
  if (!u.same_shape(v))
    throw std::invalid_argument("recon_loss: shape mismatch " + geometry_string(u) + " vs " + geometry_string(v));
  if (u.frames < 1) throw std::invalid_argument("recon_loss: empty video");
  if (u.channels == 3) return detail::recon(detail::clip_view(u), detail::clip_view(v), u.frames, u.height, u.width);
  // Other channel counts go through the explicit gradient tensor.
  const double n_pix = static_cast<double>(u.height) * u.width * u.channels;
  double total = 0;
  for (int t = 0; t < u.frames; ++t) {
    std::span<const S> fu(u.frame(t), u.frame_size()), fv(v.frame(t), v.frame_size());
    double pix = 0;
    for (std::size_t k = 0; k < fu.size(); ++k) pix += std::abs(double(fu[k]) - double(fv[k]));
    auto gu = spatial_gradient(fu, u.height, u.width, u.channels);
    auto gv = spatial_gradient(fv, v.height, v.width, v.channels);
    double grad = 0;
    for (std::size_t k = 0; k < gu.size(); ++k) grad += std::abs(double(gu[k]) - double(gv[k]));
    total += pix / n_pix + grad / (2 * n_pix);
  }
  return total / (2.0 * u.frames);
}

/// Adds scale * dl(U,V)/dU into grad_u (RGB clips).
template <class S>
void recon_loss_grad(const Video<S>& u, const Video<S>& v, double scale, Video<S>& grad_u) {
  detail::require_geometry(u, v, "recon_loss_grad");
  if (u.channels != 3 || v.channels != 3) throw std::invalid_argument("recon_loss_grad: RGB clips expected");
  if (!grad_u.same_shape(u)) grad_u = Video<S>(u.frames, u.height, u.width, 3);
  detail::recon_grad(detail::clip_view(u), detail::clip_view(v), u.frames, u.height, u.width, scale,
                     grad_u.data.data());
}

/// l between layer `i` of a layer set and an RGB clip.
template <class S>
double layer_loss(const Video<S>& layers, int i, const Video<S>& target) {
  return detail::recon(detail::layer_view(layers, i), detail::clip_view(target), target.frames, target.height,
                       target.width);
}

/// Minimum pairwise l over unordered distinct layer pairs.
template <class S>
double diversity_score(const Video<S>& layers) {
  detail::require_layers(layers, "diversity_score");
  const int n = layer_count(layers);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      best = std::min(best, detail::recon(detail::layer_view(layers, a), detail::layer_view(layers, b),
                                          layers.frames, layers.height, layers.width));
  return best;
}

/// Permutation-invariant loss: exhaustive minimum over ordered pairs i != j of
/// l(v1, O^i) + l(v2, O^j). Ties go to the lexicographically smallest (i, j).
template <class S>
LossReport pit_loss(const Video<S>& v1, const Video<S>& v2, const Video<S>& layers, bool with_diversity = true) {
  detail::require_layers(layers, "pit_loss");
  detail::require_geometry(v1, v2, "pit_loss");
  detail::require_geometry(v1, layers, "pit_loss");
  if (v1.channels != 3 || v2.channels != 3) throw std::invalid_argument("pit_loss: targets must be RGB");
  const int n = layer_count(layers);
  std::vector<double> to1(n), to2(n);
  for (int k = 0; k < n; ++k) {
    to1[k] = layer_loss(layers, k, v1);
    to2[k] = layer_loss(layers, k, v2);
  }
  LossReport r;
  r.total = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double s = to1[i] + to2[j];
      if (s < r.total) {
        r.total = s;
        r.assignment = {i, j};
        r.l1 = to1[i];
        r.l2 = to2[j];
      }
    }
  if (with_diversity) r.diversity = diversity_score(layers);
  return r;
}

/// Adds scale * dL/dO into grad_layers for the pair chosen in `a`.
template <class S>
void pit_loss_grad(const Video<S>& v1, const Video<S>& v2, const Video<S>& layers, Assignment a, double scale,
                   Video<S>& grad_layers) {
  detail::require_assignment(layers, a, "pit_loss_grad");
  if (!grad_layers.same_shape(layers)) grad_layers = Video<S>(layers.frames, layers.height, layers.width, layers.channels);
  const int T = layers.frames, H = layers.height, W = layers.width;
  detail::recon_grad(detail::layer_view(layers, a.i), detail::clip_view(v1), T, H, W, scale, grad_layers.data.data());
  detail::recon_grad(detail::layer_view(layers, a.j), detail::clip_view(v2), T, H, W, scale, grad_layers.data.data());
}

namespace detail {

template <class S>
Video<S> recompose(const Video<S>& layers, Assignment a, double alpha) {
  Video<S> out(layers.frames, layers.height, layers.width, 3);
  const auto li = layer_view(layers, a.i), lj = layer_view(layers, a.j);
  for (std::size_t p = 0; p < layers.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      out.data[p * 3 + c] = static_cast<S>((1.0 - alpha) * li(p, c) + alpha * lj(p, c));
  return out;
}

}  // namespace detail

/// l(V, (1 - alpha) O^i + alpha O^j): the matched pair should recompose the input.
template <class S>
double consistency_loss(const Video<S>& v, const Video<S>& layers, Assignment a, double alpha) {
  detail::require_assignment(layers, a, "consistency_loss");
  detail::require_geometry(v, layers, "consistency_loss");
  return recon_loss(v, detail::recompose(layers, a, alpha));
}

template <class S>
void consistency_loss_grad(const Video<S>& v, const Video<S>& layers, Assignment a, double alpha, double scale,
                           Video<S>& grad_layers) {
  detail::require_assignment(layers, a, "consistency_loss_grad");
  const auto mix = detail::recompose(layers, a, alpha);
  Video<S> g(mix.frames, mix.height, mix.width, 3);
  recon_loss_grad(mix, v, scale, g);  // l is symmetric
  if (!grad_layers.same_shape(layers)) grad_layers = Video<S>(layers.frames, layers.height, layers.width, layers.channels);
  const int C = layers.channels;
  for (std::size_t p = 0; p < layers.pixels(); ++p)
    for (int c = 0; c < 3; ++c) {
      grad_layers.data[p * C + 3 * a.i + c] += static_cast<S>((1.0 - alpha) * g.data[p * 3 + c]);
      grad_layers.data[p * C + 3 * a.j + c] += static_cast<S>(alpha * g.data[p * 3 + c]);
    }
}

/// -l(O^i, O^j) for the matched pair.
template <class S>
double diversity_penalty(const Video<S>& layers, Assignment a) {
  detail::require_assignment(layers, a, "diversity_penalty");
  return -detail::recon(detail::layer_view(layers, a.i), detail::layer_view(layers, a.j), layers.frames,
                        layers.height, layers.width);
}

template <class S>
void diversity_penalty_grad(const Video<S>& layers, Assignment a, double scale, Video<S>& grad_layers) {
  detail::require_assignment(layers, a, "diversity_penalty_grad");
  if (!grad_layers.same_shape(layers)) grad_layers = Video<S>(layers.frames, layers.height, layers.width, layers.channels);
  const int T = layers.frames, H = layers.height, W = layers.width;
  const auto li = detail::layer_view(layers, a.i), lj = detail::layer_view(layers, a.j);
  detail::recon_grad(li, lj, T, H, W, -scale, grad_layers.data.data());
  detail::recon_grad(lj, li, T, H, W, -scale, grad_layers.data.data());
}

/// The two most distant layers in mean absolute pixel distance.
template <class S>
Assignment select_two(const Video<S>& layers) {
  detail::require_layers(layers, "select_two");
  const int n = layer_count(layers);
  Assignment best{0, 1};
  double best_d = -1;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      const double d = detail::mean_abs(detail::layer_view(layers, a), detail::layer_view(layers, b), layers.pixels());
      if (d > best_d) {
        best_d = d;
        best = {a, b};
      }
    }
  return best;
}

}  // namespace centrifuge
