#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/nn/layers.hpp"
#include "centrifuge/video.hpp"

// Separation network: a 3D-conv encoder, a transposed-conv decoder with
// U-Net skips, a 3n-channel linear head, and an optional corrector tower that
// refines the predictor's layers additively (final = initial + delta).
//
// Encoder levels (stride relative to the previous level, t/h/w):
//   stem     2 convs, stride 2/2/2, width c
//   stage 1  5 convs, stride 1/2/2, width 2c
//   stage 2  5 convs, stride 2/2/2, width 4c
//   stage 3  5 convs, stride 2/2/2, width 8c
// shallow/medium/deep stop after stage 1/2/3 (7/12/17 conv layers).

namespace centrifuge {

enum class EncoderDepth { shallow = 1, medium = 2, deep = 3 };

NLOHMANN_JSON_SERIALIZE_ENUM(EncoderDepth, {{EncoderDepth::shallow, "shallow"},
                                            {EncoderDepth::medium, "medium"},
                                            {EncoderDepth::deep, "deep"}})

struct ModelConfig {
  int n_layers = 4;
  EncoderDepth encoder_depth = EncoderDepth::medium;
  int base_channels = 8;
  bool use_corrector = false;
  bool norm = true;          // batch normalization in the encoder
  bool decoder_norm = true;  // ... and in the decoder
  bool zero_init_corrector_head = true;
  // Predictor head starts as a copy of the input in every layer, with small feature weights.
  bool passthrough_head = true;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers},
       {"encoder_depth", c.encoder_depth},
       {"base_channels", c.base_channels},
       {"use_corrector", c.use_corrector},
       {"norm", c.norm},
       {"decoder_norm", c.decoder_norm},
       {"zero_init_corrector_head", c.zero_init_corrector_head},
       {"passthrough_head", c.passthrough_head},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.encoder_depth = j.value("encoder_depth", d.encoder_depth);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.use_corrector = j.value("use_corrector", d.use_corrector);
  c.norm = j.value("norm", d.norm);
  c.decoder_norm = j.value("decoder_norm", d.decoder_norm);
  c.zero_init_corrector_head = j.value("zero_init_corrector_head", d.zero_init_corrector_head);
  c.passthrough_head = j.value("passthrough_head", d.passthrough_head);
  c.seed = j.value("seed", d.seed);
}

inline void validate(const ModelConfig& c) {
  if (c.n_layers < 2) throw std::invalid_argument("ModelConfig: n_layers must be >= 2");
  if (c.base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  const int d = static_cast<int>(c.encoder_depth);
  if (d < 1 || d > 3) throw std::invalid_argument("ModelConfig: unknown encoder depth");
}

namespace nn {

inline constexpr std::array<std::array<int, 3>, 4> kLevelStride{{{2, 2, 2}, {1, 2, 2}, {2, 2, 2}, {2, 2, 2}}};
inline constexpr std::array<int, 4> kConvsPerLevel{2, 5, 5, 5};

inline int encoder_conv_layers(EncoderDepth depth) {
  int n = 0;
  for (int l = 0; l <= static_cast<int>(depth); ++l) n += kConvsPerLevel[l];
  return n;
}

/// Total encoder stride per axis.
inline std::array<int, 3> total_stride(EncoderDepth depth) {
  std::array<int, 3> s{1, 1, 1};
  for (int l = 0; l <= static_cast<int>(depth); ++l)
    for (int a = 0; a < 3; ++a) s[a] *= kLevelStride[l][a];
  return s;
}

/// conv (or transposed conv) -> optional batch norm -> rectifier
template <class Op>
struct Unit {
  Op op;
  std::optional<BatchNorm3d> bn;
  TensorF out;

  TensorF backward(const TensorF& x, TensorF dy, bool input_grad) {
    relu_backward_inplace(out, dy);
    if (bn) dy = bn->backward(dy);
    return op.backward(x, dy, input_grad);
  }
  void collect(std::vector<Param*>& p) {
    op.collect(p);
    if (bn) bn->collect(p);
  }
  void collect_buffers(std::vector<Buffer*>& b) {
    if (bn) bn->collect_buffers(b);
  }
  void release() {
    out = TensorF();
    if (bn) bn->release();
  }
  // FNV-1a over the rectifier's on/off pattern
  void digest(std::uint64_t& h) const {
    for (float v : out.values()) h = (h ^ static_cast<std::uint64_t>(v > 0)) * 0x100000001B3ull;
  }
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& prefix, int in_ch, EncoderDepth depth, int base, bool norm, Rng& rng)
      : levels_(static_cast<int>(depth) + 1) {
    int ch = in_ch;
    for (int l = 0; l < levels_; ++l) {
      const int width = base << l;
      for (int k = 0; k < kConvsPerLevel[l]; ++k) {
        const auto stride = k == 0 ? kLevelStride[l] : std::array<int, 3>{1, 1, 1};
        const std::string name = prefix + ".level" + std::to_string(l) + ".conv" + std::to_string(k);
        Unit<Conv3d> u{Conv3d(name, ch, width, {3, 3, 3}, stride, {1, 1, 1}, !norm, rng), std::nullopt, {}};
        if (norm) u.bn.emplace(name + ".bn", width);
        units_.push_back(std::move(u));
        ch = width;
      }
      level_end_.push_back(static_cast<int>(units_.size()) - 1);
      widths_.push_back(width);
    }
  }

  int levels() const { return levels_; }
  int width(int level) const { return widths_.at(level); }

  /// Feature maps at every level (valid until the next forward).
  std::vector<const TensorF*> forward(const TensorF& x, bool training) {
    const TensorF* h = &x;
    for (auto& u : units_) {
      TensorF z = u.op.forward(*h);
      if (u.bn) z = u.bn->forward(z, training);
      relu_inplace(z);
      u.out = std::move(z);
      h = &u.out;
    }
    std::vector<const TensorF*> feats;
    for (int e : level_end_) feats.push_back(&units_[e].out);
    return feats;
  }

  /// `dfeat[l]` is the gradient reaching level l from outside (may be empty).
  TensorF backward(const TensorF& x, std::vector<TensorF> dfeat, bool input_grad) {
    TensorF g;
    int level = levels_ - 1;
    for (int k = static_cast<int>(units_.size()) - 1; k >= 0; --k) {
      if (level >= 0 && k == level_end_[level]) {
        if (!dfeat[level].empty()) {
          if (g.empty())
            g = std::move(dfeat[level]);
          else
            add_inplace(g, dfeat[level]);
        }
        --level;
      }
      const TensorF& in = k == 0 ? x : units_[k - 1].out;
      if (g.empty()) g.reset(units_[k].out.shape());
      g = units_[k].backward(in, std::move(g), k > 0 || input_grad);
    }
    return g;
  }

  void collect(std::vector<Param*>& p) {
    for (auto& u : units_) u.collect(p);
  }
  void collect_buffers(std::vector<Buffer*>& b) {
    for (auto& u : units_) u.collect_buffers(b);
  }
  void release() {
    for (auto& u : units_) u.release();
  }
  void digest(std::uint64_t& h) const {
    for (const auto& u : units_) u.digest(h);
  }

 private:
  int levels_ = 0;
  std::vector<Unit<Conv3d>> units_;
  std::vector<int> level_end_;
  std::vector<int> widths_;
};

class Decoder {
 public:
  Decoder() = default;
  enum class HeadInit { random, zero, passthrough };

  Decoder(const std::string& prefix, const Encoder& enc, int in_ch, int out_ch, bool norm, HeadInit head_init,
          Rng& rng)
      : levels_(enc.levels()) {
    ups_.resize(levels_);
    for (int l = levels_ - 1; l >= 0; --l) {
      const int src = l == levels_ - 1 ? enc.width(l) : 2 * enc.width(l);
      const int dst = l > 0 ? enc.width(l - 1) : enc.width(0);
      const std::string name = prefix + ".up" + std::to_string(l);
      Unit<ConvTranspose3d> u{ConvTranspose3d(name, src, dst, {3, 3, 3}, kLevelStride[l], {1, 1, 1}, !norm, rng),
                              std::nullopt, {}};
      if (norm) u.bn.emplace(name + ".bn", dst);
      ups_[l] = std::move(u);
    }
    head_ = Conv3d(prefix + ".head", enc.width(0) + in_ch, out_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true, rng, 1.0);
    auto& w = head_.weight().value;
    const int feat = enc.width(0), cols = feat + in_ch;
    if (head_init == HeadInit::zero) w.fill(0.0f);
    if (head_init == HeadInit::passthrough) {
      for (int o = 0; o < out_ch; ++o) {
        for (int c = 0; c < feat; ++c) w[static_cast<std::size_t>(o) * cols + c] *= 0.1f;
        for (int c = 0; c < in_ch; ++c) w[static_cast<std::size_t>(o) * cols + feat + c] = c == o % in_ch ? 1.0f : 0.0f;
      }
    }
  }

  TensorF forward(const std::vector<const TensorF*>& feats, const TensorF& x, bool training) {
    cats_.assign(levels_ + 1, TensorF());
    for (int l = levels_ - 1; l >= 0; --l) {
      const TensorF& in = l == levels_ - 1 ? *feats[l] : cats_[l + 1];
      const TensorF& skip = l > 0 ? *feats[l - 1] : x;
      auto& u = ups_[l];
      TensorF z = u.op.forward(in, spatial(skip));
      if (u.bn) z = u.bn->forward(z, training);
      relu_inplace(z);
      u.out = std::move(z);
      cats_[l] = concat_channels(u.out, skip);
    }
    return head_.forward(cats_[0]);
  }

  /// Returns gradients for each encoder level and for the raw input.
  std::pair<std::vector<TensorF>, TensorF> backward(const std::vector<const TensorF*>& feats, const TensorF& dy) {
    std::vector<TensorF> dfeat(levels_);
    TensorF g = head_.backward(cats_[0], dy, true);
    TensorF dx;
    for (int l = 0; l < levels_; ++l) {
      auto [du, dskip] = split_channels(g, ups_[l].out.dim(1));
      if (l == 0)
        dx = std::move(dskip);
      else
        dfeat[l - 1] = std::move(dskip);
      const TensorF& in = l == levels_ - 1 ? *feats[l] : cats_[l + 1];
      g = ups_[l].backward(in, std::move(du), true);
    }
    dfeat[levels_ - 1] = std::move(g);
    return {std::move(dfeat), std::move(dx)};
  }

  void collect(std::vector<Param*>& p) {
    for (int l = levels_ - 1; l >= 0; --l) ups_[l].collect(p);
    head_.collect(p);
  }
  void collect_buffers(std::vector<Buffer*>& b) {
    for (int l = levels_ - 1; l >= 0; --l) ups_[l].collect_buffers(b);
  }
  void release() {
    for (auto& u : ups_) u.release();
    cats_.clear();
  }
  void digest(std::uint64_t& h) const {
    for (const auto& u : ups_) u.digest(h);
  }

 private:
  int levels_ = 0;
  std::vector<Unit<ConvTranspose3d>> ups_;
  Conv3d head_;
  std::vector<TensorF> cats_;
};

/// One encoder-decoder.
class Tower {
 public:
  Tower() = default;
  Tower(const std::string& prefix, int in_ch, int out_ch, const ModelConfig& cfg, Decoder::HeadInit head_init,
        Rng& rng)
      : encoder_(prefix + ".enc", in_ch, cfg.encoder_depth, cfg.base_channels, cfg.norm, rng),
        decoder_(prefix + ".dec", encoder_, in_ch, out_ch, cfg.decoder_norm, head_init, rng) {}

  TensorF forward(const TensorF& x, bool training) {
    input_ = &x;
    feats_ = encoder_.forward(x, training);
    return decoder_.forward(feats_, x, training);
  }

  TensorF backward(const TensorF& dy, bool input_grad) {
    auto [dfeat, dx_skip] = decoder_.backward(feats_, dy);
    TensorF dx = encoder_.backward(*input_, std::move(dfeat), input_grad);
    if (input_grad) add_inplace(dx, dx_skip);
    return dx;
  }

  Encoder& encoder() { return encoder_; }

  void collect(std::vector<Param*>& p) {
    encoder_.collect(p);
    decoder_.collect(p);
  }
  void collect_buffers(std::vector<Buffer*>& b) {
    encoder_.collect_buffers(b);
    decoder_.collect_buffers(b);
  }
  void release() {
    encoder_.release();
    decoder_.release();
    feats_.clear();
    input_ = nullptr;
  }
  void digest(std::uint64_t& h) const {
    encoder_.digest(h);
    decoder_.digest(h);
  }

 private:
  Encoder encoder_;
  Decoder decoder_;
  const TensorF* input_ = nullptr;
  std::vector<const TensorF*> feats_;
};

}  // namespace nn

// ---------------------------------------------------------------------------

/// Clips -> N x 3 x T x H x W.
inline TensorF clips_to_tensor(std::span<const VideoClip> clips) {
  if (clips.empty()) throw std::invalid_argument("clips_to_tensor: empty batch");
  const auto& g = clips.front();
  const int C = g.channels;
  TensorF x({static_cast<int>(clips.size()), C, g.frames, g.height, g.width});
  const std::size_t px = g.pixels();
  for (std::size_t n = 0; n < clips.size(); ++n) {
    if (!clips[n].same_shape(g)) throw std::invalid_argument("clips_to_tensor: mixed geometry in batch");
    float* dst = x.data() + n * x.stride0();
    const float* src = clips[n].data.data();
    for (std::size_t p = 0; p < px; ++p)
      for (int c = 0; c < C; ++c) dst[c * px + p] = src[p * C + c];
  }
  return x;
}

inline VideoClip tensor_sample_to_video(const TensorF& x, int n, double fps = 25.0) {
  const int C = x.dim(1);
  Video<float> v(x.dim(2), x.dim(3), x.dim(4), C);
  v.fps = fps;
  const std::size_t px = v.pixels();
  const float* src = x.data() + n * x.stride0();
  for (std::size_t p = 0; p < px; ++p)
    for (int c = 0; c < C; ++c) v.data[p * C + c] = src[c * px + p];
  return v;
}

inline void video_to_tensor_sample(const Video<float>& v, TensorF& x, int n) {
  const int C = v.channels;
  const std::size_t px = v.pixels();
  float* dst = x.data() + n * x.stride0();
  for (std::size_t p = 0; p < px; ++p)
    for (int c = 0; c < C; ++c) dst[c * px + p] = v.data[p * C + c];
}

struct PredictorCorrectorOutput {
  LayerSet initial;
  LayerSet delta;
  LayerSet final_layers;
};

class SeparationModel {
 public:
  struct Output {
    TensorF initial, delta, final_layers;  // N x 3n x T x H x W
  };

  explicit SeparationModel(const ModelConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    Rng rng(cfg_.seed);
    const int out = 3 * cfg_.n_layers;
    using Init = nn::Decoder::HeadInit;
    predictor_ = nn::Tower("predictor", 3, out, cfg_, cfg_.passthrough_head ? Init::passthrough : Init::random, rng);
    if (cfg_.use_corrector)
      corrector_.emplace("corrector", out, out, cfg_, cfg_.zero_init_corrector_head ? Init::zero : Init::random, rng);
  }

  // Towers hold pointers into their own activations; never copy a model mid-step.
  SeparationModel(const SeparationModel&) = delete;
  SeparationModel& operator=(const SeparationModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  int n_layers() const { return cfg_.n_layers; }
  bool has_corrector() const { return corrector_.has_value(); }

  /// Smallest accepted T, H, W (one cell at the deepest level).
  std::array<int, 3> minimum_geometry() const { return nn::total_stride(cfg_.encoder_depth); }

  void check_input(const TensorF& x) const {
    if (x.ndim() != 5 || x.dim(1) != 3)
      throw std::invalid_argument("SeparationModel: expected N x 3 x T x H x W input, got " + shape_string(x.shape()));
    const auto m = minimum_geometry();
    if (x.dim(2) < m[0] || x.dim(3) < m[1] || x.dim(4) < m[2])
      throw std::invalid_argument("SeparationModel: clip " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                                  "x" + std::to_string(x.dim(4)) + " is below the minimum geometry " +
                                  std::to_string(m[0]) + "x" + std::to_string(m[1]) + "x" + std::to_string(m[2]));
  }

  /// In training mode `x` must stay alive until backward().
  Output forward(const TensorF& x, bool training) {
    check_input(x);
    Output o;
    kept_initial_ = predictor_.forward(x, training);
    o.initial = kept_initial_;
    if (corrector_) {
      o.delta = corrector_->forward(kept_initial_, training);
      o.final_layers = o.initial;
      nn::add_inplace(o.final_layers, o.delta);
    } else {
      o.delta = TensorF(o.initial.shape());
      o.final_layers = o.initial;
    }
    trained_ = training;
    if (!training) {
      release();
      kept_initial_ = TensorF();
    }
    return o;
  }

  /// Accumulates gradients of a loss on the final layers (after a training forward).
  void backward(const TensorF& d_final) {
    if (!trained_) throw std::logic_error("SeparationModel::backward without a training forward");
    if (corrector_) {
      TensorF d_initial = corrector_->backward(d_final, true);
      nn::add_inplace(d_initial, d_final);
      predictor_.backward(d_initial, false);
    } else {
      predictor_.backward(d_final, false);
    }
  }

  /// Pooled encoder features of the predictor: (stem output, deepest level).
  std::pair<TensorF, TensorF> features(const TensorF& x) {
    check_input(x);
    auto feats = predictor_.encoder().forward(x, false);
    auto out = std::make_pair(nn::global_avg_pool(*feats.front()), nn::global_avg_pool(*feats.back()));
    predictor_.release();
    return out;
  }

  std::vector<nn::Param*> parameters() {
    std::vector<nn::Param*> p;
    predictor_.collect(p);
    if (corrector_) corrector_->collect(p);
    return p;
  }
  std::vector<nn::Buffer*> buffers() {
    std::vector<nn::Buffer*> b;
    predictor_.collect_buffers(b);
    if (corrector_) corrector_->collect_buffers(b);
    return b;
  }
  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }
  std::size_t predictor_parameter_count() {
    std::vector<nn::Param*> p;
    predictor_.collect(p);
    std::size_t n = 0;
    for (auto* q : p) n += q->value.size();
    return n;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
  /// Hash of every rectifier's on/off state from the last training forward.
  /// Finite-difference checks use it to discard probes that cross a kink.
  std::uint64_t activation_digest() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    predictor_.digest(h);
    if (corrector_) corrector_->digest(h);
    return h;
  }

  /// Drop cached activations.
  void release() {
    predictor_.release();
    if (corrector_) corrector_->release();
    trained_ = false;
  }

  nn::Tower& predictor() { return predictor_; }
  nn::Tower* corrector() { return corrector_ ? &*corrector_ : nullptr; }

 private:
  ModelConfig cfg_;
  nn::Tower predictor_;
  std::optional<nn::Tower> corrector_;
  TensorF kept_initial_;  // corrector input, referenced by its backward
  bool trained_ = false;
};

inline std::unique_ptr<SeparationModel> build_model(const ModelConfig& cfg) {
  return std::make_unique<SeparationModel>(cfg);
}

/// Eval-mode predictor output for one clip.
inline LayerSet predictor_forward(SeparationModel& model, const VideoClip& clip) {
  const TensorF x = clips_to_tensor(std::span<const VideoClip>(&clip, 1));
  model.check_input(x);
  TensorF y = model.predictor().forward(x, false);
  model.release();
  return tensor_sample_to_video(y, 0, clip.fps);
}

/// Eval-mode corrector residual for an initial layer set.
inline LayerSet corrector_forward(SeparationModel& model, const LayerSet& initial) {
  if (!model.corrector()) throw std::logic_error("corrector_forward: model has no corrector");
  if (initial.channels != 3 * model.n_layers())
    throw std::invalid_argument("corrector_forward: expected " + std::to_string(3 * model.n_layers()) + " channels");
  const TensorF x = clips_to_tensor(std::span<const Video<float>>(&initial, 1));
  TensorF y = model.corrector()->forward(x, false);
  model.release();
  return tensor_sample_to_video(y, 0, initial.fps);
}

inline PredictorCorrectorOutput model_forward(SeparationModel& model, const VideoClip& clip) {
  const TensorF x = clips_to_tensor(std::span<const VideoClip>(&clip, 1));
  auto o = model.forward(x, false);
  return {tensor_sample_to_video(o.initial, 0, clip.fps), tensor_sample_to_video(o.delta, 0, clip.fps),
          tensor_sample_to_video(o.final_layers, 0, clip.fps)};
}

}  // namespace centrifuge
