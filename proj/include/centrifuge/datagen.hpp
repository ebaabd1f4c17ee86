#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "centrifuge/rng.hpp"
#include "centrifuge/video.hpp"
#include "centrifuge/videoio.hpp"

namespace centrifuge {

using Rgb = std::array<float, 3>;

// ---------------------------------------------------------------------------
// Procedural moving-shape scenes

enum class Shape { circle = 0, rectangle = 1, triangle = 2 };
enum class MotionClass { still = 0, horizontal = 1, vertical = 2 };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumClasses = 9;  // shape x motion class of object 0

struct SceneObject {
  Shape shape = Shape::circle;
  Rgb color{1, 1, 1};
  double size = 0.3;       // radius as a fraction of min(H, W)
  double x = 0.5, y = 0.5;  // initial centre, fraction of width/height
  double vx = 0, vy = 0;   // pixels per frame
};

struct Background {
  enum class Kind { solid, noise } kind = Kind::solid;
  Rgb color{0, 0, 0};
  double amplitude = 0.0;  // noise field contrast
  double pan_x = 0, pan_y = 0;  // pixels per frame
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  Background background;
};

inline MotionClass motion_class(const SceneObject& o) {
  if (std::abs(o.vx) < 0.25 && std::abs(o.vy) < 0.25) return MotionClass::still;
  return std::abs(o.vx) >= std::abs(o.vy) ? MotionClass::horizontal : MotionClass::vertical;
}

inline int scene_label(const SceneSpec& spec) {
  if (spec.objects.empty()) throw std::invalid_argument("scene has no objects");
  const auto& o = spec.objects.front();
  return static_cast<int>(o.shape) * 3 + static_cast<int>(motion_class(o));
}

inline void validate_scene(const SceneSpec& spec) {
  if (spec.objects.empty()) throw std::invalid_argument("SceneSpec: need at least one object");
  auto in01 = [](const Rgb& c) { return c[0] >= 0 && c[0] <= 1 && c[1] >= 0 && c[1] <= 1 && c[2] >= 0 && c[2] <= 1; };
  for (const auto& o : spec.objects) {
    if (!(o.size > 0) || !std::isfinite(o.size)) throw std::invalid_argument("SceneSpec: degenerate (zero-size) object");
    if (!in01(o.color)) throw std::invalid_argument("SceneSpec: object color outside [0,1]");
    if (!std::isfinite(o.x) || !std::isfinite(o.y) || !std::isfinite(o.vx) || !std::isfinite(o.vy))
      throw std::invalid_argument("SceneSpec: non-finite object position or velocity");
  }
  if (!in01(spec.background.color)) throw std::invalid_argument("SceneSpec: background color outside [0,1]");
}

namespace detail {

// Position of a point moving at constant velocity inside [lo, hi], bouncing at the walls.
inline double bounce(double start, double velocity, double t, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return 0.5 * (lo + hi);
  double p = std::fmod(start - lo + velocity * t, 2 * span);
  if (p < 0) p += 2 * span;
  return lo + (p <= span ? p : 2 * span - p);
}

inline bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::circle:
      return dx * dx + dy * dy <= r * r;
    case Shape::rectangle:
      return std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
    case Shape::triangle: {
      // apex up, base at dy = r/2
      if (dy > 0.5 * r || dy < -r) return false;
      const double half = (dy + r) / 1.5 * 0.866;
      return std::abs(dx) <= half;
    }
  }
  return false;
}

struct NoiseField {
  std::array<std::array<double, 4>, 9> waves{};  // 3 waves per channel: fx, fy, phase, weight

  NoiseField(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& w : waves) {
      const double f = uniform(rng, 1.0, 3.0);
      const double th = uniform(rng, 0.0, 2 * std::numbers::pi);
      w = {f * std::cos(th), f * std::sin(th), uniform(rng, 0, 2 * std::numbers::pi), uniform(rng, 0.5, 1.0)};
    }
  }
  // value in [-1, 1] at normalised coordinates (u, v) for channel c
  double operator()(double u, double v, int c) const {
    double s = 0, wsum = 0;
    for (int k = 0; k < 3; ++k) {
      const auto& w = waves[c * 3 + k];
      s += w[3] * std::sin(2 * std::numbers::pi * (w[0] * u + w[1] * v) + w[2]);
      wsum += w[3];
    }
    return s / wsum;
  }
};

}  // namespace detail

/// Render a scene. The seed only drives the background texture; geometry and
/// motion come from the scene.
inline std::pair<VideoClip, int> synth_clip(const SceneSpec& spec, int frames, int height, int width,
                                            std::uint64_t seed) {
  validate_scene(spec);
  if (frames < 1 || height < 1 || width < 1) throw std::invalid_argument("synth_clip: empty geometry");
  VideoClip clip(frames, height, width, 3);
  const double dim = std::min(height, width);
  const auto& bg = spec.background;
  std::optional<detail::NoiseField> noise;
  if (bg.kind == Background::Kind::noise) noise.emplace(seed);

  // object draw order: others first, object 0 (the labelled one) on top
  std::vector<std::size_t> order;
  for (std::size_t k = 1; k < spec.objects.size(); ++k) order.push_back(k);
  order.push_back(0);

  for (int t = 0; t < frames; ++t) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        float* px = &clip.at(t, y, x, 0);
        for (int c = 0; c < 3; ++c) {
          double v = bg.color[c];
          if (noise) {
            const double u = (x + 0.5 - bg.pan_x * t) / dim, w = (y + 0.5 - bg.pan_y * t) / dim;
            v += bg.amplitude * (*noise)(u, w, c);
          }
          px[c] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
      }
    for (std::size_t k : order) {
      const auto& o = spec.objects[k];
      const double r = o.size * dim;
      const double cx = detail::bounce(o.x * width, o.vx, t, r, width - r);
      const double cy = detail::bounce(o.y * height, o.vy, t, r, height - r);
      const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
      const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r + 1)));
      const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r + 1)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (detail::inside(o.shape, x + 0.5 - cx, y + 0.5 - cy, r))
            for (int c = 0; c < 3; ++c) clip.at(t, y, x, c) = o.color[c];
    }
  }
  return {std::move(clip), scene_label(spec)};
}

namespace detail {

/// h in degrees, s and v in [0,1].
inline Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

inline void random_velocity(Rng& rng, MotionClass m, double& vx, double& vy) {
  const double major = uniform(rng, 1.0, 2.0) * (coin(rng) ? 1 : -1);
  const double minor = uniform(rng, -0.3, 0.3);
  switch (m) {
    case MotionClass::still: vx = vy = 0; break;
    case MotionClass::horizontal: vx = major; vy = minor; break;
    case MotionClass::vertical: vx = minor; vy = major; break;
  }
}

}  // namespace detail

/// Random scene; `label` pins the class of object 0 when given.
///
/// A clip has one hue shared (with jitter) by all its objects and a tint of
/// its dim background, and one motion shared (with jitter) by its objects and
/// the background texture. These are the grouping cues that make a blend of
/// two clips separable.
inline SceneSpec random_scene(std::uint64_t seed, std::optional<int> label = std::nullopt) {
  Rng rng(seed);
  const int cls = label ? *label : uniform_int(rng, 0, kNumClasses - 1);
  if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("random_scene: label out of range");
  SceneSpec s;
  const double hue = uniform(rng, 0.0, 360.0);
  double gx = 0, gy = 0;
  detail::random_velocity(rng, static_cast<MotionClass>(cls % 3), gx, gy);

  auto& bg = s.background;
  bg.color = detail::hsv_to_rgb(hue, uniform(rng, 0.3, 0.6), uniform(rng, 0.03, 0.08));
  if (coin(rng)) {
    bg.kind = Background::Kind::noise;
    bg.amplitude = uniform(rng, 0.01, 0.03);
    bg.pan_x = gx;
    bg.pan_y = gy;
  }

  const int n_obj = uniform_int(rng, 1, 3);
  for (int k = 0; k < n_obj; ++k) {
    SceneObject o;
    if (k == 0) {
      o.shape = static_cast<Shape>(cls / 3);
      o.size = uniform(rng, 0.18, 0.28);
    } else {
      o.shape = static_cast<Shape>(uniform_int(rng, 0, kNumShapes - 1));
      o.size = uniform(rng, 0.08, 0.15);
    }
    o.color = detail::hsv_to_rgb(hue + uniform(rng, -20.0, 20.0), uniform(rng, 0.6, 0.9), uniform(rng, 0.75, 1.0));
    o.x = uniform(rng, 0.25, 0.75);
    o.y = uniform(rng, 0.25, 0.75);
    o.vx = gx + (k == 0 ? 0.0 : uniform(rng, -0.15, 0.15));
    o.vy = gy + (k == 0 ? 0.0 : uniform(rng, -0.15, 0.15));
    s.objects.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Clip transforms

/// (1 - alpha) * v1 + alpha * v2, pointwise.
inline VideoClip blend(const VideoClip& v1, const VideoClip& v2, double alpha) {
  if (!v1.same_shape(v2))
    throw std::invalid_argument("blend: shape mismatch " + geometry_string(v1) + " vs " + geometry_string(v2));
  if (!(alpha >= 0 && alpha <= 1)) throw std::invalid_argument("blend: alpha outside [0,1]");
  VideoClip out = v1;
  const float a = static_cast<float>(alpha), b = static_cast<float>(1.0 - alpha);
  if (alpha == 0) return out;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::min(1.0f, std::max(0.0f, b * v1.data[i] + a * v2.data[i]));
  return out;
}

/// Repeat frame `frame_index` `frames_out` times.
inline VideoClip make_frozen(const VideoClip& clip, int frame_index, int frames_out = 32) {
  if (frame_index < 0 || frame_index >= clip.frames)
    throw std::out_of_range("make_frozen: frame index " + std::to_string(frame_index) + " outside [0," +
                            std::to_string(clip.frames) + ")");
  if (frames_out < 1) throw std::invalid_argument("make_frozen: frames_out must be positive");
  VideoClip out(frames_out, clip.height, clip.width, clip.channels);
  out.fps = clip.fps;
  for (int t = 0; t < frames_out; ++t)
    std::copy(clip.frame(frame_index), clip.frame(frame_index) + clip.frame_size(), out.frame(t));
  return out;
}

inline VideoClip make_solid_color(const Rgb& rgb, int frames, int height, int width) {
  for (float v : rgb)
    if (!(v >= 0 && v <= 1)) throw std::invalid_argument("make_solid_color: component outside [0,1]");
  VideoClip out(frames, height, width, 3);
  for (std::size_t p = 0; p < out.pixels(); ++p)
    for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = rgb[c];
  return out;
}

struct NamedColor {
  const char* name;
  Rgb rgb;
};

inline constexpr std::array<NamedColor, 8> kFilterColors{{{"black", {0, 0, 0}},
                                                          {"white", {1, 1, 1}},
                                                          {"green", {0, 1, 0}},
                                                          {"red", {1, 0, 0}},
                                                          {"yellow", {1, 1, 0}},
                                                          {"blue", {0, 0, 1}},
                                                          {"cyan", {0, 1, 1}},
                                                          {"magenta", {1, 0, 1}}}};

inline Rgb color_by_name(const std::string& name) {
  for (const auto& c : kFilterColors)
    if (name == c.name) return c.rgb;
  throw std::invalid_argument("unknown color '" + name + "'");
}

/// Mean squared frame-to-frame change; zero for a frozen clip.
inline double temporal_variance(const VideoClip& clip) {
  if (clip.frames < 2) return 0;
  double s = 0;
  for (int t = 1; t < clip.frames; ++t)
    for (std::size_t i = 0; i < clip.frame_size(); ++i) {
      const double d = clip.frame(t)[i] - clip.frame(t - 1)[i];
      s += d * d;
    }
  return s / (static_cast<double>(clip.frames - 1) * clip.frame_size());
}

/// Bilinear resize of every frame (half-pixel centres).
inline VideoClip resize_bilinear(const VideoClip& clip, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("resize_bilinear: empty target");
  if (height == clip.height && width == clip.width) return clip;
  VideoClip out(clip.frames, height, width, clip.channels);
  out.fps = clip.fps;
  const double sy = static_cast<double>(clip.height) / height, sx = static_cast<double>(clip.width) / width;
  std::vector<int> x0(width), x1(width);
  std::vector<float> wx(width);
  for (int x = 0; x < width; ++x) {
    const double src = std::max(0.0, (x + 0.5) * sx - 0.5);
    x0[x] = std::min(static_cast<int>(src), clip.width - 1);
    x1[x] = std::min(x0[x] + 1, clip.width - 1);
    wx[x] = static_cast<float>(src - x0[x]);
  }
  for (int t = 0; t < clip.frames; ++t)
    for (int y = 0; y < height; ++y) {
      const double src = std::max(0.0, (y + 0.5) * sy - 0.5);
      const int y0 = std::min(static_cast<int>(src), clip.height - 1);
      const int y1 = std::min(y0 + 1, clip.height - 1);
      const float wy = static_cast<float>(src - y0);
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < clip.channels; ++c) {
          const float a = clip.at(t, y0, x0[x], c), b = clip.at(t, y0, x1[x], c);
          const float d = clip.at(t, y1, x0[x], c), e = clip.at(t, y1, x1[x], c);
          const float top = a + (b - a) * wx[x], bot = d + (e - d) * wx[x];
          out.at(t, y, x, c) = std::min(1.0f, std::max(0.0f, top + (bot - top) * wy));
        }
    }
  return out;
}

/// Spatial size after scaling the shortest side to ceil(1.15 * shortest crop side).
inline std::pair<int, int> augment_resize_shape(int height, int width, int crop_h, int crop_w) {
  const int target = static_cast<int>(std::ceil(1.15 * std::min(crop_h, crop_w) - 1e-9));
  if (height <= width) {
    const int w = static_cast<int>(std::lround(static_cast<double>(width) * target / height));
    return {target, std::max(w, target)};
  }
  const int h = static_cast<int>(std::lround(static_cast<double>(height) * target / width));
  return {std::max(h, target), target};
}

/// Resize, random spatiotemporal crop and random left-right flip.
inline VideoClip augment(const VideoClip& clip, int crop_t, int crop_h, int crop_w, std::uint64_t seed) {
  if (crop_t < 1 || crop_h < 1 || crop_w < 1) throw std::invalid_argument("augment: empty crop");
  if (clip.frames < crop_t)
    throw std::invalid_argument("augment: clip has " + std::to_string(clip.frames) + " frames, crop needs " +
                                std::to_string(crop_t));
  const auto [rh, rw] = augment_resize_shape(clip.height, clip.width, crop_h, crop_w);
  if (rh < crop_h || rw < crop_w) throw std::invalid_argument("augment: clip aspect too extreme for the crop");
  Rng rng(seed);
  const int t0 = uniform_int(rng, 0, clip.frames - crop_t);
  const int y0 = uniform_int(rng, 0, rh - crop_h);
  const int x0 = uniform_int(rng, 0, rw - crop_w);
  const bool flip = coin(rng);

  // resize only the frames we keep
  VideoClip window(crop_t, clip.height, clip.width, 3);
  window.fps = clip.fps;
  std::copy(clip.frame(t0), clip.frame(t0) + crop_t * clip.frame_size(), window.data.begin());
  const VideoClip resized = resize_bilinear(window, rh, rw);

  VideoClip out(crop_t, crop_h, crop_w, 3);
  out.fps = clip.fps;
  for (int t = 0; t < crop_t; ++t)
    for (int y = 0; y < crop_h; ++y)
      for (int x = 0; x < crop_w; ++x) {
        const int sx = flip ? x0 + crop_w - 1 - x : x0 + x;
        for (int c = 0; c < 3; ++c) out.at(t, y, x, c) = resized.at(t, y0 + y, sx, c);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Corpora

class Corpus {
 public:
  virtual ~Corpus() = default;
  virtual std::size_t size() const = 0;
  virtual VideoClip clip(std::size_t index) const = 0;
  virtual int label(std::size_t index) const = 0;
};

namespace detail {

// u8 cache; clips are quantized exactly like a u8 rawvid corpus on disk
struct ClipCache {
  struct Entry {
    int frames = 0, height = 0, width = 0;
    double fps = 25;
    std::vector<std::uint8_t> bytes;
  };
  std::vector<Entry> entries;

  void put(std::size_t i, const VideoClip& c) {
    auto& e = entries[i];
    e.frames = c.frames;
    e.height = c.height;
    e.width = c.width;
    e.fps = c.fps;
    e.bytes.resize(c.data.size());
    for (std::size_t k = 0; k < c.data.size(); ++k) e.bytes[k] = quantize_u8(c.data[k]);
  }
  bool has(std::size_t i) const { return !entries[i].bytes.empty(); }
  VideoClip get(std::size_t i) const {
    const auto& e = entries[i];
    VideoClip c(e.frames, e.height, e.width, 3);
    c.fps = e.fps;
    for (std::size_t k = 0; k < e.bytes.size(); ++k) c.data[k] = static_cast<float>(e.bytes[k]) / 255.0f;
    return c;
  }
};

}  // namespace detail

struct ProceduralCorpusConfig {
  int num_clips = 600;
  int frames = 20;
  int height = 74;
  int width = 74;
  double fps = 25;
  std::uint64_t seed = 1;
};

/// Scenes rendered on demand from (seed, index), cached as u8.
class ProceduralCorpus final : public Corpus {
 public:
  explicit ProceduralCorpus(ProceduralCorpusConfig cfg) : cfg_(cfg) {
    if (cfg_.num_clips < 1) throw std::invalid_argument("ProceduralCorpus: empty corpus");
    specs_.reserve(cfg_.num_clips);
    for (int i = 0; i < cfg_.num_clips; ++i) specs_.push_back(random_scene(sub_seed(cfg_.seed, i)));
    cache_.entries.resize(cfg_.num_clips);
  }

  std::size_t size() const override { return specs_.size(); }
  int label(std::size_t i) const override { return scene_label(specs_.at(i)); }
  VideoClip clip(std::size_t i) const override {
    if (!cache_.has(i)) {
      auto [c, l] = synth_clip(specs_.at(i), cfg_.frames, cfg_.height, cfg_.width, sub_seed(cfg_.seed ^ 0xB6u, i));
      c.fps = cfg_.fps;
      cache_.put(i, c);
    }
    return cache_.get(i);
  }
  const SceneSpec& spec(std::size_t i) const { return specs_.at(i); }
  const ProceduralCorpusConfig& config() const { return cfg_; }

 private:
  ProceduralCorpusConfig cfg_;
  std::vector<SceneSpec> specs_;
  mutable detail::ClipCache cache_;
};

struct ManifestEntry {
  std::string clip_path;
  int label = 0;
};

inline std::vector<ManifestEntry> read_corpus_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed corpus manifest '" + path.string() + "': " + e.what());
  }
  if (!j.is_array()) throw IoError("corpus manifest '" + path.string() + "' is not a JSON list");
  std::vector<ManifestEntry> out;
  for (const auto& e : j) out.push_back({e.at("clip_path").get<std::string>(), e.at("label").get<int>()});
  return out;
}

inline void write_corpus_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) j.push_back({{"clip_path", e.clip_path}, {"label", e.label}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(1) << "\n";
}

/// Clips listed in a manifest; relative paths resolve against the manifest's directory.
class FileCorpus final : public Corpus {
 public:
  explicit FileCorpus(const fs::path& manifest) : root_(manifest.parent_path()), entries_(read_corpus_manifest(manifest)) {
    if (entries_.empty()) throw std::invalid_argument("FileCorpus: empty corpus '" + manifest.string() + "'");
    cache_.entries.resize(entries_.size());
  }
  std::size_t size() const override { return entries_.size(); }
  int label(std::size_t i) const override { return entries_.at(i).label; }
  VideoClip clip(std::size_t i) const override {
    if (!cache_.has(i)) {
      fs::path p = entries_.at(i).clip_path;
      if (p.is_relative()) p = root_ / p;
      cache_.put(i, load_clip(p));
    }
    return cache_.get(i);
  }

 private:
  fs::path root_;
  std::vector<ManifestEntry> entries_;
  mutable detail::ClipCache cache_;
};

// ---------------------------------------------------------------------------
// Blended pair stream

enum class AlphaPolicy { fixed, uniform };
enum class PairMode { normal, frozen, mixed };  // mixed: first clip frozen, second normal

struct PairStreamConfig {
  int frames = 16;
  int height = 64;
  int width = 64;
  AlphaPolicy alpha_policy = AlphaPolicy::fixed;
  double alpha = 0.5;
  PairMode mode = PairMode::normal;
  double solid_color_fraction = 0.0;
  bool same_class = false;
  bool augment = true;
};

NLOHMANN_JSON_SERIALIZE_ENUM(AlphaPolicy, {{AlphaPolicy::fixed, "fixed"}, {AlphaPolicy::uniform, "uniform"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PairMode,
                             {{PairMode::normal, "normal"}, {PairMode::frozen, "frozen"}, {PairMode::mixed, "mixed"}})

inline void to_json(nlohmann::json& j, const PairStreamConfig& c) {
  j = {{"frames", c.frames},
       {"height", c.height},
       {"width", c.width},
       {"alpha_policy", c.alpha_policy},
       {"alpha", c.alpha},
       {"mode", c.mode},
       {"solid_color_fraction", c.solid_color_fraction},
       {"same_class", c.same_class},
       {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, PairStreamConfig& c) {
  PairStreamConfig d;
  c.frames = j.value("frames", d.frames);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.alpha_policy = j.value("alpha_policy", d.alpha_policy);
  c.alpha = j.value("alpha", d.alpha);
  c.mode = j.value("mode", d.mode);
  c.solid_color_fraction = j.value("solid_color_fraction", d.solid_color_fraction);
  c.same_class = j.value("same_class", d.same_class);
  c.augment = j.value("augment", d.augment);
}

inline void to_json(nlohmann::json& j, const ProceduralCorpusConfig& c) {
  j = {{"num_clips", c.num_clips}, {"frames", c.frames}, {"height", c.height},
       {"width", c.width},         {"fps", c.fps},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ProceduralCorpusConfig& c) {
  ProceduralCorpusConfig d;
  c.num_clips = j.value("num_clips", d.num_clips);
  c.frames = j.value("frames", d.frames);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.fps = j.value("fps", d.fps);
  c.seed = j.value("seed", d.seed);
}

struct BlendedSample {
  VideoClip v1, v2;
  double alpha = 0.5;
  VideoClip blended;
  int label1 = -1, label2 = -1;  // -1 for a solid-color clip
};

/// Reproducible stream of blended pairs; sample k depends only on (seed, k).
class PairStream {
 public:
  PairStream(std::shared_ptr<const Corpus> corpus, PairStreamConfig cfg, std::uint64_t seed)
      : corpus_(std::move(corpus)), cfg_(cfg), seed_(seed) {
    if (!corpus_ || corpus_->size() == 0) throw std::invalid_argument("PairStream: empty corpus");
    if (corpus_->size() < 2 && cfg_.solid_color_fraction < 1)
      throw std::invalid_argument("PairStream: need at least two clips to form pairs");
    if (cfg_.alpha_policy == AlphaPolicy::fixed && !(cfg_.alpha >= 0 && cfg_.alpha <= 1))
      throw std::invalid_argument("PairStream: alpha outside [0,1]");
    if (cfg_.same_class) {
      by_label_.resize(kNumClasses);
      for (std::size_t i = 0; i < corpus_->size(); ++i) {
        const int l = corpus_->label(i);
        if (l >= 0 && l < kNumClasses) by_label_[l].push_back(i);
      }
    }
  }

  BlendedSample sample(std::uint64_t index) const {
    Rng rng(sub_seed(seed_, index));
    const int n = static_cast<int>(corpus_->size());
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, n - 1));
    std::size_t j = i;
    if (cfg_.same_class && by_label_[corpus_->label(i)].size() > 1) {
      const auto& pool = by_label_[corpus_->label(i)];
      while (j == i) j = pool[uniform_int(rng, 0, static_cast<int>(pool.size()) - 1)];
    } else if (n > 1) {
      j = static_cast<std::size_t>(uniform_int(rng, 0, n - 2));
      if (j >= i) ++j;  // no self-pairing
    }
    BlendedSample s;
    s.alpha = cfg_.alpha_policy == AlphaPolicy::fixed ? cfg_.alpha : uniform(rng, 0.25, 0.75);
    const bool solid = cfg_.solid_color_fraction > 0 && coin(rng, cfg_.solid_color_fraction);
    const int color = uniform_int(rng, 0, static_cast<int>(kFilterColors.size()) - 1);
    const std::uint64_t aug1 = rng(), aug2 = rng();
    const int freeze1 = uniform_int(rng, 0, cfg_.frames - 1), freeze2 = uniform_int(rng, 0, cfg_.frames - 1);

    s.v1 = prepare(corpus_->clip(i), aug1);
    s.label1 = corpus_->label(i);
    if (solid) {
      s.v2 = make_solid_color(kFilterColors[color].rgb, cfg_.frames, cfg_.height, cfg_.width);
      s.v2.fps = s.v1.fps;
      s.label2 = -1;
    } else {
      s.v2 = prepare(corpus_->clip(j), aug2);
      s.label2 = corpus_->label(j);
    }
    if (cfg_.mode == PairMode::frozen || cfg_.mode == PairMode::mixed)
      s.v1 = make_frozen(s.v1, freeze1, cfg_.frames);
    if (cfg_.mode == PairMode::frozen) s.v2 = make_frozen(s.v2, freeze2, cfg_.frames);
    s.blended = blend(s.v1, s.v2, s.alpha);
    return s;
  }

  BlendedSample next() { return sample(cursor_++); }
  std::uint64_t position() const { return cursor_; }
  void seek(std::uint64_t position) { cursor_ = position; }

  const PairStreamConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return *corpus_; }
  std::uint64_t seed() const { return seed_; }

 private:
  VideoClip prepare(const VideoClip& clip, std::uint64_t seed) const {
    if (cfg_.augment) return augment(clip, cfg_.frames, cfg_.height, cfg_.width, seed);
    if (clip.frames < cfg_.frames || clip.height != cfg_.height || clip.width != cfg_.width)
      throw std::invalid_argument("PairStream: corpus clip " + geometry_string(clip) +
                                  " does not match stream geometry without augmentation");
    VideoClip out(cfg_.frames, clip.height, clip.width, 3);
    out.fps = clip.fps;
    std::copy(clip.data.begin(), clip.data.begin() + out.data.size(), out.data.begin());
    return out;
  }

  std::shared_ptr<const Corpus> corpus_;
  PairStreamConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> by_label_;
};

/// Native corpus geometry for a crop: a few spare frames and the 1.15x side.
inline ProceduralCorpusConfig corpus_for_crop(int frames, int height, int width, int num_clips, std::uint64_t seed) {
  ProceduralCorpusConfig c;
  c.num_clips = num_clips;
  c.frames = frames + 4;
  const auto [h, w] = augment_resize_shape(height, width, height, width);
  c.height = h;
  c.width = w;
  c.seed = seed;
  return c;
}

}  // namespace centrifuge
