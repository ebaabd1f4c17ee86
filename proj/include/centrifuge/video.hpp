#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace centrifuge {

/// Frames x height x width x channels, channel-last, row-major. A plain clip
/// has 3 channels; a layer set packs n clips into 3n channels.
template <class S>
struct Video {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  double fps = 25.0;
  std::vector<S> data;

  Video() = default;
  Video(int t, int h, int w, int c, S fill = S{})
      : frames(t), height(h), width(w), channels(c) {
    if (t < 0 || h < 0 || w < 0 || c < 0) throw std::invalid_argument("Video: negative dimension");
    data.assign(static_cast<std::size_t>(t) * h * w * c, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }
  std::size_t pixels() const { return static_cast<std::size_t>(frames) * height * width; }

  std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c;
  }
  S& at(int t, int y, int x, int c) { return data[index(t, y, x, c)]; }
  const S& at(int t, int y, int x, int c) const { return data[index(t, y, x, c)]; }

  S* frame(int t) { return data.data() + t * frame_size(); }
  const S* frame(int t) const { return data.data() + t * frame_size(); }

  bool same_geometry(const Video& o) const {
    return frames == o.frames && height == o.height && width == o.width;
  }
  bool same_shape(const Video& o) const { return same_geometry(o) && channels == o.channels; }

  template <class U>
  Video<U> cast() const {
    Video<U> out;
    out.frames = frames;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.fps = fps;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using VideoClip = Video<float>;
using LayerSet = Video<float>;

inline std::string geometry_string(int t, int h, int w, int c) {
  return std::to_string(t) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
         std::to_string(c);
}

template <class S>
std::string geometry_string(const Video<S>& v) {
  return geometry_string(v.frames, v.height, v.width, v.channels);
}

/// Invariant check for a plain RGB clip. Empty result means valid.
template <class S>
std::vector<std::string> validate_clip(const Video<S>& clip) {
  std::vector<std::string> violations;
  if (clip.frames < 1 || clip.height < 1 || clip.width < 1)
    violations.push_back("empty geometry " + geometry_string(clip));
  if (clip.channels != 3)
    violations.push_back("channel count " + std::to_string(clip.channels) + ", expected 3");
  if (clip.data.size() !=
      static_cast<std::size_t>(clip.frames) * clip.height * clip.width * clip.channels)
    violations.push_back("payload size does not match geometry");
  std::size_t bad = 0;
  for (S v : clip.data)
    if (!(v >= S(0) && v <= S(1))) ++bad;
  if (bad) violations.push_back(std::to_string(bad) + " values outside [0,1]");
  return violations;
}

/// Throws std::invalid_argument listing every violation.
template <class S>
void require_valid_clip(const Video<S>& clip, const std::string& what) {
  auto v = validate_clip(clip);
  if (v.empty()) return;
  std::string msg = what + ": invalid clip:";
  for (auto& s : v) msg += " " + s + ";";
  throw std::invalid_argument(msg);
}

/// Layer `i` (0-based) of a layer set as an RGB video.
template <class S>
Video<S> extract_layer(const Video<S>& layers, int i) {
  if (layers.channels % 3 != 0 || i < 0 || 3 * i >= layers.channels)
    throw std::out_of_range("extract_layer: layer index out of range");
  Video<S> out(layers.frames, layers.height, layers.width, 3);
  out.fps = layers.fps;
  const std::size_t px = layers.pixels();
  for (std::size_t p = 0; p < px; ++p)
    for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = layers.data[p * layers.channels + 3 * i + c];
  return out;
}

/// Pack RGB videos into one layer set (channel-concatenated).
template <class S>
Video<S> stack_layers(const std::vector<Video<S>>& layers) {
  if (layers.empty()) throw std::invalid_argument("stack_layers: no layers");
  const auto& g = layers.front();
  Video<S> out(g.frames, g.height, g.width, 3 * static_cast<int>(layers.size()));
  out.fps = g.fps;
  const std::size_t px = g.pixels();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].same_geometry(g) || layers[i].channels != 3)
      throw std::invalid_argument("stack_layers: geometry mismatch");
    for (std::size_t p = 0; p < px; ++p)
      for (int c = 0; c < 3; ++c) out.data[p * out.channels + 3 * i + c] = layers[i].data[p * 3 + c];
  }
  return out;
}

template <class S>
int layer_count(const Video<S>& layers) {
  return layers.channels / 3;
}

template <class S>
Video<S> clamp01(Video<S> v) {
  for (auto& x : v.data) x = std::min(S(1), std::max(S(0), x));
  return v;
}

template <class S>
double max_abs_diff(const Video<S>& a, const Video<S>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

}  // namespace centrifuge
