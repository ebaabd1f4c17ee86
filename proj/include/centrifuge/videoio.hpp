#pragma once

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "centrifuge/video.hpp"

namespace centrifuge {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian layout");

namespace fs = std::filesystem;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class VideoFormat { rawvid, framedir };
enum class RawDtype : std::uint32_t { u8 = 0, float32 = 1 };

inline VideoFormat parse_format(const std::string& s) {
  if (s == "rawvid") return VideoFormat::rawvid;
  if (s == "framedir") return VideoFormat::framedir;
  throw std::invalid_argument("unknown video format '" + s + "' (expected rawvid|framedir)");
}

inline const char* format_name(VideoFormat f) {
  return f == VideoFormat::rawvid ? "rawvid" : "framedir";
}

/// Directories are frame directories, everything else is rawvid.
inline VideoFormat detect_format(const fs::path& path) {
  return fs::is_directory(path) ? VideoFormat::framedir : VideoFormat::rawvid;
}

inline std::uint8_t quantize_u8(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// ---------------------------------------------------------------------------
// rawvid: "RVID", version, T, H, W, C, dtype (all u32 LE), then THWC payload.

namespace rawvid {

inline constexpr char kMagic[4] = {'R', 'V', 'I', 'D'};
inline constexpr std::uint32_t kVersion = 1;

struct Header {
  std::uint32_t frames = 0, height = 0, width = 0, channels = 0;
  RawDtype dtype = RawDtype::float32;
};

inline void write(const VideoClip& clip, const fs::path& path, RawDtype dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  const std::uint32_t hdr[6] = {kVersion,
                                static_cast<std::uint32_t>(clip.frames),
                                static_cast<std::uint32_t>(clip.height),
                                static_cast<std::uint32_t>(clip.width),
                                static_cast<std::uint32_t>(clip.channels),
                                static_cast<std::uint32_t>(dtype)};
  out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  if (dtype == RawDtype::float32) {
    out.write(reinterpret_cast<const char*>(clip.data.data()),
              static_cast<std::streamsize>(clip.data.size() * sizeof(float)));
  } else {
    std::vector<std::uint8_t> bytes(clip.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_u8(clip.data[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Header read_header(std::istream& in, const std::string& name) {
  char magic[4];
  std::uint32_t hdr[6];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(hdr), sizeof hdr);
  if (!in) throw IoError(name + ": truncated rawvid header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError(name + ": bad magic, not a rawvid file");
  if (hdr[0] != kVersion) throw IoError(name + ": unsupported rawvid version " + std::to_string(hdr[0]));
  if (hdr[5] > 1) throw IoError(name + ": unknown dtype code " + std::to_string(hdr[5]));
  Header h{hdr[1], hdr[2], hdr[3], hdr[4], static_cast<RawDtype>(hdr[5])};
  if (h.frames == 0 || h.height == 0 || h.width == 0 || h.channels == 0)
    throw IoError(name + ": zero dimension in rawvid header");
  if (std::uint64_t(h.frames) * h.height * h.width * h.channels > (std::uint64_t(1) << 34))
    throw IoError(name + ": implausible rawvid geometry");
  return h;
}

inline VideoClip read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const Header h = read_header(in, path.string());
  VideoClip clip(static_cast<int>(h.frames), static_cast<int>(h.height), static_cast<int>(h.width),
                 static_cast<int>(h.channels));
  const std::size_t n = clip.data.size();
  if (h.dtype == RawDtype::float32) {
    in.read(reinterpret_cast<char*>(clip.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    std::vector<std::uint8_t> bytes(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    for (std::size_t i = 0; i < n; ++i) clip.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  }
  if (!in) throw IoError(path.string() + ": payload shorter than header geometry");
  in.peek();
  if (!in.eof()) throw IoError(path.string() + ": trailing bytes after payload");
  return clip;
}

}  // namespace rawvid

// ---------------------------------------------------------------------------
// PNG (8-bit RGB) through libpng.

namespace png {

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

inline void write(const fs::path& path, const Image& img) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png_ptr, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info);
    throw IoError("libpng write error for '" + path.string() + "'");
  }
  png_init_io(png_ptr, fp.get());
  png_set_IHDR(png_ptr, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png_ptr, const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3));
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info);
}

/// Reads any PNG and converts it to 8-bit RGB.
inline Image read(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path.string() + "'");
  png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_ptr ? png_create_info_struct(png_ptr) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png_ptr, nullptr, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info, nullptr);
    throw IoError("malformed PNG '" + path.string() + "'");
  }
  png_init_io(png_ptr, fp.get());
  png_read_info(png_ptr, info);
  const auto color = png_get_color_type(png_ptr, info);
  const auto depth = png_get_bit_depth(png_ptr, info);
  if (depth == 16) png_set_strip_16(png_ptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png_ptr);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info);
  Image img;
  img.width = static_cast<int>(png_get_image_width(png_ptr, info));
  img.height = static_cast<int>(png_get_image_height(png_ptr, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info, nullptr);
  return img;
}

}  // namespace png

// ---------------------------------------------------------------------------
// framedir: frame_%05d.png + meta.json {fps, frames, height, width}.

namespace framedir {

inline fs::path frame_path(const fs::path& dir, int t) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%05d.png", t);
  return dir / name;
}

inline void write(const VideoClip& clip, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
  png::Image img{clip.width, clip.height, {}};
  img.rgb.resize(static_cast<std::size_t>(clip.width) * clip.height * 3);
  for (int t = 0; t < clip.frames; ++t) {
    const float* f = clip.frame(t);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = quantize_u8(f[i]);
    png::write(frame_path(dir, t), img);
  }
  nlohmann::json meta = {{"fps", clip.fps}, {"frames", clip.frames}, {"height", clip.height}, {"width", clip.width}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

inline VideoClip read(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError(dir.string() + ": missing meta.json");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir.string() + ": malformed meta.json: " + e.what());
  }
  for (const char* key : {"fps", "frames", "height", "width"})
    if (!meta.contains(key)) throw IoError(dir.string() + ": meta.json lacks '" + key + "'");
  const int frames = meta["frames"].get<int>();
  const int height = meta["height"].get<int>();
  const int width = meta["width"].get<int>();
  if (frames < 1 || height < 1 || width < 1) throw IoError(dir.string() + ": meta.json has empty geometry");
  VideoClip clip(frames, height, width, 3);
  clip.fps = meta["fps"].get<double>();
  for (int t = 0; t < frames; ++t) {
    const auto path = frame_path(dir, t);
    if (!fs::exists(path)) throw IoError("missing frame '" + path.string() + "'");
    const auto img = png::read(path);
    if (img.width != width || img.height != height)
      throw IoError("frame size mismatch in '" + path.string() + "': " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " vs meta " + std::to_string(width) + "x" +
                    std::to_string(height));
    float* f = clip.frame(t);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) f[i] = static_cast<float>(img.rgb[i]) / 255.0f;
  }
  return clip;
}

}  // namespace framedir

// ---------------------------------------------------------------------------

inline VideoClip load_clip(const fs::path& path, VideoFormat format) {
  if (!fs::exists(path)) throw IoError("no such file or directory: '" + path.string() + "'");
  VideoClip clip = format == VideoFormat::rawvid ? rawvid::read(path) : framedir::read(path);
  auto violations = validate_clip(clip);
  if (!violations.empty()) throw IoError(path.string() + ": decoded clip violates invariants: " + violations.front());
  return clip;
}

inline VideoClip load_clip(const fs::path& path) { return load_clip(path, detect_format(path)); }

/// rawvid payloads default to float32 (exact); u8 quantizes like PNG.
inline void save_clip(const VideoClip& clip, const fs::path& path, VideoFormat format,
                      RawDtype dtype = RawDtype::float32) {
  require_valid_clip(clip, "save_clip");
  if (format == VideoFormat::rawvid)
    rawvid::write(clip, path, dtype);
  else
    framedir::write(clip, path);
}

}  // namespace centrifuge
