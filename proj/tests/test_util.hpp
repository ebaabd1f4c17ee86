#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "centrifuge/rng.hpp"
#include "centrifuge/video.hpp"

namespace centrifuge::testing {

namespace fs = std::filesystem;

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("centrifuge_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

template <class S = float>
Video<S> random_video(int t, int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Video<S> v(t, h, w, c);
  for (auto& x : v.data) x = static_cast<S>(uniform(rng, lo, hi));
  return v;
}

}  // namespace centrifuge::testing
