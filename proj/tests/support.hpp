#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "smg/image.hpp"

namespace smg::test {

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "smg") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ImageGrid random_grid(int h, int w, GridTag tag, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  ImageGrid g = ImageGrid::filled(h, w, tag);
  for (auto& v : g.values) v = u(rng);
  return g;
}

/// Binary +-1 mask with foreground probability p.
inline ImageGrid random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  ImageGrid g = ImageGrid::filled(h, w, GridTag::text);
  for (auto& v : g.values) v = b(rng) ? 1.0f : -1.0f;
  return g;
}

/// Filled axis-aligned rectangle on a background, as a crude glyph.
inline ImageGrid block_glyph(int size, int top, int left, int height, int width) {
  ImageGrid g = ImageGrid::filled(size, size, GridTag::text);
  for (int y = top; y < top + height; ++y)
    for (int x = left; x < left + width; ++x) g.at(0, y, x) = 1.0f;
  return g;
}

}  // namespace smg::test
