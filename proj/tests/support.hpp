#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "matvl/image.hpp"

namespace matvl::test {

/// Deterministic RGB test pattern. `colors` bounds the palette size so the
/// image can also be stored as an indexed fixture.
inline Raster pattern(int w, int h, std::uint32_t seed, int colors = 0) {
  Raster r;
  r.width = w;
  r.height = h;
  r.model = ColorModel::rgb;
  r.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  std::mt19937 rng(seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t* p = &r.pixels[(static_cast<std::size_t>(y) * w + x) * 3];
      if (colors > 0) {
        const int c = static_cast<int>((x / 8 + y / 8 + seed) % static_cast<std::uint32_t>(colors));
        p[0] = static_cast<std::uint8_t>(40 * c);
        p[1] = static_cast<std::uint8_t>(255 - 30 * c);
        p[2] = static_cast<std::uint8_t>(17 * c + seed % 50);
      } else {
        p[0] = static_cast<std::uint8_t>((x * 255) / std::max(1, w - 1));
        p[1] = static_cast<std::uint8_t>((y * 255) / std::max(1, h - 1));
        p[2] = static_cast<std::uint8_t>(rng() & 0xff);
      }
    }
  return r;
}

inline Raster solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Raster out;
  out.width = w;
  out.height = h;
  out.model = ColorModel::rgb;
  out.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    out.pixels[3 * i] = r;
    out.pixels[3 * i + 1] = g;
    out.pixels[3 * i + 2] = b;
  }
  return out;
}

/// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("matvl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace matvl::test
