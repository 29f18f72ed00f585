#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "matvl/error.hpp"

namespace matvl {

enum class ColorModel { gray, gray_alpha, rgb, rgba, cmyk };

int channel_count(ColorModel model);

/// 8-bit interleaved pixel buffer.
struct Raster {
  int width = 0;
  int height = 0;
  ColorModel model = ColorModel::rgb;
  std::vector<std::uint8_t> pixels;

  int channels() const { return channel_count(model); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
};

enum class ImageFormat { png, jpeg };

std::string_view to_string(ImageFormat format);

class ImageError : public Error {
 public:
  explicit ImageError(const std::string& message) : Error("image", message) {}
};

std::optional<ImageFormat> sniff_format(std::string_view bytes);

Raster decode_png(std::string_view bytes);
Raster decode_jpeg(std::string_view bytes);
/// Dispatches on the file signature; throws ImageError for anything else.
Raster decode_image(std::string_view bytes);

std::string encode_png(const Raster& raster);
std::string encode_jpeg(const Raster& raster, int quality = 90);

/// Converts any supported model to 8-bit RGB. Alpha is dropped, CMYK uses
/// the naive subtractive transform.
Raster to_rgb(const Raster& raster);

/// Digest over dimensions and RGB pixels; identical pixel content gives the
/// same value regardless of the container format it was decoded from.
std::string pixel_hash(const Raster& raster);

}  // namespace matvl
