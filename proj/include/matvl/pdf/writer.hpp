#pragma once

#include <string>
#include <vector>

#include "matvl/geometry.hpp"
#include "matvl/image.hpp"

namespace matvl::pdf {

/// How an image is stored inside the generated file.
enum class ImageEncoding {
  flate_rgb,
  flate_gray,
  flate_cmyk,
  indexed,     // palette of at most 256 colors, FlateDecode
  jpeg,        // DCTDecode
  jpx_stub,    // JPXDecode with bytes no decoder accepts
  lab,         // Lab color space, which extraction does not support
};

/// Minimal PDF writer used to generate fixtures with exactly known layout.
/// All coordinates are y-down page units; text is set in Helvetica with an
/// explicit font descriptor so glyph extents are reproducible.
class PdfBuilder {
 public:
  struct Options {
    bool compress_content = true;
    bool xref_stream = false;
    bool object_streams = false;  // implies xref_stream
  };

  PdfBuilder() = default;
  explicit PdfBuilder(Options options) : options_(options) {}

  std::size_t add_page(double width = 612, double height = 792);

  /// Sets `lines` starting with the first line's top edge at `top`.
  void add_text(std::size_t page, const std::vector<std::string>& lines, double x, double top,
                double size, double leading_factor = 1.2);
  void add_text(std::size_t page, const std::string& line, double x, double top, double size) {
    add_text(page, std::vector<std::string>{line}, x, top, size);
  }

  void add_image(std::size_t page, const Raster& rgb, const Box& rect,
                 ImageEncoding encoding = ImageEncoding::flate_rgb, bool inside_form = false);

  std::string build() const;

  /// Top edge of a Helvetica line whose baseline sits at `baseline`.
  static double text_top(double baseline, double size);
  static double text_baseline(double top, double size);

 private:
  struct TextItem {
    std::vector<std::string> lines;
    double x, top, size, leading_factor;
  };
  struct ImageItem {
    Raster raster;
    Box rect;
    ImageEncoding encoding;
    bool inside_form;
  };
  struct Page {
    double width, height;
    std::vector<TextItem> texts;
    std::vector<ImageItem> images;
  };

  Options options_;
  std::vector<Page> pages_;
};

}  // namespace matvl::pdf
