#pragma once

#include <string>
#include <vector>

#include "matvl/geometry.hpp"
#include "matvl/image.hpp"
#include "matvl/pdf/document.hpp"

namespace matvl::pdf {

/// One text-showing operation, positioned in y-down page coordinates.
struct TextSpan {
  std::string text;  // UTF-8
  Box bbox;
  double font_size = 0;
  double baseline = 0;
};

/// An image XObject painted on the page. `bbox` is the unit square mapped
/// through the CTM, in y-down page coordinates clamped to the page.
struct ImagePlacement {
  Box bbox;
  Object xobject;
  std::string resource_name;
};

struct PageContent {
  std::size_t page_index = 0;
  double width = 0;
  double height = 0;
  std::vector<TextSpan> spans;
  std::vector<ImagePlacement> images;
  std::vector<std::string> warnings;
};

/// Interprets the page's content streams (including nested form XObjects).
/// Content errors become warnings; whatever was read before them is kept.
PageContent read_page(const Document& doc, std::size_t page_index);

/// Paragraph-level grouping of spans: spans sharing a baseline form lines,
/// vertically adjacent and overlapping lines form blocks. Lines inside a
/// block are joined with '\n'.
struct LayoutBlock {
  std::string text;
  Box bbox;
};

std::vector<LayoutBlock> group_blocks(const std::vector<TextSpan>& spans);

class UnsupportedColorSpace : public PdfError {
 public:
  explicit UnsupportedColorSpace(const std::string& space)
      : PdfError("unsupported color space " + space) {}
};

struct DecodedImage {
  std::string encoded;  // original JPEG bytes, or PNG re-encoding of raw samples
  ImageFormat format = ImageFormat::png;
  Raster raster;        // native color model (gray, rgb or cmyk)
};

/// Decodes an image XObject. Throws UnsupportedColorSpace for Lab, DeviceN,
/// Separation and pattern spaces; ImageError or PdfError when the samples
/// cannot be decoded.
DecodedImage decode_image_xobject(const Document& doc, const Object& xobject);

}  // namespace matvl::pdf
