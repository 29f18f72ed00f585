#include "matvl/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
// jpeglib.h needs FILE and size_t declared first
#include <jpeglib.h>

#include "matvl/digest.hpp"

namespace matvl {

int channel_count(ColorModel model) {
  switch (model) {
    case ColorModel::gray: return 1;
    case ColorModel::gray_alpha: return 2;
    case ColorModel::rgb: return 3;
    case ColorModel::rgba: return 4;
    case ColorModel::cmyk: return 4;
  }
  return 0;
}

std::string_view to_string(ImageFormat format) {
  return format == ImageFormat::png ? "png" : "jpeg";
}

std::optional<ImageFormat> sniff_format(std::string_view bytes) {
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0) return ImageFormat::png;
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xff &&
      static_cast<unsigned char>(bytes[1]) == 0xd8 && static_cast<unsigned char>(bytes[2]) == 0xff)
    return ImageFormat::jpeg;
  return std::nullopt;
}

Raster decode_png(std::string_view bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ImageError(std::string("png: ") + image.message);
  Raster out;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  if (color) {
    image.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    out.model = alpha ? ColorModel::rgba : ColorModel::rgb;
  } else {
    image.format = alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY;
    out.model = alpha ? ColorModel::gray_alpha : ColorModel::gray;
  }
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("png: " + msg);
  }
  if (out.width <= 0 || out.height <= 0) throw ImageError("png: empty image");
  return out;
}

std::string encode_png(const Raster& raster) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  const Raster* src = &raster;
  Raster converted;
  switch (raster.model) {
    case ColorModel::gray: image.format = PNG_FORMAT_GRAY; break;
    case ColorModel::gray_alpha: image.format = PNG_FORMAT_GA; break;
    case ColorModel::rgb: image.format = PNG_FORMAT_RGB; break;
    case ColorModel::rgba: image.format = PNG_FORMAT_RGBA; break;
    case ColorModel::cmyk:
      converted = to_rgb(raster);
      src = &converted;
      image.format = PNG_FORMAT_RGB;
      break;
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, src->pixels.data(), 0, nullptr))
    throw ImageError(std::string("png encode: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, src->pixels.data(), 0, nullptr))
    throw ImageError(std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

}  // namespace

Raster decode_jpeg(std::string_view bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  err.pub.emit_message = jpeg_silent;
  Raster out;
  // Nothing with a destructor may be created between setjmp and the end of
  // decoding; `out` is declared above.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  bool inverted = false;
  switch (cinfo.jpeg_color_space) {
    case JCS_GRAYSCALE:
      cinfo.out_color_space = JCS_GRAYSCALE;
      out.model = ColorModel::gray;
      break;
    case JCS_CMYK:
    case JCS_YCCK:
      cinfo.out_color_space = JCS_CMYK;
      out.model = ColorModel::cmyk;
      inverted = cinfo.saw_Adobe_marker;
      break;
    default:
      cinfo.out_color_space = JCS_RGB;
      out.model = ColorModel::rgb;
      break;
  }
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  const std::size_t stride = static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components;
  out.pixels.resize(stride * cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + stride * cinfo.output_scanline;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  if (inverted)
    for (auto& v : out.pixels) v = static_cast<std::uint8_t>(255 - v);
  if (out.width <= 0 || out.height <= 0) throw ImageError("jpeg: empty image");
  return out;
}

namespace {

std::string encode_jpeg_direct(const Raster* src, int quality) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw ImageError(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(src->width);
  cinfo.image_height = static_cast<JDIMENSION>(src->height);
  cinfo.input_components = src->channels();
  cinfo.in_color_space = src->model == ColorModel::gray   ? JCS_GRAYSCALE
                         : src->model == ColorModel::cmyk ? JCS_CMYK
                                                          : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(src->width) * src->channels();
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(src->pixels.data() + stride * cinfo.next_scanline);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::string out(reinterpret_cast<char*>(buffer), size);
  std::free(buffer);
  return out;
}

}  // namespace

std::string encode_jpeg(const Raster& raster, int quality) {
  if (raster.model == ColorModel::rgb || raster.model == ColorModel::gray ||
      raster.model == ColorModel::cmyk)
    return encode_jpeg_direct(&raster, quality);
  const Raster rgb = to_rgb(raster);
  return encode_jpeg_direct(&rgb, quality);
}

Raster decode_image(std::string_view bytes) {
  auto format = sniff_format(bytes);
  if (!format) throw ImageError("unrecognized image signature");
  return *format == ImageFormat::png ? decode_png(bytes) : decode_jpeg(bytes);
}

Raster to_rgb(const Raster& raster) {
  if (raster.model == ColorModel::rgb) return raster;
  Raster out;
  out.width = raster.width;
  out.height = raster.height;
  out.model = ColorModel::rgb;
  const std::size_t n = raster.pixel_count();
  out.pixels.resize(n * 3);
  const int ch = raster.channels();
  const auto* in = raster.pixels.data();
  auto* dst = out.pixels.data();
  for (std::size_t i = 0; i < n; ++i, in += ch, dst += 3) {
    switch (raster.model) {
      case ColorModel::gray:
      case ColorModel::gray_alpha:
        dst[0] = dst[1] = dst[2] = in[0];
        break;
      case ColorModel::rgba:
        dst[0] = in[0];
        dst[1] = in[1];
        dst[2] = in[2];
        break;
      case ColorModel::cmyk: {
        const int k = 255 - in[3];
        for (int c = 0; c < 3; ++c)
          dst[c] = static_cast<std::uint8_t>((255 - in[c]) * k / 255);
        break;
      }
      case ColorModel::rgb:
        break;
    }
  }
  return out;
}

std::string pixel_hash(const Raster& raster) {
  const Raster rgb = to_rgb(raster);
  std::string buf = std::to_string(rgb.width) + "x" + std::to_string(rgb.height) + ":";
  buf.append(reinterpret_cast<const char*>(rgb.pixels.data()), rgb.pixels.size());
  return sha256_hex(buf);
}

}  // namespace matvl
