#include "matvl/pdf/writer.hpp"

#include <charconv>
#include <map>
#include <stdexcept>

#include "filters.hpp"
#include "matvl/pdf/object.hpp"
#include "standard_metrics.hpp"

namespace matvl::pdf {

namespace {

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (ec != std::errc()) throw PdfError("number formatting failed");
  std::string s(buf, ptr);
  if (s == "-0") s = "0";
  return s;
}

std::string literal(const std::string& utf8) {
  std::string latin1;
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(utf8[i]);
    if (c < 0x80) {
      latin1.push_back(static_cast<char>(c));
    } else if ((c & 0xe0) == 0xc0 && i + 1 < utf8.size()) {
      unsigned cp = ((c & 0x1fu) << 6) | (static_cast<unsigned char>(utf8[i + 1]) & 0x3fu);
      latin1.push_back(cp < 256 ? static_cast<char>(cp) : '?');
      ++i;
    } else {
      latin1.push_back('?');
      while (i + 1 < utf8.size() && (static_cast<unsigned char>(utf8[i + 1]) & 0xc0) == 0x80) ++i;
    }
  }
  std::string out = "(";
  for (char ch : latin1) {
    if (ch == '(' || ch == ')' || ch == '\\') out.push_back('\\');
    out.push_back(ch);
  }
  out.push_back(')');
  return out;
}

std::string hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out = "<";
  for (unsigned char c : bytes) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  out.push_back('>');
  return out;
}

struct ObjectBody {
  std::string dict;    // full "<< ... >>" or other direct object
  std::string stream;  // empty unless is_stream
  bool is_stream = false;
};

struct ImageObject {
  std::string dict_entries;
  std::string data;
};

ImageObject encode_image(const Raster& input, ImageEncoding encoding) {
  const Raster rgb = to_rgb(input);
  const std::string size_entries =
      "/Type /XObject /Subtype /Image /Width " + std::to_string(rgb.width) + " /Height " +
      std::to_string(rgb.height) + " /BitsPerComponent 8";
  ImageObject out;
  switch (encoding) {
    case ImageEncoding::flate_rgb:
      out.data = flate_encode({reinterpret_cast<const char*>(rgb.pixels.data()), rgb.pixels.size()});
      out.dict_entries = size_entries + " /ColorSpace /DeviceRGB /Filter /FlateDecode";
      break;
    case ImageEncoding::flate_gray: {
      std::string gray(rgb.pixel_count(), '\0');
      for (std::size_t i = 0; i < rgb.pixel_count(); ++i)
        gray[i] = static_cast<char>((299 * rgb.pixels[3 * i] + 587 * rgb.pixels[3 * i + 1] +
                                     114 * rgb.pixels[3 * i + 2]) /
                                    1000);
      out.data = flate_encode(gray);
      out.dict_entries = size_entries + " /ColorSpace /DeviceGray /Filter /FlateDecode";
      break;
    }
    case ImageEncoding::flate_cmyk: {
      std::string cmyk(rgb.pixel_count() * 4, '\0');
      for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) cmyk[4 * i + c] = static_cast<char>(255 - rgb.pixels[3 * i + c]);
        cmyk[4 * i + 3] = 0;
      }
      out.data = flate_encode(cmyk);
      out.dict_entries = size_entries + " /ColorSpace /DeviceCMYK /Filter /FlateDecode";
      break;
    }
    case ImageEncoding::indexed: {
      std::map<std::uint32_t, int> palette;
      std::string palette_bytes;
      std::string indices(rgb.pixel_count(), '\0');
      for (std::size_t i = 0; i < rgb.pixel_count(); ++i) {
        const std::uint32_t key = (rgb.pixels[3 * i] << 16) | (rgb.pixels[3 * i + 1] << 8) |
                                  rgb.pixels[3 * i + 2];
        auto it = palette.find(key);
        if (it == palette.end()) {
          if (palette.size() == 256) throw PdfError("indexed fixture needs at most 256 colors");
          it = palette.emplace(key, static_cast<int>(palette.size())).first;
          palette_bytes.append(reinterpret_cast<const char*>(&rgb.pixels[3 * i]), 3);
        }
        indices[i] = static_cast<char>(it->second);
      }
      out.data = flate_encode(indices);
      out.dict_entries = size_entries + " /ColorSpace [/Indexed /DeviceRGB " +
                         std::to_string(palette.size() - 1) + " " + hex(palette_bytes) +
                         "] /Filter /FlateDecode";
      break;
    }
    case ImageEncoding::jpeg:
      out.data = encode_jpeg(rgb, 95);
      out.dict_entries = size_entries + " /ColorSpace /DeviceRGB /Filter /DCTDecode";
      break;
    case ImageEncoding::jpx_stub:
      out.data = "this is not a JPEG 2000 codestream";
      out.dict_entries = size_entries + " /ColorSpace /DeviceRGB /Filter /JPXDecode";
      break;
    case ImageEncoding::lab:
      out.data = flate_encode({reinterpret_cast<const char*>(rgb.pixels.data()), rgb.pixels.size()});
      out.dict_entries =
          size_entries + " /ColorSpace [/Lab << /WhitePoint [0.9505 1 1.089] >>] /Filter /FlateDecode";
      break;
  }
  out.dict_entries += " /Length " + std::to_string(out.data.size());
  return out;
}

}  // namespace

double PdfBuilder::text_top(double baseline, double size) {
  return baseline - kHelveticaAscent / 1000.0 * size;
}

double PdfBuilder::text_baseline(double top, double size) {
  return top + kHelveticaAscent / 1000.0 * size;
}

std::size_t PdfBuilder::add_page(double width, double height) {
  pages_.push_back(Page{width, height, {}, {}});
  return pages_.size() - 1;
}

void PdfBuilder::add_text(std::size_t page, const std::vector<std::string>& lines, double x,
                          double top, double size, double leading_factor) {
  pages_.at(page).texts.push_back(TextItem{lines, x, top, size, leading_factor});
}

void PdfBuilder::add_image(std::size_t page, const Raster& rgb, const Box& rect,
                           ImageEncoding encoding, bool inside_form) {
  pages_.at(page).images.push_back(ImageItem{rgb, rect, encoding, inside_form});
}

std::string PdfBuilder::build() const {
  std::vector<ObjectBody> objects(1);  // index 0 unused
  auto reserve = [&objects] {
    objects.emplace_back();
    return static_cast<int>(objects.size() - 1);
  };
  auto ref = [](int n) { return std::to_string(n) + " 0 R"; };

  const int catalog = reserve();
  const int pages = reserve();
  const int font = reserve();
  const int descriptor = reserve();

  std::string widths;
  for (unsigned c = 32; c <= 126; ++c) widths += (c > 32 ? " " : "") + std::to_string(helvetica_width(c));
  objects[font].dict = "<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica /Encoding /WinAnsiEncoding"
                       " /FirstChar 32 /LastChar 126 /Widths [" + widths + "] /FontDescriptor " +
                       ref(descriptor) + " >>";
  objects[descriptor].dict =
      "<< /Type /FontDescriptor /FontName /Helvetica /Flags 32 /FontBBox [-166 -225 1000 931]"
      " /ItalicAngle 0 /Ascent " + std::to_string(kHelveticaAscent) + " /Descent " +
      std::to_string(kHelveticaDescent) + " /CapHeight 718 /StemV 88 >>";

  std::vector<int> page_ids;
  for (const Page& page : pages_) {
    const int page_id = reserve();
    const int content_id = reserve();
    page_ids.push_back(page_id);

    std::string content;
    std::string xobjects;
    for (std::size_t i = 0; i < page.images.size(); ++i) {
      const ImageItem& item = page.images[i];
      const ImageObject img = encode_image(item.raster, item.encoding);
      const int img_id = reserve();
      objects[img_id].dict = "<< " + img.dict_entries + " >>";
      objects[img_id].stream = img.data;
      objects[img_id].is_stream = true;
      const double w = item.rect.width();
      const double h = item.rect.height();
      const double x = item.rect.x0;
      const double y = page.height - item.rect.y1;
      const std::string im_name = "Im" + std::to_string(i);
      if (item.inside_form) {
        const int form_id = reserve();
        const std::string form_content =
            "q " + num(w) + " 0 0 " + num(h) + " 0 0 cm /Im0 Do Q\n";
        objects[form_id].dict = "<< /Type /XObject /Subtype /Form /BBox [0 0 " + num(w) + " " +
                                num(h) + "] /Matrix [1 0 0 1 " + num(x) + " " + num(y) +
                                "] /Resources << /XObject << /Im0 " + ref(img_id) +
                                " >> >> /Length " + std::to_string(form_content.size()) + " >>";
        objects[form_id].stream = form_content;
        objects[form_id].is_stream = true;
        const std::string fm_name = "Fm" + std::to_string(i);
        xobjects += " /" + fm_name + " " + ref(form_id);
        content += "q /" + fm_name + " Do Q\n";
      } else {
        xobjects += " /" + im_name + " " + ref(img_id);
        content += "q " + num(w) + " 0 0 " + num(h) + " " + num(x) + " " + num(y) + " cm /" +
                   im_name + " Do Q\n";
      }
    }
    for (const TextItem& t : page.texts) {
      const double baseline = page.height - text_baseline(t.top, t.size);
      content += "BT /F1 " + num(t.size) + " Tf " + num(t.size * t.leading_factor) + " TL " +
                 num(t.x) + " " + num(baseline) + " Td";
      for (std::size_t i = 0; i < t.lines.size(); ++i) {
        content += (i == 0 ? " " : " T* ") + literal(t.lines[i]) + " Tj";
      }
      content += " ET\n";
    }

    std::string data = options_.compress_content ? flate_encode(content) : content;
    objects[content_id].dict = "<< /Length " + std::to_string(data.size()) +
                               (options_.compress_content ? " /Filter /FlateDecode" : "") + " >>";
    objects[content_id].stream = std::move(data);
    objects[content_id].is_stream = true;
    objects[page_id].dict = "<< /Type /Page /Parent " + ref(pages) + " /MediaBox [0 0 " +
                            num(page.width) + " " + num(page.height) + "] /Resources << /Font << /F1 " +
                            ref(font) + " >> /XObject <<" + xobjects + " >> >> /Contents " +
                            ref(content_id) + " >>";
  }

  std::string kids;
  for (int id : page_ids) kids += (kids.empty() ? "" : " ") + ref(id);
  objects[pages].dict =
      "<< /Type /Pages /Kids [" + kids + "] /Count " + std::to_string(page_ids.size()) + " >>";
  objects[catalog].dict = "<< /Type /Catalog /Pages " + ref(pages) + " >>";

  const bool use_objstm = options_.object_streams;
  const bool use_xref_stream = options_.xref_stream || use_objstm;

  // Pack non-stream objects into one object stream when requested.
  std::map<int, std::pair<int, int>> packed;  // obj -> (stream obj, index)
  if (use_objstm) {
    const int objstm = reserve();
    std::string header;
    std::string body;
    int index = 0;
    for (int n = 1; n < objstm; ++n) {
      if (objects[n].is_stream) continue;
      header += std::to_string(n) + " " + std::to_string(body.size()) + " ";
      body += objects[n].dict + "\n";
      packed[n] = {objstm, index++};
    }
    const std::string raw = header + body;
    std::string data = flate_encode(raw);
    objects[objstm].dict = "<< /Type /ObjStm /N " + std::to_string(index) + " /First " +
                           std::to_string(header.size()) + " /Filter /FlateDecode /Length " +
                           std::to_string(data.size()) + " >>";
    objects[objstm].stream = std::move(data);
    objects[objstm].is_stream = true;
  }

  std::string out = "%PDF-1.7\n%\xE2\xE3\xCF\xD3\n";
  std::vector<std::size_t> offsets(objects.size(), 0);
  for (std::size_t n = 1; n < objects.size(); ++n) {
    if (packed.count(static_cast<int>(n))) continue;
    offsets[n] = out.size();
    out += std::to_string(n) + " 0 obj\n" + objects[n].dict;
    if (objects[n].is_stream) out += "\nstream\n" + objects[n].stream + "\nendstream";
    out += "\nendobj\n";
  }

  if (!use_xref_stream) {
    const std::size_t xref_at = out.size();
    out += "xref\n0 " + std::to_string(objects.size()) + "\n0000000000 65535 f \n";
    char line[32];
    for (std::size_t n = 1; n < objects.size(); ++n) {
      std::snprintf(line, sizeof line, "%010zu 00000 n \n", offsets[n]);
      out += line;
    }
    out += "trailer\n<< /Size " + std::to_string(objects.size()) + " /Root " + ref(catalog) +
           " >>\nstartxref\n" + std::to_string(xref_at) + "\n%%EOF\n";
    return out;
  }

  const std::size_t xref_id = objects.size();
  const std::size_t xref_at = out.size();
  std::string rows;
  auto put = [&rows](std::uint64_t v, int width) {
    for (int k = width - 1; k >= 0; --k) rows.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  };
  put(0, 1);
  put(0, 4);
  put(0xffff, 2);
  for (std::size_t n = 1; n <= xref_id; ++n) {
    if (auto it = packed.find(static_cast<int>(n)); it != packed.end()) {
      put(2, 1);
      put(static_cast<std::uint64_t>(it->second.first), 4);
      put(static_cast<std::uint64_t>(it->second.second), 2);
    } else {
      put(1, 1);
      put(n == xref_id ? xref_at : offsets[n], 4);
      put(0, 2);
    }
  }
  const std::string data = flate_encode(rows);
  out += std::to_string(xref_id) + " 0 obj\n<< /Type /XRef /Size " + std::to_string(xref_id + 1) +
         " /W [1 4 2] /Root " + ref(catalog) + " /Filter /FlateDecode /Length " +
         std::to_string(data.size()) + " >>\nstream\n" + data + "\nendstream\nendobj\nstartxref\n" +
         std::to_string(xref_at) + "\n%%EOF\n";
  return out;
}

}  // namespace matvl::pdf
