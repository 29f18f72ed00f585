#include "doctest.h"

#include <cmath>

#include "matvl/pdf/document.hpp"
#include "matvl/pdf/page.hpp"
#include "matvl/pdf/writer.hpp"
#include "pdf/filters.hpp"
#include "support.hpp"

using namespace matvl;
using namespace matvl::pdf;

namespace {

const char* kHandWritten =
    "%PDF-1.4\n"
    "1 0 obj << /Type /Catalog /Pages 2 0 R >> endobj\n"
    "2 0 obj << /Type /Pages /Kids [3 0 R] /Count 1 /MediaBox [0 0 200 100] >> endobj\n"
    "3 0 obj << /Type /Page /Parent 2 0 R /Resources << /Font << /F1 4 0 R >> >> "
    "/Contents 5 0 R >> endobj\n"
    "4 0 obj << /Type /Font /Subtype /Type1 /BaseFont /Helvetica >> endobj\n"
    "5 0 obj << /Length 44 >> stream\n"
    "BT /F1 10 Tf 20 50 Td (Fig\\0561 \\(a\\)) Tj ET\n"
    "endstream endobj\n"
    "trailer << /Root 1 0 R >>\n"
    "startxref\n"
    "0\n"
    "%%EOF\n";

}  // namespace

TEST_CASE("filters") {
  CHECK(ascii_hex_decode("48 65 6c6C 6F>") == "Hello");
  CHECK(ascii_hex_decode("414>") == "A@");
  CHECK(ascii85_decode("87cURD]i,\"Ebo80~>") == "Hello World!");
  CHECK(ascii85_decode("z~>") == std::string(4, '\0'));
  const std::string rle{'\x02', 'a', 'b', 'c', '\xfe', 'x', '\x80'};
  CHECK(run_length_decode(rle) == "abcxxx");
  const std::string lzw{'\x80', '\x0b', '\x60', '\x50', '\x22', '\x0c', '\x0c', '\x85', '\x01'};
  CHECK(lzw_decode(lzw, true) == "-----A---B");
  const std::string text(5000, 'q');
  CHECK(flate_decode(flate_encode(text)) == text);
}

TEST_CASE("png up predictor") {
  const std::string rows{2, 1, 2, 3, 2, 1, 1, 1};
  PredictorParams p;
  p.predictor = 12;
  p.columns = 3;
  p.colors = 1;
  p.bits_per_component = 8;
  CHECK(apply_predictor(rows, p) == std::string{1, 2, 3, 2, 3, 4});
}

TEST_CASE("damaged xref falls back to a scan") {
  Document doc = Document::parse(kHandWritten);
  REQUIRE(doc.page_count() == 1);
  PageContent page = read_page(doc, 0);
  CHECK(page.width == doctest::Approx(200));
  REQUIRE(page.spans.size() == 1);
  CHECK(page.spans[0].text == "Fig.1 (a)");
  // baseline at y=50 in a 100 unit page, 10 pt Helvetica
  CHECK(page.spans[0].bbox.x0 == doctest::Approx(20));
  CHECK(page.spans[0].bbox.y0 == doctest::Approx(50 - 7.18));
  CHECK(page.spans[0].bbox.y1 == doctest::Approx(50 + 2.07));
}

TEST_CASE("not a pdf") {
  CHECK_THROWS_AS(Document::parse("GIF89a........"), PdfError);
  CHECK_THROWS_AS(Document::parse(""), PdfError);
}

TEST_CASE("builder output parses in every xref flavour") {
  for (int flavour = 0; flavour < 3; ++flavour) {
    CAPTURE(flavour);
    PdfBuilder::Options opt;
    opt.xref_stream = flavour >= 1;
    opt.object_streams = flavour == 2;
    PdfBuilder b(opt);
    b.add_page(300, 400);
    b.add_page(500, 600);
    b.add_text(1, std::vector<std::string>{"Figure 1: first line", "second line"}, 40, 100, 12);
    b.add_image(1, test::pattern(64, 64, 3), Box{40, 20, 140, 90});
    Document doc = Document::parse(b.build());
    REQUIRE(doc.page_count() == 2);
    PageContent p0 = read_page(doc, 0);
    CHECK(p0.width == 300);
    CHECK(p0.spans.empty());
    PageContent p1 = read_page(doc, 1);
    REQUIRE(p1.images.size() == 1);
    CHECK(p1.images[0].bbox == Box{40, 20, 140, 90});
    auto blocks = group_blocks(p1.spans);
    REQUIRE(blocks.size() == 1);
    CHECK(blocks[0].text == "Figure 1: first line\nsecond line");
    CHECK(blocks[0].bbox.x0 == doctest::Approx(40));
    CHECK(blocks[0].bbox.y0 == doctest::Approx(100));
  }
}

TEST_CASE("image xobjects decode for every stored encoding") {
  const Raster src = test::pattern(48, 40, 9, 10);
  struct Case {
    ImageEncoding enc;
    ColorModel model;
    bool exact;
  };
  const Case cases[] = {
      {ImageEncoding::flate_rgb, ColorModel::rgb, true},
      {ImageEncoding::indexed, ColorModel::rgb, true},
      {ImageEncoding::flate_gray, ColorModel::gray, false},
      {ImageEncoding::flate_cmyk, ColorModel::cmyk, false},
      {ImageEncoding::jpeg, ColorModel::rgb, false},
  };
  for (const Case& c : cases) {
    CAPTURE(static_cast<int>(c.enc));
    for (bool form : {false, true}) {
      PdfBuilder b;
      b.add_page();
      b.add_image(0, src, Box{10, 20, 110, 120}, c.enc, form);
      Document doc = Document::parse(b.build());
      PageContent page = read_page(doc, 0);
      REQUIRE(page.images.size() == 1);
      CHECK(page.images[0].bbox.x0 == doctest::Approx(10));
      CHECK(page.images[0].bbox.y1 == doctest::Approx(120));
      DecodedImage img = decode_image_xobject(doc, page.images[0].xobject);
      CHECK(img.raster.width == 48);
      CHECK(img.raster.height == 40);
      CHECK(img.raster.model == c.model);
      if (c.exact) CHECK(img.raster.pixels == src.pixels);
      CHECK(decode_image(img.encoded).width == 48);
    }
  }
}

TEST_CASE("undecodable and unsupported images") {
  PdfBuilder b;
  b.add_page();
  b.add_image(0, test::pattern(32, 32, 1), Box{0, 0, 50, 50}, ImageEncoding::jpx_stub);
  b.add_image(0, test::pattern(32, 32, 1), Box{0, 60, 50, 110}, ImageEncoding::lab);
  Document doc = Document::parse(b.build());
  PageContent page = read_page(doc, 0);
  REQUIRE(page.images.size() == 2);
  CHECK_THROWS_AS(decode_image_xobject(doc, page.images[0].xobject), matvl::Error);
  CHECK_THROWS_AS(decode_image_xobject(doc, page.images[1].xobject), UnsupportedColorSpace);
}

TEST_CASE("corrupted startxref offset still parses") {
  PdfBuilder b;
  b.add_page();
  b.add_text(0, "Figure 3 text", 50, 50, 10);
  std::string bytes = b.build();
  const auto pos = bytes.rfind("startxref");
  REQUIRE(pos != std::string::npos);
  bytes = bytes.substr(0, pos) + "startxref\n99999999\n%%EOF\n";
  Document doc = Document::parse(bytes);
  REQUIRE(doc.page_count() == 1);
  CHECK(read_page(doc, 0).spans.size() == 1);
}

TEST_CASE("text position helpers are inverse") {
  for (double size : {6.0, 9.0, 12.5}) {
    const double top = 123.25;
    CHECK(PdfBuilder::text_top(PdfBuilder::text_baseline(top, size), size) == doctest::Approx(top));
  }
}
