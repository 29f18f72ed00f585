#include "matvl/pdf/page.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "lexer.hpp"
#include "standard_metrics.hpp"

namespace matvl::pdf {

namespace {

constexpr int kMaxFormDepth = 12;
constexpr std::size_t kMaxOperators = 5'000'000;

struct Matrix {
  double a = 1, b = 0, c = 0, d = 1, e = 0, f = 0;

  // this applied first, then `o`
  Matrix then(const Matrix& o) const {
    return {a * o.a + b * o.c,       a * o.b + b * o.d,       c * o.a + d * o.c,
            c * o.b + d * o.d,       e * o.a + f * o.c + o.e, e * o.b + f * o.d + o.f};
  }
  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + c * y + e;
    oy = b * x + d * y + f;
  }
};

Matrix matrix_from(const std::vector<Object>& ops, std::size_t start) {
  Matrix m;
  m.a = ops[start].number().value_or(1);
  m.b = ops[start + 1].number().value_or(0);
  m.c = ops[start + 2].number().value_or(0);
  m.d = ops[start + 3].number().value_or(1);
  m.e = ops[start + 4].number().value_or(0);
  m.f = ops[start + 5].number().value_or(0);
  return m;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

std::string utf16be_to_utf8(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i + 1 < s.size(); i += 2) {
    std::uint32_t u = (static_cast<unsigned char>(s[i]) << 8) | static_cast<unsigned char>(s[i + 1]);
    if (u >= 0xd800 && u < 0xdc00 && i + 3 < s.size()) {
      std::uint32_t lo =
          (static_cast<unsigned char>(s[i + 2]) << 8) | static_cast<unsigned char>(s[i + 3]);
      if (lo >= 0xdc00 && lo < 0xe000) {
        append_utf8(out, 0x10000 + ((u - 0xd800) << 10) + (lo - 0xdc00));
        i += 2;
        continue;
      }
    }
    append_utf8(out, u);
  }
  return out;
}

std::uint32_t code_of(std::string_view s) {
  std::uint32_t v = 0;
  for (unsigned char ch : s) v = (v << 8) | ch;
  return v;
}

// WinAnsi code points for 0x80..0x9f; everything else maps as Latin-1.
constexpr std::array<std::uint16_t, 32> kWinAnsiHigh = {
    0x20ac, 0,      0x201a, 0x0192, 0x201e, 0x2026, 0x2020, 0x2021, 0x02c6, 0x2030, 0x0160,
    0x2039, 0x0152, 0,      0x017d, 0,      0,      0x2018, 0x2019, 0x201c, 0x201d, 0x2022,
    0x2013, 0x2014, 0x02dc, 0x2122, 0x0161, 0x203a, 0x0153, 0,      0x017e, 0x0178};

std::uint32_t glyph_name_to_unicode(const std::string& name) {
  static const std::map<std::string, std::uint32_t> kNames = {
      {"space", ' '},      {"period", '.'},     {"comma", ','},        {"colon", ':'},
      {"semicolon", ';'},  {"hyphen", '-'},     {"parenleft", '('},    {"parenright", ')'},
      {"quoteright", 0x2019}, {"quoteleft", 0x2018}, {"endash", 0x2013}, {"emdash", 0x2014},
      {"fi", 0xfb01},      {"fl", 0xfb02},      {"zero", '0'},         {"one", '1'},
      {"two", '2'},        {"three", '3'},      {"four", '4'},         {"five", '5'},
      {"six", '6'},        {"seven", '7'},      {"eight", '8'},        {"nine", '9'},
      {"slash", '/'},      {"bullet", 0x2022},  {"quotedblleft", 0x201c}, {"quotedblright", 0x201d}};
  if (name.size() == 1) return static_cast<unsigned char>(name[0]);
  if (auto it = kNames.find(name); it != kNames.end()) return it->second;
  if (name.size() == 7 && name.rfind("uni", 0) == 0)
    return static_cast<std::uint32_t>(std::strtoul(name.c_str() + 3, nullptr, 16));
  return 0;
}

struct FontInfo {
  bool two_byte = false;
  std::map<std::uint32_t, std::string> to_unicode;
  std::map<std::uint32_t, std::uint32_t> differences;
  std::map<std::uint32_t, double> widths;  // glyph units (1/1000 em)
  double default_width = 0;
  bool has_widths = false;
  double ascent = kHelveticaAscent;
  double descent = kHelveticaDescent;
  double width_scale = 1.0;  // Type3 FontMatrix correction

  double width(std::uint32_t code) const {
    if (auto it = widths.find(code); it != widths.end()) return it->second * width_scale;
    if (has_widths || two_byte) return default_width * width_scale;
    return helvetica_width(code);
  }

  std::string decode(std::uint32_t code) const {
    if (auto it = to_unicode.find(code); it != to_unicode.end()) return it->second;
    std::string out;
    if (two_byte) {
      if (code >= 0x20) append_utf8(out, code);
      return out;
    }
    if (auto it = differences.find(code); it != differences.end()) {
      if (it->second) append_utf8(out, it->second);
      return out;
    }
    if (code >= 0x80 && code < 0xa0) {
      if (auto cp = kWinAnsiHigh[code - 0x80]) append_utf8(out, cp);
    } else if (code >= 0x20 || code == '\t') {
      append_utf8(out, code);
    }
    return out;
  }
};

void parse_to_unicode(std::string_view cmap, FontInfo& font) {
  Lexer lex(cmap);
  std::vector<Token> operands;
  for (;;) {
    Token t = lex.next();
    if (t.kind == Token::Kind::eof) break;
    if (t.is_keyword("beginbfchar")) {
      for (;;) {
        Token src = lex.next();
        if (src.is_keyword("endbfchar") || src.kind == Token::Kind::eof) break;
        Token dst = lex.next();
        if (src.kind != Token::Kind::hex_string) continue;
        if (src.text.size() >= 2) font.two_byte = true;
        if (dst.kind == Token::Kind::hex_string)
          font.to_unicode[code_of(src.text)] = utf16be_to_utf8(dst.text);
        else if (dst.kind == Token::Kind::name)
          if (auto cp = glyph_name_to_unicode(dst.text)) {
            std::string s;
            append_utf8(s, cp);
            font.to_unicode[code_of(src.text)] = s;
          }
      }
    } else if (t.is_keyword("beginbfrange")) {
      for (;;) {
        Token lo = lex.next();
        if (lo.is_keyword("endbfrange") || lo.kind == Token::Kind::eof) break;
        Token hi = lex.next();
        Token dst = lex.next();
        if (lo.kind != Token::Kind::hex_string || hi.kind != Token::Kind::hex_string) continue;
        if (lo.text.size() >= 2) font.two_byte = true;
        const std::uint32_t a = code_of(lo.text);
        const std::uint32_t b = code_of(hi.text);
        if (b < a || b - a > 0xffff) continue;
        if (dst.kind == Token::Kind::hex_string) {
          std::string base = dst.text;
          for (std::uint32_t c = a; c <= b; ++c) {
            font.to_unicode[c] = utf16be_to_utf8(base);
            if (!base.empty()) base.back() = static_cast<char>(base.back() + 1);
          }
        } else if (dst.kind == Token::Kind::array_begin) {
          std::uint32_t c = a;
          for (;;) {
            Token item = lex.next();
            if (item.kind == Token::Kind::array_end || item.kind == Token::Kind::eof) break;
            if (item.kind == Token::Kind::hex_string && c <= b)
              font.to_unicode[c] = utf16be_to_utf8(item.text);
            ++c;
          }
        }
      }
    }
  }
}

FontInfo load_font(const Document& doc, const Object& font_obj) {
  FontInfo font;
  Object resolved = doc.resolve(font_obj);
  const Dict* d = resolved.dict();
  if (!d) return font;
  const Object subtype = d->get("Subtype");
  Object descriptor;

  if (subtype.is_name("Type0")) {
    font.two_byte = true;
    font.default_width = 1000;
    Object descendants = doc.get(*d, "DescendantFonts");
    Object cid_font;
    if (const Array* arr = descendants.array(); arr && !arr->empty())
      cid_font = doc.resolve((*arr)[0]);
    if (const Dict* cd = cid_font.dict()) {
      if (auto dw = doc.get(*cd, "DW").number()) font.default_width = *dw;
      if (const Array* w = doc.get(*cd, "W").array()) {
        std::size_t i = 0;
        while (i < w->size()) {
          auto first = doc.resolve((*w)[i]).integer();
          if (!first || i + 1 >= w->size()) break;
          Object next = doc.resolve((*w)[i + 1]);
          if (const Array* list = next.array()) {
            for (std::size_t k = 0; k < list->size(); ++k)
              font.widths[static_cast<std::uint32_t>(*first + static_cast<std::int64_t>(k))] =
                  doc.resolve((*list)[k]).number().value_or(font.default_width);
            i += 2;
          } else {
            if (i + 2 >= w->size()) break;
            auto last = next.integer();
            double width = doc.resolve((*w)[i + 2]).number().value_or(font.default_width);
            if (last && *last >= *first && *last - *first < 0x10000)
              for (std::int64_t c = *first; c <= *last; ++c)
                font.widths[static_cast<std::uint32_t>(c)] = width;
            i += 3;
          }
        }
      }
      descriptor = doc.get(*cd, "FontDescriptor");
    }
  } else {
    const auto first_char = doc.get(*d, "FirstChar").integer().value_or(0);
    if (const Array* w = doc.get(*d, "Widths").array()) {
      font.has_widths = true;
      for (std::size_t k = 0; k < w->size(); ++k)
        font.widths[static_cast<std::uint32_t>(first_char + static_cast<std::int64_t>(k))] =
            doc.resolve((*w)[k]).number().value_or(0);
    }
    descriptor = doc.get(*d, "FontDescriptor");
    if (const Dict* fd = descriptor.dict())
      font.default_width = doc.get(*fd, "MissingWidth").number().value_or(0);
    if (subtype.is_name("Type3")) {
      if (const Array* fm = doc.get(*d, "FontMatrix").array(); fm && !fm->empty())
        font.width_scale = doc.resolve((*fm)[0]).number().value_or(0.001) * 1000.0;
      font.ascent = 800;
      font.descent = -200;
    }
    Object enc = doc.get(*d, "Encoding");
    if (const Dict* ed = enc.dict()) {
      if (const Array* diffs = doc.get(*ed, "Differences").array()) {
        std::uint32_t code = 0;
        for (const Object& item : *diffs) {
          Object it = doc.resolve(item);
          if (auto n = it.integer()) {
            code = static_cast<std::uint32_t>(*n);
          } else if (const std::string* name = it.name()) {
            font.differences[code++] = glyph_name_to_unicode(*name);
          }
        }
      }
    }
  }

  if (const Dict* fd = doc.resolve(descriptor).dict()) {
    const double asc = doc.get(*fd, "Ascent").number().value_or(0);
    const double desc = doc.get(*fd, "Descent").number().value_or(0);
    if (asc > 0) font.ascent = asc;
    if (desc < 0) font.descent = desc;
  }

  if (const Stream* tu = doc.get(*d, "ToUnicode").stream()) {
    const bool declared_two_byte = font.two_byte;
    try {
      parse_to_unicode(doc.decode_stream(*tu), font);
    } catch (const PdfError&) {
    }
    if (!subtype.is_name("Type0")) font.two_byte = declared_two_byte;
  }
  return font;
}

struct GraphicsState {
  Matrix ctm;
};

struct TextState {
  Matrix tm;
  Matrix tlm;
  double char_spacing = 0;
  double word_spacing = 0;
  double horizontal_scale = 1.0;
  double leading = 0;
  double rise = 0;
  double font_size = 0;
  const FontInfo* font = nullptr;
};

class Interpreter {
 public:
  Interpreter(const Document& doc, PageContent& out, const PageRecord& page)
      : doc_(doc), out_(out), page_(page) {}

  void run(std::string_view content, const Object& resources, const Matrix& base, int depth) {
    Parser parser(content, 0, false);
    Lexer& lex = parser.lexer();
    std::vector<Object> ops;
    std::vector<GraphicsState> stack;
    GraphicsState gs;
    gs.ctm = base;
    TextState ts;
    std::size_t count = 0;

    for (;;) {
      Token tok = lex.next();
      if (tok.kind == Token::Kind::eof) break;
      if (tok.kind != Token::Kind::keyword || tok.text == "true" || tok.text == "false" ||
          tok.text == "null") {
        ops.push_back(parser.parse_from(tok));
        continue;
      }
      if (++count > kMaxOperators) throw PdfError("content stream operator limit exceeded");
      const std::string& op = tok.text;

      auto num = [&](std::size_t i) { return i < ops.size() ? ops[i].number().value_or(0) : 0.0; };

      if (op == "q") {
        stack.push_back(gs);
      } else if (op == "Q") {
        if (!stack.empty()) {
          gs = stack.back();
          stack.pop_back();
        }
      } else if (op == "cm") {
        if (ops.size() >= 6) gs.ctm = matrix_from(ops, ops.size() - 6).then(gs.ctm);
      } else if (op == "BT") {
        ts.tm = Matrix{};
        ts.tlm = Matrix{};
      } else if (op == "ET") {
      } else if (op == "Tf") {
        if (ops.size() >= 2) {
          ts.font_size = num(ops.size() - 1);
          if (const std::string* name = ops[ops.size() - 2].name()) ts.font = font_for(resources, *name);
        }
      } else if (op == "Tc") {
        ts.char_spacing = num(0);
      } else if (op == "Tw") {
        ts.word_spacing = num(0);
      } else if (op == "Tz") {
        ts.horizontal_scale = num(0) / 100.0;
      } else if (op == "TL") {
        ts.leading = num(0);
      } else if (op == "Ts") {
        ts.rise = num(0);
      } else if (op == "Td" || op == "TD") {
        if (op == "TD") ts.leading = -num(1);
        ts.tlm = Matrix{1, 0, 0, 1, num(0), num(1)}.then(ts.tlm);
        ts.tm = ts.tlm;
      } else if (op == "Tm") {
        if (ops.size() >= 6) {
          ts.tlm = matrix_from(ops, ops.size() - 6);
          ts.tm = ts.tlm;
        }
      } else if (op == "T*") {
        next_line(ts);
      } else if (op == "Tj") {
        if (!ops.empty()) show(ts, gs, {ops.back()});
      } else if (op == "'") {
        next_line(ts);
        if (!ops.empty()) show(ts, gs, {ops.back()});
      } else if (op == "\"") {
        if (ops.size() >= 3) {
          ts.word_spacing = num(0);
          ts.char_spacing = num(1);
          next_line(ts);
          show(ts, gs, {ops[2]});
        }
      } else if (op == "TJ") {
        if (!ops.empty())
          if (const Array* arr = ops.back().array()) show(ts, gs, *arr);
      } else if (op == "Do") {
        if (!ops.empty())
          if (const std::string* name = ops.back().name()) paint_xobject(*name, resources, gs, depth);
      } else if (op == "BI") {
        skip_inline_image(lex);
      }
      ops.clear();
    }
  }

 private:
  void next_line(TextState& ts) {
    ts.tlm = Matrix{1, 0, 0, 1, 0, -ts.leading}.then(ts.tlm);
    ts.tm = ts.tlm;
  }

  const FontInfo* font_for(const Object& resources, const std::string& name) {
    const Dict* res = doc_.resolve(resources).dict();
    if (!res) return nullptr;
    const Dict* fonts = doc_.get(*res, "Font").dict();
    if (!fonts) return nullptr;
    Object font_obj = fonts->get(name);
    std::string key;
    if (auto r = font_obj.ref())
      key = "ref:" + std::to_string(r->num) + ":" + std::to_string(r->gen);
    else
      key = "inline:" + std::to_string(reinterpret_cast<std::uintptr_t>(res)) + ":" + name;
    auto it = fonts_.find(key);
    if (it == fonts_.end()) it = fonts_.emplace(key, load_font(doc_, font_obj)).first;
    return &it->second;
  }

  void show(TextState& ts, const GraphicsState& gs, const Array& items) {
    static const FontInfo kFallback;
    const FontInfo& font = ts.font ? *ts.font : kFallback;
    std::string text;
    double tx = 0;
    const double th = ts.horizontal_scale;
    for (const Object& item : items) {
      if (const String* s = item.string()) {
        const std::string& bytes = s->bytes;
        const std::size_t step = font.two_byte ? 2 : 1;
        for (std::size_t i = 0; i + step <= bytes.size(); i += step) {
          const std::uint32_t code = code_of(std::string_view(bytes).substr(i, step));
          text += font.decode(code);
          double adv = font.width(code) / 1000.0 * ts.font_size + ts.char_spacing;
          if (step == 1 && code == 32) adv += ts.word_spacing;
          tx += adv * th;
        }
      } else if (auto n = item.number()) {
        tx -= *n / 1000.0 * ts.font_size * th;
        if (*n < -250 && !text.empty() && text.back() != ' ') text.push_back(' ');
      }
    }

    const Matrix m = ts.tm.then(gs.ctm);
    const double lo = ts.rise + font.descent / 1000.0 * ts.font_size;
    const double hi = ts.rise + font.ascent / 1000.0 * ts.font_size;
    double xs[4];
    double ys[4];
    m.apply(0, lo, xs[0], ys[0]);
    m.apply(tx, lo, xs[1], ys[1]);
    m.apply(0, hi, xs[2], ys[2]);
    m.apply(tx, hi, xs[3], ys[3]);
    double bx, by;
    m.apply(0, ts.rise, bx, by);
    ts.tm = Matrix{1, 0, 0, 1, tx, 0}.then(ts.tm);

    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return;
    TextSpan span;
    span.text = std::move(text);
    span.font_size = ts.font_size * std::hypot(m.c, m.d);
    span.bbox = to_page(xs, ys);
    span.baseline = page_.box[3] - by;
    out_.spans.push_back(std::move(span));
  }

  Box to_page(const double* xs, const double* ys) const {
    const double x0 = *std::min_element(xs, xs + 4);
    const double x1 = *std::max_element(xs, xs + 4);
    const double y0 = *std::min_element(ys, ys + 4);
    const double y1 = *std::max_element(ys, ys + 4);
    Box b{x0 - page_.box[0], page_.box[3] - y1, x1 - page_.box[0], page_.box[3] - y0};
    return b.clamped(out_.width, out_.height);
  }

  void paint_xobject(const std::string& name, const Object& resources, const GraphicsState& gs,
                     int depth) {
    const Dict* res = doc_.resolve(resources).dict();
    if (!res) return;
    const Dict* xobjects = doc_.get(*res, "XObject").dict();
    if (!xobjects) return;
    const Object ref = xobjects->get(name);
    Object xo = doc_.resolve(ref);
    const Stream* s = xo.stream();
    if (!s) return;
    const Object subtype = s->dict.get("Subtype");
    if (subtype.is_name("Image")) {
      double xs[4];
      double ys[4];
      gs.ctm.apply(0, 0, xs[0], ys[0]);
      gs.ctm.apply(1, 0, xs[1], ys[1]);
      gs.ctm.apply(0, 1, xs[2], ys[2]);
      gs.ctm.apply(1, 1, xs[3], ys[3]);
      ImagePlacement placement;
      placement.bbox = to_page(xs, ys);
      placement.xobject = xo;
      placement.resource_name = name;
      out_.images.push_back(std::move(placement));
    } else if (subtype.is_name("Form")) {
      if (depth >= kMaxFormDepth) {
        out_.warnings.push_back("form XObject nesting too deep at /" + name);
        return;
      }
      if (auto r = ref.ref()) {
        if (!active_forms_.insert(*r).second) return;
      }
      Matrix form_matrix;
      if (const Array* fm = doc_.get(s->dict, "Matrix").array(); fm && fm->size() == 6)
        form_matrix = matrix_from(*fm, 0);
      Object form_res = doc_.get(s->dict, "Resources");
      if (form_res.is_null()) form_res = resources;
      try {
        run(doc_.decode_stream(*s), form_res, form_matrix.then(gs.ctm), depth + 1);
      } catch (const PdfError& e) {
        out_.warnings.push_back("form /" + name + ": " + e.what());
      }
      if (auto r = ref.ref()) active_forms_.erase(*r);
    }
  }

  static void skip_inline_image(Lexer& lex) {
    for (;;) {
      Token t = lex.next();
      if (t.kind == Token::Kind::eof) return;
      if (t.is_keyword("ID")) break;
    }
    std::string_view data = lex.data();
    std::size_t pos = lex.pos() + 1;
    while (pos + 1 < data.size()) {
      if (data[pos] == 'E' && data[pos + 1] == 'I' && is_pdf_whitespace(data[pos - 1]) &&
          (pos + 2 >= data.size() || is_pdf_whitespace(data[pos + 2]) ||
           is_pdf_delimiter(data[pos + 2]))) {
        lex.seek(pos + 2);
        return;
      }
      ++pos;
    }
    lex.seek(data.size());
  }

  const Document& doc_;
  PageContent& out_;
  const PageRecord& page_;
  std::map<std::string, FontInfo> fonts_;
  std::set<Ref> active_forms_;
};

std::string page_content(const Document& doc, const PageRecord& page) {
  Object contents = doc.get(*page.dict.dict(), "Contents");
  std::string data;
  if (const Stream* s = contents.stream()) {
    data = doc.decode_stream(*s);
  } else if (const Array* arr = contents.array()) {
    for (const Object& part : *arr) {
      Object p = doc.resolve(part);
      if (const Stream* s = p.stream()) {
        data += doc.decode_stream(*s);
        data.push_back('\n');
      }
    }
  }
  return data;
}

}  // namespace

PageContent read_page(const Document& doc, std::size_t page_index) {
  const PageRecord& page = doc.page(page_index);
  PageContent out;
  out.page_index = page_index;
  out.width = page.box[2] - page.box[0];
  out.height = page.box[3] - page.box[1];
  if (out.width <= 0 || out.height <= 0) throw PdfError("page has an empty media box");
  Interpreter interp(doc, out, page);
  try {
    interp.run(page_content(doc, page), page.resources, Matrix{}, 0);
  } catch (const PdfError& e) {
    out.warnings.push_back(e.what());
  }
  return out;
}

namespace {

struct Line {
  std::string text;
  Box bbox;
  double baseline = 0;
  double size = 0;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

}  // namespace

std::vector<LayoutBlock> group_blocks(const std::vector<TextSpan>& spans) {
  std::vector<Line> lines;
  for (const TextSpan& span : spans) {
    const double size = std::max(span.font_size, 1.0);
    if (!lines.empty()) {
      Line& cur = lines.back();
      const double gap = span.bbox.x0 - cur.bbox.x1;
      const double ref = std::max(size, cur.size);
      if (std::abs(span.baseline - cur.baseline) <= 0.3 * ref && gap >= -0.5 * ref &&
          gap <= 3.0 * ref) {
        if (gap > 0.15 * ref && !cur.text.empty() && !is_space(cur.text.back()) &&
            !is_space(span.text.front()))
          cur.text.push_back(' ');
        cur.text += span.text;
        cur.bbox = {std::min(cur.bbox.x0, span.bbox.x0), std::min(cur.bbox.y0, span.bbox.y0),
                    std::max(cur.bbox.x1, span.bbox.x1), std::max(cur.bbox.y1, span.bbox.y1)};
        cur.size = std::max(cur.size, size);
        continue;
      }
    }
    lines.push_back(Line{span.text, span.bbox, span.baseline, size});
  }

  std::vector<LayoutBlock> blocks;
  double last_size = 0;
  Box last_line;
  for (const Line& line : lines) {
    if (!blocks.empty()) {
      LayoutBlock& cur = blocks.back();
      const double ref = std::max(line.size, last_size);
      const double vgap = line.bbox.y0 - last_line.y1;
      const bool overlaps_x = line.bbox.x0 <= cur.bbox.x1 && line.bbox.x1 >= cur.bbox.x0;
      const double ratio = line.size > last_size ? line.size / last_size : last_size / line.size;
      if (overlaps_x && vgap >= -0.3 * ref && vgap <= 0.8 * ref && ratio <= 1.3) {
        cur.text.push_back('\n');
        cur.text += line.text;
        cur.bbox = {std::min(cur.bbox.x0, line.bbox.x0), std::min(cur.bbox.y0, line.bbox.y0),
                    std::max(cur.bbox.x1, line.bbox.x1), std::max(cur.bbox.y1, line.bbox.y1)};
        last_line = line.bbox;
        last_size = line.size;
        continue;
      }
    }
    blocks.push_back(LayoutBlock{line.text, line.bbox});
    last_line = line.bbox;
    last_size = line.size;
  }
  return blocks;
}

namespace {

struct ColorSpaceInfo {
  ColorModel model = ColorModel::rgb;
  int components = 3;
  bool indexed = false;
  int hival = 0;
  std::string lookup;
};

ColorSpaceInfo resolve_colorspace(const Document& doc, const Object& cs_obj, int depth = 0) {
  if (depth > 4) throw UnsupportedColorSpace("nested too deeply");
  Object cs = doc.resolve(cs_obj);
  ColorSpaceInfo info;
  auto from_name = [&](const std::string& n) {
    if (n == "DeviceRGB" || n == "RGB" || n == "CalRGB") {
      info.model = ColorModel::rgb;
      info.components = 3;
    } else if (n == "DeviceGray" || n == "G" || n == "CalGray") {
      info.model = ColorModel::gray;
      info.components = 1;
    } else if (n == "DeviceCMYK" || n == "CMYK") {
      info.model = ColorModel::cmyk;
      info.components = 4;
    } else {
      throw UnsupportedColorSpace(n);
    }
  };
  if (const std::string* n = cs.name()) {
    from_name(*n);
    return info;
  }
  const Array* arr = cs.array();
  if (!arr || arr->empty()) throw UnsupportedColorSpace("missing");
  Object family = doc.resolve((*arr)[0]);
  const std::string* fname = family.name();
  if (!fname) throw UnsupportedColorSpace("malformed");
  if (*fname == "ICCBased") {
    Object profile = arr->size() > 1 ? doc.resolve((*arr)[1]) : Object();
    const Dict* pd = profile.dict();
    if (pd) {
      Object alt = doc.get(*pd, "Alternate");
      if (!alt.is_null()) return resolve_colorspace(doc, alt, depth + 1);
      switch (doc.get(*pd, "N").integer().value_or(3)) {
        case 1: from_name("DeviceGray"); return info;
        case 4: from_name("DeviceCMYK"); return info;
        default: from_name("DeviceRGB"); return info;
      }
    }
    from_name("DeviceRGB");
    return info;
  }
  if (*fname == "CalRGB" || *fname == "CalGray" || *fname == "DeviceRGB" ||
      *fname == "DeviceGray" || *fname == "DeviceCMYK") {
    from_name(*fname);
    return info;
  }
  if (*fname == "Indexed" || *fname == "I") {
    if (arr->size() < 4) throw UnsupportedColorSpace("Indexed");
    ColorSpaceInfo base = resolve_colorspace(doc, (*arr)[1], depth + 1);
    if (base.indexed) throw UnsupportedColorSpace("Indexed of Indexed");
    base.indexed = true;
    base.hival = static_cast<int>(doc.resolve((*arr)[2]).integer().value_or(255));
    Object lookup = doc.resolve((*arr)[3]);
    if (const String* s = lookup.string())
      base.lookup = s->bytes;
    else if (const Stream* st = lookup.stream())
      base.lookup = doc.decode_stream(*st);
    return base;
  }
  throw UnsupportedColorSpace(*fname);
}

}  // namespace

DecodedImage decode_image_xobject(const Document& doc, const Object& xobject) {
  const Stream* s = xobject.stream();
  if (!s) throw PdfError("image XObject is not a stream");
  const Dict& d = s->dict;
  std::string codec;
  std::string data = doc.decode_stream(*s, true, &codec);

  DecodedImage out;
  if (codec == "DCTDecode" || codec == "DCT") {
    out.raster = decode_jpeg(data);
    out.encoded = std::move(data);
    out.format = ImageFormat::jpeg;
    return out;
  }
  if (!codec.empty()) throw ImageError("no decoder for " + codec);

  const int width = static_cast<int>(doc.get(d, "Width").integer().value_or(0));
  const int height = static_cast<int>(doc.get(d, "Height").integer().value_or(0));
  if (width <= 0 || height <= 0) throw ImageError("image has no dimensions");
  if (static_cast<std::int64_t>(width) * height > 400'000'000) throw ImageError("image too large");
  const bool mask = doc.get(d, "ImageMask").boolean().value_or(false);
  ColorSpaceInfo cs;
  int bpc = 1;
  if (mask) {
    cs.model = ColorModel::gray;
    cs.components = 1;
  } else {
    cs = resolve_colorspace(doc, d.get("ColorSpace"));
    bpc = static_cast<int>(doc.get(d, "BitsPerComponent").integer().value_or(8));
  }
  if (bpc != 1 && bpc != 2 && bpc != 4 && bpc != 8 && bpc != 16)
    throw ImageError("unsupported bits per component " + std::to_string(bpc));

  const int samples_per_pixel = cs.indexed ? 1 : cs.components;
  const std::size_t row_bytes =
      (static_cast<std::size_t>(width) * samples_per_pixel * bpc + 7) / 8;
  if (data.empty()) throw ImageError("image stream is empty");
  data.resize(row_bytes * static_cast<std::size_t>(height), '\0');

  bool invert_mask = false;
  if (mask) {
    if (const Array* dec = doc.get(d, "Decode").array(); dec && !dec->empty())
      invert_mask = doc.resolve((*dec)[0]).number().value_or(0) > 0.5;
  }

  Raster r;
  r.width = width;
  r.height = height;
  r.model = cs.model;
  r.pixels.resize(r.pixel_count() * cs.components);
  const int maxval = (1 << std::min(bpc, 8)) - 1;
  auto* dst = r.pixels.data();
  for (int y = 0; y < height; ++y) {
    const auto* row = reinterpret_cast<const unsigned char*>(data.data()) + row_bytes * y;
    std::size_t bit = 0;
    for (int x = 0; x < width; ++x) {
      for (int s_i = 0; s_i < samples_per_pixel; ++s_i) {
        unsigned v;
        if (bpc == 8) {
          v = row[bit / 8];
        } else if (bpc == 16) {
          v = row[bit / 8];  // high byte
        } else {
          const unsigned byte = row[bit / 8];
          const unsigned shift = 8 - bpc - (bit % 8);
          v = (byte >> shift) & static_cast<unsigned>(maxval);
        }
        bit += static_cast<std::size_t>(bpc);
        if (cs.indexed) {
          const std::size_t idx = std::min<std::size_t>(v, static_cast<std::size_t>(cs.hival));
          for (int c = 0; c < cs.components; ++c) {
            const std::size_t off = idx * cs.components + c;
            *dst++ = off < cs.lookup.size() ? static_cast<std::uint8_t>(cs.lookup[off]) : 0;
          }
        } else if (mask) {
          const bool set = (v != 0) != invert_mask;
          *dst++ = set ? 255 : 0;
        } else if (bpc < 8) {
          *dst++ = static_cast<std::uint8_t>(v * 255 / static_cast<unsigned>(maxval));
        } else {
          *dst++ = static_cast<std::uint8_t>(v);
        }
      }
    }
  }
  out.raster = std::move(r);
  out.encoded = encode_png(out.raster);
  out.format = ImageFormat::png;
  return out;
}

}  // namespace matvl::pdf
