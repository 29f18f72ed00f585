#include "matvl/pdf/document.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <optional>
#include <set>

#include "filters.hpp"
#include "lexer.hpp"

namespace matvl::pdf {

namespace {

constexpr int kMaxResolveDepth = 32;
constexpr int kMaxPageTreeDepth = 64;

bool is_image_codec(std::string_view f) {
  return f == "DCTDecode" || f == "DCT" || f == "JPXDecode" || f == "JBIG2Decode" ||
         f == "CCITTFaxDecode" || f == "CCF";
}

}  // namespace

Document Document::parse(std::string bytes) {
  Document doc;
  doc.bytes_ = std::make_shared<const std::string>(std::move(bytes));
  const std::string& data = *doc.bytes_;
  const auto header = data.find("%PDF-");
  if (header == std::string::npos || header > 1024) throw PdfError("missing %PDF- header");

  try {
    doc.load_xref();
  } catch (const PdfError&) {
    doc.xref_.clear();
    doc.trailer_ = Dict();
  }
  auto root_ok = [&doc] {
    Object root = doc.resolve(doc.trailer_.get("Root"));
    return root.dict() != nullptr;
  };
  if (!root_ok()) {
    doc.cache_.clear();
    doc.rebuild_xref_by_scan();
    if (!root_ok()) throw PdfError("document catalog not found");
  }
  doc.collect_pages();
  return doc;
}

void Document::load_xref() {
  const std::string& data = *bytes_;
  const std::size_t tail = data.size() > 2048 ? data.size() - 2048 : 0;
  const std::size_t sx = data.rfind("startxref");
  if (sx == std::string::npos || sx < tail) throw PdfError("startxref not found");
  Lexer lex(data, sx + 9);
  Token off = lex.next();
  if (off.kind != Token::Kind::integer || off.integer < 0 ||
      static_cast<std::size_t>(off.integer) >= data.size())
    throw PdfError("bad startxref offset");
  std::vector<std::size_t> visited;
  read_xref_section(static_cast<std::size_t>(off.integer), visited);
}

void Document::read_xref_section(std::size_t offset, std::vector<std::size_t>& visited) {
  if (std::find(visited.begin(), visited.end(), offset) != visited.end()) return;
  visited.push_back(offset);
  const std::string& data = *bytes_;
  Lexer lex(data, offset);
  Token first = lex.peek();
  Dict section_trailer;

  if (first.is_keyword("xref")) {
    lex.next();
    for (;;) {
      Token t = lex.next();
      if (t.is_keyword("trailer")) break;
      if (t.kind != Token::Kind::integer) throw PdfError("malformed xref table");
      Token count = lex.next();
      if (count.kind != Token::Kind::integer) throw PdfError("malformed xref subsection");
      for (std::int64_t i = 0; i < count.integer; ++i) {
        Token o = lex.next();
        Token g = lex.next();
        Token kind = lex.next();
        if (o.kind != Token::Kind::integer || g.kind != Token::Kind::integer)
          throw PdfError("malformed xref entry");
        const int num = static_cast<int>(t.integer + i);
        if (xref_.count(num)) continue;
        XrefEntry e;
        if (kind.is_keyword("n")) {
          e.kind = XrefEntry::Kind::offset;
          e.offset = static_cast<std::size_t>(o.integer);
        }
        xref_[num] = e;
      }
    }
    Parser p(data, lex.pos());
    Object tr = p.parse_object();
    if (!tr.dict()) throw PdfError("trailer is not a dictionary");
    section_trailer = *tr.dict();
  } else {
    Parser p(data, offset);
    auto ind = p.parse_indirect([this](Ref r) { return load_object(r.num); });
    const Stream* s = ind.object.stream();
    if (!s || !s->dict.get("Type").is_name("XRef")) throw PdfError("xref stream expected");
    section_trailer = s->dict;
    std::string body = decode_stream(*s);
    const Array* w = s->dict.get("W").array();
    if (!w || w->size() != 3) throw PdfError("xref stream /W missing");
    int widths[3];
    for (int i = 0; i < 3; ++i) widths[i] = static_cast<int>((*w)[i].integer().value_or(0));
    const int entry_len = widths[0] + widths[1] + widths[2];
    if (entry_len <= 0) throw PdfError("xref stream /W invalid");
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    if (const Array* idx = s->dict.get("Index").array()) {
      for (std::size_t i = 0; i + 1 < idx->size(); i += 2)
        ranges.emplace_back((*idx)[i].integer().value_or(0), (*idx)[i + 1].integer().value_or(0));
    } else {
      ranges.emplace_back(0, s->dict.get("Size").integer().value_or(0));
    }
    std::size_t pos = 0;
    auto field = [&](int width, std::int64_t dflt) -> std::int64_t {
      if (width == 0) return dflt;
      std::int64_t v = 0;
      for (int k = 0; k < width; ++k) v = (v << 8) | static_cast<unsigned char>(body[pos++]);
      return v;
    };
    for (auto [start, count] : ranges) {
      for (std::int64_t i = 0; i < count; ++i) {
        if (pos + static_cast<std::size_t>(entry_len) > body.size()) break;
        std::int64_t type = field(widths[0], 1);
        std::int64_t f2 = field(widths[1], 0);
        std::int64_t f3 = field(widths[2], 0);
        const int num = static_cast<int>(start + i);
        if (xref_.count(num)) continue;
        XrefEntry e;
        if (type == 1) {
          e.kind = XrefEntry::Kind::offset;
          e.offset = static_cast<std::size_t>(f2);
        } else if (type == 2) {
          e.kind = XrefEntry::Kind::compressed;
          e.offset = static_cast<std::size_t>(f2);
          e.index = static_cast<int>(f3);
        }
        xref_[num] = e;
      }
    }
  }

  if (trailer_.entries().empty()) {
    trailer_ = section_trailer;
  } else {
    for (const auto& [k, v] : section_trailer.entries())
      if (!trailer_.contains(k)) trailer_.set(k, v);
  }
  if (auto stm = section_trailer.get("XRefStm").integer())
    read_xref_section(static_cast<std::size_t>(*stm), visited);
  if (auto prev = section_trailer.get("Prev").integer())
    read_xref_section(static_cast<std::size_t>(*prev), visited);
}

void Document::rebuild_xref_by_scan() {
  const std::string& data = *bytes_;
  xref_.clear();
  trailer_ = Dict();
  std::size_t pos = 0;
  while ((pos = data.find("obj", pos)) != std::string::npos) {
    const std::size_t kw = pos;
    pos += 3;
    if (pos < data.size() && !is_pdf_whitespace(data[pos]) && !is_pdf_delimiter(data[pos])) continue;
    if (kw == 0 || !is_pdf_whitespace(data[kw - 1])) continue;
    // walk back over "<num> <gen> "
    std::size_t i = kw;
    auto back_int = [&](std::size_t& j) -> bool {
      while (j > 0 && is_pdf_whitespace(data[j - 1])) --j;
      std::size_t end = j;
      while (j > 0 && data[j - 1] >= '0' && data[j - 1] <= '9') --j;
      return j < end;
    };
    std::size_t gen_start = i;
    if (!back_int(gen_start)) continue;
    std::size_t num_start = gen_start;
    if (!back_int(num_start)) continue;
    if (num_start > 0 && !is_pdf_whitespace(data[num_start - 1]) && !is_pdf_delimiter(data[num_start - 1]))
      continue;
    const int num = std::atoi(data.c_str() + num_start);
    XrefEntry e;
    e.kind = XrefEntry::Kind::offset;
    e.offset = num_start;
    xref_[num] = e;  // later definitions win, matching incremental updates
  }

  // Objects packed into object streams.
  std::vector<std::pair<int, XrefEntry>> packed;
  for (const auto& [num, e] : xref_) {
    Object o;
    try {
      o = load_object(num);
    } catch (const PdfError&) {
      continue;
    }
    const Stream* s = o.stream();
    if (!s) continue;
    if (s->dict.get("Type").is_name("ObjStm")) {
      std::string body;
      try {
        body = decode_stream(*s);
      } catch (const PdfError&) {
        continue;
      }
      Lexer lex(body);
      const auto n = s->dict.get("N").integer().value_or(0);
      for (std::int64_t k = 0; k < n; ++k) {
        Token objnum = lex.next();
        lex.next();
        if (objnum.kind != Token::Kind::integer) break;
        XrefEntry pe;
        pe.kind = XrefEntry::Kind::compressed;
        pe.offset = static_cast<std::size_t>(num);
        pe.index = static_cast<int>(k);
        packed.emplace_back(static_cast<int>(objnum.integer), pe);
      }
    } else if (s->dict.get("Type").is_name("XRef") && s->dict.contains("Root")) {
      trailer_ = s->dict;
    }
  }
  for (auto& [num, e] : packed) xref_.try_emplace(num, e);
  cache_.clear();

  std::size_t t = data.size();
  while ((t = data.rfind("trailer", t == 0 ? std::string::npos : t - 1)) != std::string::npos) {
    try {
      Parser p(data, t + 7);
      Object tr = p.parse_object();
      if (tr.dict() && tr.dict()->contains("Root")) {
        trailer_ = *tr.dict();
        break;
      }
    } catch (const PdfError&) {
    }
    if (t == 0) break;
  }
  if (!trailer_.contains("Root")) {
    for (const auto& [num, e] : xref_) {
      Object o;
      try {
        o = load_object(num);
      } catch (const PdfError&) {
        continue;
      }
      if (o.dict() && o.dict()->get("Type").is_name("Catalog")) {
        trailer_.set("Root", Object(Ref{num, 0}));
        break;
      }
    }
  }
}

Object Document::load_object(int num) const {
  if (auto it = cache_.find(num); it != cache_.end()) return it->second;
  auto it = xref_.find(num);
  if (it == xref_.end()) return Object();
  const XrefEntry e = it->second;
  Object result;
  // Placeholder breaks reference cycles such as a /Length pointing back.
  cache_[num] = Object();
  try {
    if (e.kind == XrefEntry::Kind::offset) {
      if (e.offset >= bytes_->size()) throw PdfError("object offset out of range");
      Parser p(*bytes_, e.offset);
      auto ind = p.parse_indirect([this](Ref r) { return load_object(r.num); });
      result = ind.object;
    } else if (e.kind == XrefEntry::Kind::compressed) {
      result = load_from_object_stream(e.offset, num);
    }
  } catch (...) {
    cache_.erase(num);
    throw;
  }
  cache_[num] = result;
  return result;
}

Object Document::load_from_object_stream(std::size_t stream_num, int num) const {
  Object holder = load_object(static_cast<int>(stream_num));
  const Stream* s = holder.stream();
  if (!s) throw PdfError("object stream " + std::to_string(stream_num) + " missing");
  const std::string body = decode_stream(*s);
  const auto n = s->dict.get("N").integer().value_or(0);
  const auto first = s->dict.get("First").integer().value_or(0);
  Lexer lex(body);
  std::vector<std::pair<int, std::size_t>> offsets;
  for (std::int64_t k = 0; k < n; ++k) {
    Token a = lex.next();
    Token b = lex.next();
    if (a.kind != Token::Kind::integer || b.kind != Token::Kind::integer) break;
    offsets.emplace_back(static_cast<int>(a.integer), static_cast<std::size_t>(first + b.integer));
  }
  Object wanted;
  for (const auto& [objnum, off] : offsets) {
    if (off >= body.size()) continue;
    Parser p(body, off);
    Object o;
    try {
      o = p.parse_object();
    } catch (const PdfError&) {
      continue;
    }
    // Only objects the xref maps to this stream are cached from here.
    auto xit = xref_.find(objnum);
    if (xit != xref_.end() && xit->second.kind == XrefEntry::Kind::compressed &&
        xit->second.offset == stream_num)
      cache_[objnum] = o;
    if (objnum == num) wanted = o;
  }
  return wanted;
}

Object Document::resolve(const Object& obj) const {
  Object cur = obj;
  for (int depth = 0; depth < kMaxResolveDepth; ++depth) {
    auto r = cur.ref();
    if (!r) return cur;
    cur = load_object(r->num);
  }
  return Object();
}

std::string Document::decode_stream(const Stream& stream, bool stop_at_image_codec,
                                    std::string* pending_codec) const {
  std::vector<std::string> filters;
  std::vector<Object> params;
  Object f = resolve(stream.dict.get("Filter"));
  Object dp = resolve(stream.dict.get("DecodeParms"));
  if (dp.is_null()) dp = resolve(stream.dict.get("DP"));
  if (const std::string* n = f.name()) {
    filters.push_back(*n);
    params.push_back(dp);
  } else if (const Array* arr = f.array()) {
    const Array* parr = dp.array();
    for (std::size_t i = 0; i < arr->size(); ++i) {
      Object fi = resolve((*arr)[i]);
      if (const std::string* n = fi.name()) filters.push_back(*n);
      params.push_back(parr && i < parr->size() ? resolve((*parr)[i]) : (i == 0 ? dp : Object()));
    }
  }

  std::string data = stream.data;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const std::string& name = filters[i];
    if (is_image_codec(name)) {
      if (stop_at_image_codec) {
        if (pending_codec) *pending_codec = name;
        return data;
      }
      throw PdfError("filter " + name + " needs an image codec");
    }
    const Dict* pd = params[i].dict();
    auto param = [&](std::string_view key, int dflt) {
      return pd ? static_cast<int>(resolve(pd->get(key)).integer().value_or(dflt)) : dflt;
    };
    if (name == "FlateDecode" || name == "Fl") {
      data = flate_decode(data);
    } else if (name == "LZWDecode" || name == "LZW") {
      data = lzw_decode(data, param("EarlyChange", 1) != 0);
    } else if (name == "ASCIIHexDecode" || name == "AHx") {
      data = ascii_hex_decode(data);
      continue;
    } else if (name == "ASCII85Decode" || name == "A85") {
      data = ascii85_decode(data);
      continue;
    } else if (name == "RunLengthDecode" || name == "RL") {
      data = run_length_decode(data);
      continue;
    } else if (name == "Crypt") {
      continue;
    } else {
      throw PdfError("unsupported filter " + name);
    }
    PredictorParams pp;
    pp.predictor = param("Predictor", 1);
    pp.colors = param("Colors", 1);
    pp.bits_per_component = param("BitsPerComponent", 8);
    pp.columns = param("Columns", 1);
    data = apply_predictor(data, pp);
  }
  if (pending_codec) pending_codec->clear();
  return data;
}

void Document::collect_pages() {
  pages_.clear();
  Object root = resolve(trailer_.get("Root"));
  if (!root.dict()) return;
  std::set<Ref> visited;

  struct Inherited {
    Object resources;
    std::optional<std::array<double, 4>> media_box;
    std::optional<std::array<double, 4>> crop_box;
    int rotate = 0;
  };

  auto read_box = [this](const Object& o) -> std::optional<std::array<double, 4>> {
    const Array* a = resolve(o).array();
    if (!a || a->size() != 4) return std::nullopt;
    std::array<double, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = resolve((*a)[i]).number().value_or(0);
    return std::array<double, 4>{std::min(b[0], b[2]), std::min(b[1], b[3]), std::max(b[0], b[2]),
                                 std::max(b[1], b[3])};
  };

  std::function<void(const Object&, Inherited, int)> walk = [&](const Object& node_ref,
                                                                 Inherited inh, int depth) {
    if (depth > kMaxPageTreeDepth) return;
    if (auto r = node_ref.ref()) {
      if (!visited.insert(*r).second) return;
    }
    Object node = resolve(node_ref);
    const Dict* d = node.dict();
    if (!d) return;
    if (d->contains("Resources")) inh.resources = resolve(d->get("Resources"));
    if (auto mb = read_box(d->get("MediaBox"))) inh.media_box = mb;
    if (auto cb = read_box(d->get("CropBox"))) inh.crop_box = cb;
    if (auto rot = resolve(d->get("Rotate")).integer()) inh.rotate = static_cast<int>(*rot);

    const Array* kids = resolve(d->get("Kids")).array();
    const bool is_page = d->get("Type").is_name("Page") || (!kids && d->contains("Contents"));
    if (is_page) {
      PageRecord rec;
      rec.dict = node;
      rec.resources = inh.resources;
      const std::array<double, 4> box =
          inh.crop_box ? *inh.crop_box
                       : inh.media_box.value_or(std::array<double, 4>{0, 0, 612, 792});
      std::copy(box.begin(), box.end(), rec.box);
      rec.rotate = ((inh.rotate % 360) + 360) % 360;
      pages_.push_back(std::move(rec));
      return;
    }
    if (kids)
      for (const Object& kid : *kids) walk(kid, inh, depth + 1);
  };
  walk(root.dict()->get("Pages"), Inherited{}, 0);
}

}  // namespace matvl::pdf
