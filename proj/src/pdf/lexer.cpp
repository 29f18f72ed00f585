#include "lexer.hpp"

#include <charconv>
#include <cstdlib>

namespace matvl::pdf {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool looks_numeric(std::string_view s) {
  if (s.empty()) return false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') ++i;
  bool digit = false;
  bool dot = false;
  for (; i < s.size(); ++i) {
    if (s[i] >= '0' && s[i] <= '9') {
      digit = true;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digit;
}

constexpr int kMaxDepth = 256;

}  // namespace

void Lexer::skip_whitespace() {
  while (pos_ < data_.size()) {
    char c = data_[pos_];
    if (is_pdf_whitespace(c)) {
      ++pos_;
    } else if (c == '%') {
      while (pos_ < data_.size() && data_[pos_] != '\n' && data_[pos_] != '\r') ++pos_;
    } else {
      break;
    }
  }
}

Token Lexer::peek() {
  const std::size_t saved = pos_;
  Token t = next();
  pos_ = saved;
  return t;
}

Token Lexer::next() {
  skip_whitespace();
  Token tok;
  tok.begin = pos_;
  if (pos_ >= data_.size()) {
    tok.kind = Token::Kind::eof;
    tok.end = pos_;
    return tok;
  }
  const char c = data_[pos_];
  switch (c) {
    case '[':
      ++pos_;
      tok.kind = Token::Kind::array_begin;
      break;
    case ']':
      ++pos_;
      tok.kind = Token::Kind::array_end;
      break;
    case '(':
      ++pos_;
      tok.kind = Token::Kind::string;
      tok.text = read_literal_string();
      break;
    case '/':
      ++pos_;
      tok.kind = Token::Kind::name;
      tok.text = read_name();
      break;
    case '<':
      if (pos_ + 1 < data_.size() && data_[pos_ + 1] == '<') {
        pos_ += 2;
        tok.kind = Token::Kind::dict_begin;
      } else {
        ++pos_;
        tok.kind = Token::Kind::hex_string;
        tok.text = read_hex_string();
      }
      break;
    case '>':
      if (pos_ + 1 < data_.size() && data_[pos_ + 1] == '>') {
        pos_ += 2;
        tok.kind = Token::Kind::dict_end;
      } else {
        ++pos_;
        tok.kind = Token::Kind::keyword;
        tok.text = ">";
      }
      break;
    case '{':
    case '}':
    case ')':
      ++pos_;
      tok.kind = Token::Kind::keyword;
      tok.text = std::string(1, c);
      break;
    default: {
      std::size_t start = pos_;
      while (pos_ < data_.size() && !is_pdf_whitespace(data_[pos_]) &&
             !is_pdf_delimiter(data_[pos_]))
        ++pos_;
      std::string_view word = data_.substr(start, pos_ - start);
      if (looks_numeric(word)) {
        if (word.find('.') == std::string_view::npos) {
          std::int64_t v = 0;
          auto first = word.data() + (word[0] == '+' ? 1 : 0);
          auto [ptr, ec] = std::from_chars(first, word.data() + word.size(), v);
          if (ec == std::errc()) {
            tok.kind = Token::Kind::integer;
            tok.integer = v;
            tok.real = static_cast<double>(v);
          } else {
            tok.kind = Token::Kind::real;
            tok.real = std::strtod(std::string(word).c_str(), nullptr);
          }
        } else {
          tok.kind = Token::Kind::real;
          tok.real = std::strtod(std::string(word).c_str(), nullptr);
        }
      } else {
        tok.kind = Token::Kind::keyword;
      }
      tok.text = std::string(word);
      if (word.empty()) {
        // Stray byte that is neither delimiter nor regular; consume it.
        ++pos_;
        tok.kind = Token::Kind::keyword;
        tok.text = std::string(1, c);
      }
      break;
    }
  }
  tok.end = pos_;
  return tok;
}

std::string Lexer::read_literal_string() {
  std::string out;
  int depth = 1;
  while (pos_ < data_.size()) {
    char c = data_[pos_++];
    if (c == '\\') {
      if (pos_ >= data_.size()) break;
      char e = data_[pos_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        case 't': out.push_back('\t'); break;
        case 'b': out.push_back('\b'); break;
        case 'f': out.push_back('\f'); break;
        case '(': out.push_back('('); break;
        case ')': out.push_back(')'); break;
        case '\\': out.push_back('\\'); break;
        case '\r':
          if (pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
          break;
        case '\n':
          break;
        default:
          if (e >= '0' && e <= '7') {
            int v = e - '0';
            for (int k = 0; k < 2 && pos_ < data_.size() && data_[pos_] >= '0' && data_[pos_] <= '7';
                 ++k)
              v = v * 8 + (data_[pos_++] - '0');
            out.push_back(static_cast<char>(v & 0xff));
          } else {
            out.push_back(e);
          }
      }
    } else if (c == '(') {
      ++depth;
      out.push_back(c);
    } else if (c == ')') {
      if (--depth == 0) break;
      out.push_back(c);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string Lexer::read_hex_string() {
  std::string out;
  int hi = -1;
  while (pos_ < data_.size()) {
    char c = data_[pos_++];
    if (c == '>') break;
    int v = hex_value(c);
    if (v < 0) continue;
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<char>(hi * 16 + v));
      hi = -1;
    }
  }
  if (hi >= 0) out.push_back(static_cast<char>(hi * 16));
  return out;
}

std::string Lexer::read_name() {
  std::string out;
  while (pos_ < data_.size() && !is_pdf_whitespace(data_[pos_]) && !is_pdf_delimiter(data_[pos_])) {
    char c = data_[pos_++];
    if (c == '#' && pos_ + 1 < data_.size()) {
      int h = hex_value(data_[pos_]);
      int l = hex_value(data_[pos_ + 1]);
      if (h >= 0 && l >= 0) {
        out.push_back(static_cast<char>(h * 16 + l));
        pos_ += 2;
        continue;
      }
    }
    out.push_back(c);
  }
  return out;
}

Object Parser::parse_object() { return parse_from(lexer_.next()); }

Object Parser::parse_from(const Token& tok) {
  switch (tok.kind) {
    case Token::Kind::integer: {
      if (allow_refs_) {
        const std::size_t saved = lexer_.pos();
        Token gen = lexer_.next();
        if (gen.kind == Token::Kind::integer) {
          Token r = lexer_.next();
          if (r.is_keyword("R"))
            return Object(Ref{static_cast<int>(tok.integer), static_cast<int>(gen.integer)});
        }
        lexer_.seek(saved);
      }
      return Object(tok.integer);
    }
    case Token::Kind::real: return Object(tok.real);
    case Token::Kind::name: return Object(Name{tok.text});
    case Token::Kind::string: return Object(String{tok.text, false});
    case Token::Kind::hex_string: return Object(String{tok.text, true});
    case Token::Kind::array_begin: return parse_array();
    case Token::Kind::dict_begin: return parse_dict_body();
    case Token::Kind::keyword:
      if (tok.text == "true") return Object(true);
      if (tok.text == "false") return Object(false);
      if (tok.text == "null") return Object();
      throw PdfError("unexpected keyword '" + tok.text + "' at offset " + std::to_string(tok.begin));
    case Token::Kind::array_end:
    case Token::Kind::dict_end:
      throw PdfError("unexpected closing delimiter at offset " + std::to_string(tok.begin));
    case Token::Kind::eof: throw PdfError("unexpected end of data");
  }
  return Object();
}

Object Parser::parse_array() {
  if (++depth_ > kMaxDepth) throw PdfError("object nesting too deep");
  Array items;
  for (;;) {
    Token t = lexer_.next();
    if (t.kind == Token::Kind::array_end) break;
    if (t.kind == Token::Kind::eof) throw PdfError("unterminated array");
    items.push_back(parse_from(t));
  }
  --depth_;
  return Object::make_array(std::move(items));
}

Object Parser::parse_dict_body() {
  if (++depth_ > kMaxDepth) throw PdfError("object nesting too deep");
  Dict dict;
  for (;;) {
    Token t = lexer_.next();
    if (t.kind == Token::Kind::dict_end) break;
    if (t.kind == Token::Kind::eof) throw PdfError("unterminated dictionary");
    if (t.kind != Token::Kind::name) {
      // Tolerate junk keys by skipping them.
      continue;
    }
    Token vt = lexer_.next();
    if (vt.kind == Token::Kind::dict_end) {
      dict.set(t.text, Object());
      break;
    }
    dict.set(t.text, parse_from(vt));
  }
  --depth_;
  return Object::make_dict(std::move(dict));
}

Parser::Indirect Parser::parse_indirect(const RefResolver& resolver) {
  Token num = lexer_.next();
  Token gen = lexer_.next();
  Token kw = lexer_.next();
  if (num.kind != Token::Kind::integer || gen.kind != Token::Kind::integer || !kw.is_keyword("obj"))
    throw PdfError("expected indirect object at offset " + std::to_string(num.begin));
  Indirect out;
  out.ref = Ref{static_cast<int>(num.integer), static_cast<int>(gen.integer)};
  Token first = lexer_.next();
  if (first.is_keyword("endobj")) return out;
  out.object = parse_from(first);

  const Dict* dict = out.object.dict();
  if (!dict) return out;
  Token after = lexer_.peek();
  if (!after.is_keyword("stream")) return out;
  lexer_.next();

  std::string_view data = lexer_.data();
  std::size_t start = lexer_.pos();
  if (start < data.size() && data[start] == '\r') ++start;
  if (start < data.size() && data[start] == '\n') ++start;

  std::int64_t length = -1;
  const Object len_obj = dict->get("Length");
  if (auto l = len_obj.integer()) {
    length = *l;
  } else if (auto r = len_obj.ref(); r && resolver) {
    if (auto l2 = resolver(*r).integer()) length = *l2;
  }

  auto ends_cleanly = [&](std::size_t end) {
    Lexer probe(data, end);
    return probe.next().is_keyword("endstream");
  };

  std::size_t end = std::string_view::npos;
  if (length >= 0 && start + static_cast<std::size_t>(length) <= data.size() &&
      ends_cleanly(start + static_cast<std::size_t>(length))) {
    end = start + static_cast<std::size_t>(length);
  } else {
    std::size_t found = data.find("endstream", start);
    if (found == std::string_view::npos) throw PdfError("unterminated stream");
    end = found;
    if (end > start && data[end - 1] == '\n') --end;
    if (end > start && data[end - 1] == '\r') --end;
  }
  Stream s{*dict, std::string(data.substr(start, end - start))};
  out.object = Object::make_stream(std::move(s.dict), std::move(s.data));
  lexer_.seek(end);
  Token es = lexer_.next();
  if (es.is_keyword("endstream")) {
    // endobj is optional in practice
  }
  return out;
}

}  // namespace matvl::pdf
