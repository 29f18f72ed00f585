#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "matvl/pdf/object.hpp"

namespace matvl::pdf {

struct Token {
  enum class Kind {
    integer,
    real,
    name,
    string,
    hex_string,
    keyword,
    array_begin,
    array_end,
    dict_begin,
    dict_end,
    eof
  };
  Kind kind = Kind::eof;
  std::string text;  // decoded bytes for strings and names, raw text otherwise
  std::int64_t integer = 0;
  double real = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool is_keyword(std::string_view k) const { return kind == Kind::keyword && text == k; }
};

inline bool is_pdf_whitespace(char c) {
  return c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '\f' || c == '\0';
}

inline bool is_pdf_delimiter(char c) {
  return c == '(' || c == ')' || c == '<' || c == '>' || c == '[' || c == ']' || c == '{' ||
         c == '}' || c == '/' || c == '%';
}

class Lexer {
 public:
  explicit Lexer(std::string_view data, std::size_t pos = 0) : data_(data), pos_(pos) {}

  Token next();
  Token peek();
  std::size_t pos() const { return pos_; }
  void seek(std::size_t pos) { pos_ = pos; }
  std::string_view data() const { return data_; }
  void skip_whitespace();

 private:
  std::string read_literal_string();
  std::string read_hex_string();
  std::string read_name();

  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Recursive-descent reader for PDF objects on top of Lexer.
class Parser {
 public:
  using RefResolver = std::function<Object(Ref)>;

  Parser(std::string_view data, std::size_t pos, bool allow_refs = true)
      : lexer_(data, pos), allow_refs_(allow_refs) {}

  Object parse_object();
  /// Parses starting from an already consumed token.
  Object parse_from(const Token& first);

  struct Indirect {
    Ref ref;
    Object object;
  };
  /// Reads "N G obj ... endobj", including an attached stream body.
  Indirect parse_indirect(const RefResolver& resolver);

  Lexer& lexer() { return lexer_; }

 private:
  Object parse_array();
  Object parse_dict_body();

  Lexer lexer_;
  bool allow_refs_;
  int depth_ = 0;
};

}  // namespace matvl::pdf
