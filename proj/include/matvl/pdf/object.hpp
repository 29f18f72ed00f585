#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "matvl/error.hpp"

namespace matvl::pdf {

class PdfError : public Error {
 public:
  explicit PdfError(const std::string& message) : Error("pdf", message) {}
};

struct Null {};

struct Ref {
  int num = 0;
  int gen = 0;
  bool operator==(const Ref&) const = default;
  auto operator<=>(const Ref&) const = default;
};

struct Name {
  std::string value;
  bool operator==(const Name&) const = default;
};

struct String {
  std::string bytes;
  bool hex = false;
};

class Object;
using Array = std::vector<Object>;
class Dict;
struct Stream;

/// Immutable PDF value. Composite values are shared, so copies are cheap.
class Object {
 public:
  using Value = std::variant<Null, bool, std::int64_t, double, String, Name, Ref,
                             std::shared_ptr<const Array>, std::shared_ptr<const Dict>,
                             std::shared_ptr<const Stream>>;

  Object() = default;
  Object(Value v) : value_(std::move(v)) {}  // NOLINT(google-explicit-constructor)

  static Object make_array(Array items);
  static Object make_dict(Dict dict);
  static Object make_stream(Dict dict, std::string data);

  bool is_null() const { return std::holds_alternative<Null>(value_); }
  bool is_number() const {
    return std::holds_alternative<std::int64_t>(value_) || std::holds_alternative<double>(value_);
  }
  bool is_ref() const { return std::holds_alternative<Ref>(value_); }
  bool is_name(std::string_view n) const;

  std::optional<double> number() const;
  std::optional<std::int64_t> integer() const;
  std::optional<bool> boolean() const;
  const std::string* name() const;
  const String* string() const;
  std::optional<Ref> ref() const;
  const Array* array() const;
  const Dict* dict() const;  // also returns the dictionary of a stream
  const Stream* stream() const;

  const Value& value() const { return value_; }

 private:
  Value value_;
};

class Dict {
 public:
  Dict() = default;

  void set(std::string key, Object value);
  const Object* find(std::string_view key) const;
  Object get(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key) != nullptr; }
  const std::vector<std::pair<std::string, Object>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Object>> entries_;
};

struct Stream {
  Dict dict;
  std::string data;  // raw, still encoded
};

}  // namespace matvl::pdf
