#include "matvl/pdf/object.hpp"

namespace matvl::pdf {

Object Object::make_array(Array items) {
  return Object(std::make_shared<const Array>(std::move(items)));
}

Object Object::make_dict(Dict dict) { return Object(std::make_shared<const Dict>(std::move(dict))); }

Object Object::make_stream(Dict dict, std::string data) {
  return Object(std::make_shared<const Stream>(Stream{std::move(dict), std::move(data)}));
}

bool Object::is_name(std::string_view n) const {
  const auto* p = std::get_if<Name>(&value_);
  return p && p->value == n;
}

std::optional<double> Object::number() const {
  if (const auto* i = std::get_if<std::int64_t>(&value_)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&value_)) return *d;
  return std::nullopt;
}

std::optional<std::int64_t> Object::integer() const {
  if (const auto* i = std::get_if<std::int64_t>(&value_)) return *i;
  if (const auto* d = std::get_if<double>(&value_)) return static_cast<std::int64_t>(*d);
  return std::nullopt;
}

std::optional<bool> Object::boolean() const {
  if (const auto* b = std::get_if<bool>(&value_)) return *b;
  return std::nullopt;
}

const std::string* Object::name() const {
  const auto* p = std::get_if<Name>(&value_);
  return p ? &p->value : nullptr;
}

const String* Object::string() const { return std::get_if<String>(&value_); }

std::optional<Ref> Object::ref() const {
  if (const auto* r = std::get_if<Ref>(&value_)) return *r;
  return std::nullopt;
}

const Array* Object::array() const {
  const auto* p = std::get_if<std::shared_ptr<const Array>>(&value_);
  return p ? p->get() : nullptr;
}

const Dict* Object::dict() const {
  if (const auto* p = std::get_if<std::shared_ptr<const Dict>>(&value_)) return p->get();
  if (const auto* s = std::get_if<std::shared_ptr<const Stream>>(&value_)) return &(*s)->dict;
  return nullptr;
}

const Stream* Object::stream() const {
  const auto* p = std::get_if<std::shared_ptr<const Stream>>(&value_);
  return p ? p->get() : nullptr;
}

void Dict::set(std::string key, Object value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

const Object* Dict::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return &v;
  return nullptr;
}

Object Dict::get(std::string_view key) const {
  const Object* o = find(key);
  return o ? *o : Object();
}

}  // namespace matvl::pdf
