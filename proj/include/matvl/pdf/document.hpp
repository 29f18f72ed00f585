#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "matvl/pdf/object.hpp"

namespace matvl::pdf {

/// Page dictionary with inherited attributes already applied.
struct PageRecord {
  Object dict;
  Object resources;
  double box[4] = {0, 0, 612, 792};  // visible area: CropBox, else MediaBox
  int rotate = 0;
};

/// Random-access view of a parsed PDF file. Supports classic xref tables,
/// cross-reference streams, object streams, and a linear scan fallback for
/// files whose xref is damaged.
class Document {
 public:
  static Document parse(std::string bytes);

  std::size_t page_count() const { return pages_.size(); }
  const PageRecord& page(std::size_t index) const { return pages_.at(index); }

  /// Follows indirect references (bounded depth). Missing objects are null.
  Object resolve(const Object& obj) const;
  Object get(const Dict& dict, std::string_view key) const { return resolve(dict.get(key)); }

  /// Applies the stream's filter chain. When `stop_at_image_codec` is set,
  /// decoding halts before DCT/JPX/JBIG2/CCITT filters and the name of the
  /// first unapplied filter is written to `pending_codec`.
  std::string decode_stream(const Stream& stream, bool stop_at_image_codec = false,
                            std::string* pending_codec = nullptr) const;

  const Dict& trailer() const { return trailer_; }

 private:
  struct XrefEntry {
    enum class Kind { free, offset, compressed } kind = Kind::free;
    std::size_t offset = 0;  // byte offset, or object stream number
    int index = 0;           // index within object stream
  };

  Document() = default;

  void load_xref();
  void read_xref_section(std::size_t offset, std::vector<std::size_t>& visited);
  void rebuild_xref_by_scan();
  void collect_pages();
  Object load_object(int num) const;
  Object load_from_object_stream(std::size_t stream_num, int num) const;

  std::shared_ptr<const std::string> bytes_;
  std::map<int, XrefEntry> xref_;
  Dict trailer_;
  std::vector<PageRecord> pages_;
  mutable std::map<int, Object> cache_;
};

}  // namespace matvl::pdf
