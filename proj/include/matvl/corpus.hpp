#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matvl/error.hpp"

namespace matvl::corpus {

enum class Source { wikipedia, paper_pdf, text_only, simulation };
enum class Split { train, test, unassigned };

std::string_view to_string(Source source);
std::string_view to_string(Split split);
std::optional<Source> parse_source(std::string_view name);
std::optional<Split> parse_split(std::string_view name);

struct CorpusRecord {
  std::string id;
  Source source = Source::text_only;
  std::optional<std::string> image_ref;  // relative to the store root
  std::optional<std::string> image_url;
  std::optional<std::string> article_url;
  std::optional<std::string> original_caption;
  std::string query;
  std::string answer;
  Split split = Split::unassigned;
  std::optional<std::string> task;  // instruction records only

  bool operator==(const CorpusRecord&) const = default;
};

/// First 32 hex digits of SHA-256 over source, content key and query.
/// The content key is the image's byte digest, or the answer text for
/// text-only records.
std::string record_id(Source source, std::string_view content_key, std::string_view query);

nlohmann::json to_json(const CorpusRecord& record);
CorpusRecord record_from_json(const nlohmann::json& j);

/// Empty when valid, otherwise the reason.
std::string validate(const CorpusRecord& record);

struct DatasetManifest {
  std::string name;
  std::size_t record_count = 0;
  std::map<std::string, std::size_t> split_counts;
  std::uint64_t seed = 0;
  std::string created_at;
  std::string tool_version;

  bool operator==(const DatasetManifest&) const = default;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct AddResult {
  std::size_t added = 0;
  std::size_t duplicate = 0;
  std::vector<std::pair<std::string, std::string>> rejected;  // (id, reason)
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
};

struct ExportResult {
  std::filesystem::path manifest;
  std::map<std::string, std::filesystem::path> split_files;
  std::vector<std::pair<std::string, std::string>> errors;  // (id, reason)
};

/// Append-only JSONL log plus content-addressed images:
///   <root>/records.jsonl, <root>/images/<sha256>.<ext>, <root>/splits.json
class CorpusStore {
 public:
  static CorpusStore open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<CorpusRecord>& records() const { return records_; }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  /// Copies image bytes in under their digest; returns the store-relative ref.
  std::string put_image(std::string_view bytes, std::string_view extension);

  AddResult add_records(const std::vector<CorpusRecord>& records);

  /// Record-level uniform split. |train| = round(ratio * N).
  SplitCounts assign_splits(double ratio, std::uint64_t seed);
  std::optional<std::uint64_t> split_seed() const { return seed_; }

  ExportResult export_jsonl(const std::filesystem::path& out_dir, const std::string& name,
                            const std::string& created_at) const;

 private:
  std::filesystem::path root_;
  std::vector<CorpusRecord> records_;
  std::map<std::string, std::size_t> index_;
  std::optional<std::uint64_t> seed_;
};

struct ImportedCorpus {
  std::vector<CorpusRecord> records;  // sorted by id
  DatasetManifest manifest;
};

ImportedCorpus import_jsonl(const std::filesystem::path& dir);

/// Deterministic permutation of 0..n-1, independent of the standard
/// library's distribution implementations.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Ids assigned to train, given ids and the split parameters.
std::vector<std::string> train_ids(std::vector<std::string> ids, double ratio, std::uint64_t seed);

enum class ChatFamily { idefics_style, phi3_style };

std::optional<ChatFamily> parse_family(std::string_view name);
std::string_view to_string(ChatFamily family);

struct ChatTurn {
  std::string user;
  std::string assistant;
  bool operator==(const ChatTurn&) const = default;
};

struct ChatExchange {
  std::vector<ChatTurn> turns;
  int images = 0;  // placed in the first user turn
  bool operator==(const ChatExchange&) const = default;
};

ChatExchange exchange_from(const CorpusRecord& record);

std::string render_chat(const ChatExchange& exchange, ChatFamily family);
std::vector<std::string> render_chat(const std::vector<CorpusRecord>& records, ChatFamily family);

/// Inverse of render_chat; throws on text that was not produced by it.
ChatExchange parse_chat(std::string_view text, ChatFamily family);

/// Payload escaping: a U+2060 word joiner is inserted after '<' wherever
/// the text would otherwise contain a family marker.
std::string escape_payload(std::string_view text, ChatFamily family);
std::string unescape_payload(std::string_view text, ChatFamily family);

}  // namespace matvl::corpus
