#include "matvl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "matvl/digest.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/version.hpp"

namespace matvl::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Source source) {
  switch (source) {
    case Source::wikipedia: return "wikipedia";
    case Source::paper_pdf: return "paper_pdf";
    case Source::text_only: return "text_only";
    case Source::simulation: return "simulation";
  }
  return "unknown";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unknown";
}

std::optional<Source> parse_source(std::string_view name) {
  for (Source s : {Source::wikipedia, Source::paper_pdf, Source::text_only, Source::simulation})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::test, Split::unassigned})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::string record_id(Source source, std::string_view content_key, std::string_view query) {
  std::string material(to_string(source));
  material += '\x1f';
  material += content_key;
  material += '\x1f';
  material += query;
  return sha256_hex(material).substr(0, 32);
}

namespace {

json optional_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

json to_json(const CorpusRecord& r) {
  json j = {
      {"id", r.id},
      {"source", to_string(r.source)},
      {"image_ref", optional_json(r.image_ref)},
      {"image_url", optional_json(r.image_url)},
      {"article_url", optional_json(r.article_url)},
      {"original_caption", optional_json(r.original_caption)},
      {"query", r.query},
      {"answer", r.answer},
      {"split", to_string(r.split)},
  };
  if (r.task) j["task"] = *r.task;
  return j;
}

CorpusRecord record_from_json(const json& j) {
  try {
    CorpusRecord r;
    r.id = j.at("id").get<std::string>();
    const std::string source = j.at("source").get<std::string>();
    auto s = parse_source(source);
    if (!s) throw Error("corpus.schema", "unknown source '" + source + "'");
    r.source = *s;
    r.image_ref = optional_field(j, "image_ref");
    r.image_url = optional_field(j, "image_url");
    r.article_url = optional_field(j, "article_url");
    r.original_caption = optional_field(j, "original_caption");
    r.query = j.at("query").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    const std::string split = j.value("split", "unassigned");
    auto sp = parse_split(split);
    if (!sp) throw Error("corpus.schema", "unknown split '" + split + "'");
    r.split = *sp;
    r.task = optional_field(j, "task");
    return r;
  } catch (const json::exception& e) {
    throw Error("corpus.schema", std::string("malformed record: ") + e.what());
  }
}

std::string validate(const CorpusRecord& r) {
  if (r.id.empty()) return "missing id";
  if (r.query.empty()) return "empty query";
  if (r.answer.empty()) return "empty answer";
  const bool needs_image = r.source != Source::text_only;
  if (needs_image && !r.image_ref) return "image_ref required for source " + std::string(to_string(r.source));
  if (!needs_image && r.image_ref) return "text_only record must not carry image_ref";
  if (r.image_ref) {
    const fs::path p(*r.image_ref);
    if (p.is_absolute()) return "image_ref must be relative";
    for (const auto& part : p)
      if (part == "..") return "image_ref escapes the store";
  }
  return {};
}

json to_json(const DatasetManifest& m) {
  return {{"name", m.name},
          {"record_count", m.record_count},
          {"split_counts", m.split_counts},
          {"seed", m.seed},
          {"created_at", m.created_at},
          {"tool_version", m.tool_version}};
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.record_count = j.at("record_count").get<std::size_t>();
    m.split_counts = j.at("split_counts").get<std::map<std::string, std::size_t>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created_at = j.at("created_at").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw Error("corpus.schema", std::string("malformed manifest: ") + e.what());
  }
}

CorpusStore CorpusStore::open(const fs::path& root) {
  CorpusStore store;
  store.root_ = root;
  fs::create_directories(root / "images");
  for (const std::string& line : read_lines(root / "records.jsonl")) {
    CorpusRecord r = record_from_json(json::parse(line));
    if (store.index_.count(r.id)) continue;
    store.index_[r.id] = store.records_.size();
    store.records_.push_back(std::move(r));
  }
  if (fs::exists(root / "splits.json")) {
    const json s = json::parse(read_file(root / "splits.json"));
    store.seed_ = s.at("seed").get<std::uint64_t>();
    for (const auto& [id, split] : s.at("assignments").items()) {
      auto it = store.index_.find(id);
      if (it != store.index_.end())
        store.records_[it->second].split = parse_split(split.get<std::string>()).value_or(Split::unassigned);
    }
  }
  return store;
}

std::string CorpusStore::put_image(std::string_view bytes, std::string_view extension) {
  std::string ext(extension);
  if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
  const std::string ref = "images/" + sha256_hex(bytes) + (ext.empty() ? "" : "." + ext);
  const fs::path target = root_ / ref;
  if (!fs::exists(target)) write_file_atomic(target, bytes);
  return ref;
}

AddResult CorpusStore::add_records(const std::vector<CorpusRecord>& records) {
  AddResult result;
  for (const CorpusRecord& rec : records) {
    std::string reason = validate(rec);
    if (reason.empty() && rec.image_ref && !fs::exists(root_ / *rec.image_ref))
      reason = "image file missing: " + *rec.image_ref;
    if (!reason.empty()) {
      result.rejected.emplace_back(rec.id, std::move(reason));
      continue;
    }
    if (index_.count(rec.id)) {
      ++result.duplicate;
      continue;
    }
    CorpusRecord stored = rec;
    stored.split = Split::unassigned;
    append_line(root_ / "records.jsonl", to_json(stored).dump());
    index_[stored.id] = records_.size();
    records_.push_back(std::move(stored));
    ++result.added;
  }
  return result;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  // uniform integer in [0, bound) by rejection, so results do not depend on
  // the library's distribution classes
  auto below = [&](std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = rng();
    } while (x >= limit);
    return x % bound;
  };
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[below(i)]);
  return perm;
}

std::vector<std::string> train_ids(std::vector<std::string> ids, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("corpus.ratio", "split ratio must lie in (0, 1)");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const auto perm = seeded_permutation(ids.size(), seed);
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(ids.size())));
  std::vector<std::string> out;
  out.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) out.push_back(ids[perm[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

SplitCounts CorpusStore::assign_splits(double ratio, std::uint64_t seed) {
  if (records_.empty()) throw Error("corpus.empty", "cannot split an empty store");
  std::vector<std::string> ids;
  for (const auto& r : records_) ids.push_back(r.id);
  const auto train = train_ids(ids, ratio, seed);
  const std::set<std::string> train_set(train.begin(), train.end());

  SplitCounts counts;
  json assignments = json::object();
  for (auto& r : records_) {
    r.split = train_set.count(r.id) ? Split::train : Split::test;
    ++(r.split == Split::train ? counts.train : counts.test);
    assignments[r.id] = to_string(r.split);
  }
  seed_ = seed;
  write_file_atomic(root_ / "splits.json",
                    json{{"seed", seed}, {"ratio", ratio}, {"assignments", assignments}}.dump(1) + "\n");
  return counts;
}

ExportResult CorpusStore::export_jsonl(const fs::path& out_dir, const std::string& name,
                                       const std::string& created_at) const {
  for (const auto& r : records_)
    if (r.split == Split::unassigned)
      throw Error("corpus.unassigned", "record " + r.id + " has no split; run the split step first");

  std::vector<const CorpusRecord*> sorted;
  for (const auto& r : records_) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });

  ExportResult result;
  std::map<std::string, std::string> bodies{{"train", ""}, {"test", ""}};
  DatasetManifest manifest;
  manifest.name = name;
  manifest.seed = seed_.value_or(0);
  manifest.created_at = created_at;
  manifest.tool_version = kToolVersion;
  manifest.split_counts = {{"train", 0}, {"test", 0}};

  fs::create_directories(out_dir / "images");
  for (const CorpusRecord* r : sorted) {
    if (r->image_ref) {
      const fs::path src = root_ / *r->image_ref;
      const fs::path dst = out_dir / *r->image_ref;
      if (!fs::exists(src)) {
        result.errors.emplace_back(r->id, "missing image " + *r->image_ref);
        continue;
      }
      if (!fs::exists(dst) || fs::file_size(dst) != fs::file_size(src)) {
        fs::create_directories(dst.parent_path());
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      }
    }
    const std::string split(to_string(r->split));
    bodies[split] += to_json(*r).dump() + "\n";
    ++manifest.split_counts[split];
    ++manifest.record_count;
  }

  for (const auto& [split, body] : bodies) {
    const fs::path file = out_dir / (split + ".jsonl");
    write_file_atomic(file, body);
    result.split_files[split] = file;
  }
  const fs::path errors = out_dir / "errors.jsonl";
  if (result.errors.empty()) {
    fs::remove(errors);
  } else {
    std::string body;
    for (const auto& [id, reason] : result.errors) body += json{{"id", id}, {"reason", reason}}.dump() + "\n";
    write_file_atomic(errors, body);
  }
  result.manifest = out_dir / "manifest.json";
  write_file_atomic(result.manifest, to_json(manifest).dump(2) + "\n");
  return result;
}

ImportedCorpus import_jsonl(const fs::path& dir) {
  ImportedCorpus out;
  out.manifest = manifest_from_json(json::parse(read_file(dir / "manifest.json")));
  for (const char* split : {"train", "test"})
    for (const std::string& line : read_lines(dir / (std::string(split) + ".jsonl")))
      out.records.push_back(record_from_json(json::parse(line)));
  std::sort(out.records.begin(), out.records.end(),
            [](const CorpusRecord& a, const CorpusRecord& b) { return a.id < b.id; });
  return out;
}

// ---- chat templates ------------------------------------------------------

std::optional<ChatFamily> parse_family(std::string_view name) {
  if (name == "idefics_style" || name == "idefics") return ChatFamily::idefics_style;
  if (name == "phi3_style" || name == "phi3") return ChatFamily::phi3_style;
  return std::nullopt;
}

std::string_view to_string(ChatFamily family) {
  return family == ChatFamily::idefics_style ? "idefics_style" : "phi3_style";
}

namespace {

constexpr std::string_view kJoiner = "\xE2\x81\xA0";  // U+2060 WORD JOINER

// What may follow '<' to form a marker in each family.
std::vector<std::string_view> marker_tails(ChatFamily family) {
  if (family == ChatFamily::idefics_style) return {"image>", "end_of_utterance>"};
  return {"|"};
}

// Length of the run of word joiners starting at `pos`.
std::size_t joiner_run(std::string_view text, std::size_t pos) {
  std::size_t n = 0;
  while (text.substr(pos + n * kJoiner.size(), kJoiner.size()) == kJoiner) ++n;
  return n;
}

bool marker_tail_at(std::string_view text, std::size_t pos, ChatFamily family) {
  for (std::string_view tail : marker_tails(family))
    if (text.substr(pos, tail.size()) == tail) return true;
  return false;
}

std::string image_markers(int images, ChatFamily family) {
  std::string out;
  for (int i = 1; i <= images; ++i)
    out += family == ChatFamily::idefics_style ? std::string("<image>") : "<|image_" + std::to_string(i) + "|>";
  return out;
}

void expect_prefix(std::string_view& text, std::string_view prefix) {
  if (text.substr(0, prefix.size()) != prefix)
    throw Error("chat.parse", "expected '" + std::string(prefix) + "'");
  text.remove_prefix(prefix.size());
}

}  // namespace

std::string escape_payload(std::string_view text, ChatFamily family) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out += text[i];
    if (text[i] != '<') continue;
    const std::size_t run = joiner_run(text, i + 1);
    if (marker_tail_at(text, i + 1 + run * kJoiner.size(), family)) out += kJoiner;
  }
  return out;
}

std::string unescape_payload(std::string_view text, ChatFamily family) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out += text[i];
    if (text[i] != '<') continue;
    const std::size_t run = joiner_run(text, i + 1);
    if (run > 0 && marker_tail_at(text, i + 1 + run * kJoiner.size(), family)) i += kJoiner.size();
  }
  return out;
}

ChatExchange exchange_from(const CorpusRecord& record) {
  ChatExchange ex;
  ex.turns.push_back({record.query, record.answer});
  ex.images = record.image_ref ? 1 : 0;
  return ex;
}

std::string render_chat(const ChatExchange& exchange, ChatFamily family) {
  if (exchange.turns.empty()) throw Error("chat.empty", "exchange has no turns");
  std::string out;
  for (std::size_t t = 0; t < exchange.turns.size(); ++t) {
    const std::string user = escape_payload(exchange.turns[t].user, family);
    const std::string assistant = escape_payload(exchange.turns[t].assistant, family);
    const std::string images = t == 0 ? image_markers(exchange.images, family) : "";
    if (t) out += '\n';
    if (family == ChatFamily::idefics_style) {
      out += "User:" + images + user + "<end_of_utterance>\nAssistant:" + assistant + "<end_of_utterance>";
    } else {
      out += "<|user|>\n";
      if (!images.empty()) out += images + "\n";
      out += user + "<|end|>\n<|assistant|>\n" + assistant + "<|end|>";
    }
  }
  return out;
}

std::vector<std::string> render_chat(const std::vector<CorpusRecord>& records, ChatFamily family) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(render_chat(exchange_from(r), family));
  return out;
}

ChatExchange parse_chat(std::string_view text, ChatFamily family) {
  const std::string_view end = family == ChatFamily::idefics_style ? "<end_of_utterance>" : "<|end|>";
  std::vector<std::string_view> pieces;
  while (true) {
    const auto pos = text.find(end);
    if (pos == std::string_view::npos) {
      pieces.push_back(text);
      break;
    }
    pieces.push_back(text.substr(0, pos));
    text.remove_prefix(pos + end.size());
  }
  if (pieces.size() < 3 || pieces.size() % 2 != 1 || !pieces.back().empty())
    throw Error("chat.parse", "unbalanced turn terminators");

  ChatExchange ex;
  for (std::size_t t = 0; t + 1 < pieces.size(); t += 2) {
    std::string_view user = pieces[t];
    std::string_view assistant = pieces[t + 1];
    if (t) expect_prefix(user, "\n");
    if (family == ChatFamily::idefics_style) {
      expect_prefix(user, "User:");
      if (t == 0)
        while (user.substr(0, 7) == "<image>") {
          user.remove_prefix(7);
          ++ex.images;
        }
      expect_prefix(assistant, "\nAssistant:");
    } else {
      expect_prefix(user, "<|user|>\n");
      if (t == 0 && user.substr(0, 8) == "<|image_") {
        while (user.substr(0, 8) == "<|image_") {
          const auto close = user.find("|>");
          if (close == std::string_view::npos) throw Error("chat.parse", "unterminated image marker");
          if (user.substr(8, close - 8) != std::to_string(ex.images + 1))
            throw Error("chat.parse", "image markers out of order");
          user.remove_prefix(close + 2);
          ++ex.images;
        }
        expect_prefix(user, "\n");
      }
      expect_prefix(assistant, "\n<|assistant|>\n");
    }
    ex.turns.push_back({unescape_payload(user, family), unescape_payload(assistant, family)});
  }
  return ex;
}

}  // namespace matvl::corpus
