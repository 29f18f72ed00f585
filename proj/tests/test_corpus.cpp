#include "doctest.h"

#include <random>
#include <set>
#include <unordered_set>

#include "matvl/corpus.hpp"
#include "matvl/digest.hpp"
#include "matvl/fsutil.hpp"
#include "support.hpp"

using namespace matvl;
using namespace matvl::corpus;

namespace {

CorpusRecord text_record(const std::string& q, const std::string& a) {
  CorpusRecord r;
  r.source = Source::text_only;
  r.query = q;
  r.answer = a;
  r.id = record_id(r.source, a, q);
  return r;
}

CorpusRecord image_record(CorpusStore& store, int n, const std::string& q = "What is shown?") {
  const std::string bytes = encode_png(test::pattern(8 + n % 5, 8, static_cast<std::uint32_t>(n)));
  CorpusRecord r;
  r.source = n % 2 ? Source::wikipedia : Source::paper_pdf;
  r.image_ref = store.put_image(bytes, "png");
  if (r.source == Source::wikipedia) {
    r.image_url = "https://example.org/img" + std::to_string(n) + ".png";
    r.article_url = "https://example.org/wiki/A" + std::to_string(n);
  }
  r.original_caption = "Caption " + std::to_string(n);
  r.query = q;
  r.answer = "The image shows item " + std::to_string(n) + ".";
  r.id = record_id(r.source, sha256_hex(bytes), q);
  return r;
}

std::string read(const std::filesystem::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("add records: duplicates, distinct queries, invalid records") {
  test::TempDir dir("corpus_add");
  auto store = CorpusStore::open(dir.path());
  auto r = text_record("What is nacre?", "A composite.");
  auto first = store.add_records({r, r});
  CHECK(first.added == 1);
  CHECK(first.duplicate == 1);

  auto other = text_record("Why is nacre tough?", "A composite.");
  CHECK(other.id != r.id);
  CHECK(store.add_records({other}).added == 1);

  auto bad = text_record("q", "a");
  bad.image_ref = "images/x.png";
  auto res = store.add_records({bad, text_record("q2", "a2")});
  REQUIRE(res.rejected.size() == 1);
  CHECK(res.rejected[0].second.find("text_only") != std::string::npos);
  CHECK(res.added == 1);

  auto empty = text_record("", "a");
  CHECK(store.add_records({empty}).rejected.size() == 1);

  auto reopened = CorpusStore::open(dir.path());
  CHECK(reopened.records().size() == 3);
  CHECK(read_lines(dir.path() / "records.jsonl").size() == 3);
}

TEST_CASE("ids are distinct over a fuzzed set of triples") {
  std::mt19937_64 rng(1);
  std::unordered_set<std::string> ids;
  std::set<std::tuple<int, std::string, std::string>> triples;
  for (int i = 0; i < 100000; ++i) {
    const auto s = static_cast<Source>(rng() % 4);
    std::string content = std::to_string(rng() % 5000);
    std::string query = std::to_string(rng() % 5000);
    if (!triples.insert({static_cast<int>(s), content, query}).second) continue;
    REQUIRE(ids.insert(record_id(s, content, query)).second);
  }
  // separator keeps concatenation ambiguity out
  CHECK(record_id(Source::text_only, "ab", "c") != record_id(Source::text_only, "a", "bc"));
}

TEST_CASE("split examples") {
  test::TempDir dir("corpus_split");
  auto store = CorpusStore::open(dir.path());
  std::vector<CorpusRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(text_record("q" + std::to_string(i), "a"));
  store.add_records(recs);
  auto c = store.assign_splits(0.9, 7);
  CHECK(c.train == 9);
  CHECK(c.test == 1);
  const std::string first = read(dir.path() / "splits.json");
  store.assign_splits(0.9, 7);
  CHECK(read(dir.path() / "splits.json") == first);
  auto reopened = CorpusStore::open(dir.path());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(reopened.records()[i].split == store.records()[i].split);
  CHECK_THROWS_AS(store.assign_splits(1.0, 7), Error);
}

TEST_CASE("split partitions for many seeds and sizes") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t n = 1 + seed * 7;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i * 31 % 997));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto train = train_ids(ids, 0.9, seed);
    CHECK(train.size() == static_cast<std::size_t>(std::lround(0.9 * ids.size())));
    std::set<std::string> t(train.begin(), train.end());
    CHECK(t.size() == train.size());
    for (auto& id : train) CHECK(std::binary_search(ids.begin(), ids.end(), id));
    auto shuffled = ids;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(train_ids(shuffled, 0.9, seed) == train);
  }
  auto perm = seeded_permutation(1000, 3);
  std::set<std::size_t> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 1000);
  CHECK(*seen.rbegin() == 999);
}

TEST_CASE("export and import round trip") {
  test::TempDir dir("corpus_rt");
  auto store = CorpusStore::open(dir.path() / "store");
  std::vector<CorpusRecord> recs;
  for (int i = 0; i < 40; ++i) recs.push_back(image_record(store, i));
  for (int i = 0; i < 10; ++i) recs.push_back(text_record("tq" + std::to_string(i), "ta"));
  recs[3].task = "stress";
  recs[3].source = Source::simulation;
  CHECK(store.add_records(recs).added == 50);
  CHECK_THROWS_AS(store.export_jsonl(dir.path() / "out", "fx", "t0"), Error);
  store.assign_splits(0.9, 11);
  auto res = store.export_jsonl(dir.path() / "out", "fx", "t0");
  CHECK(res.errors.empty());

  auto imported = import_jsonl(dir.path() / "out");
  auto expected = store.records();
  std::sort(expected.begin(), expected.end(), [](auto& a, auto& b) { return a.id < b.id; });
  CHECK(imported.records == expected);
  CHECK(imported.manifest.record_count == 50);
  CHECK(imported.manifest.seed == 11);
  CHECK(imported.manifest.split_counts.at("train") == read_lines(dir.path() / "out/train.jsonl").size());
  CHECK(imported.manifest.split_counts.at("test") == read_lines(dir.path() / "out/test.jsonl").size());

  auto lines = read_lines(dir.path() / "out/train.jsonl");
  for (std::size_t i = 1; i < lines.size(); ++i)
    CHECK(nlohmann::json::parse(lines[i - 1])["id"] < nlohmann::json::parse(lines[i])["id"]);
  for (auto& r : imported.records)
    if (r.image_ref) CHECK(std::filesystem::exists(dir.path() / "out" / *r.image_ref));
  auto keys = nlohmann::json::parse(lines[0]);
  for (const char* k : {"id", "source", "image_ref", "image_url", "article_url", "original_caption",
                        "query", "answer", "split"})
    CHECK(keys.contains(k));

  // second export is byte-identical
  const std::string train_before = read(dir.path() / "out/train.jsonl");
  store.export_jsonl(dir.path() / "out", "fx", "t1");
  CHECK(read(dir.path() / "out/train.jsonl") == train_before);

  // missing image goes to the errors sidecar and export continues
  std::filesystem::remove(dir.path() / "store" / *recs[0].image_ref);
  auto res2 = store.export_jsonl(dir.path() / "out2", "fx", "t0");
  REQUIRE(res2.errors.size() == 1);
  CHECK(res2.errors[0].first == recs[0].id);
  CHECK(std::filesystem::exists(dir.path() / "out2/errors.jsonl"));
  CHECK(import_jsonl(dir.path() / "out2").records.size() == 49);
}

TEST_CASE("chat templates byte-match on one turn") {
  CorpusRecord r = text_record("Q", "A");
  r.source = Source::paper_pdf;
  r.image_ref = "images/x.png";
  CHECK(render_chat({r}, ChatFamily::idefics_style)[0] ==
        "User:<image>Q<end_of_utterance>\nAssistant:A<end_of_utterance>");
  CHECK(render_chat({r}, ChatFamily::phi3_style)[0] == "<|user|>\n<|image_1|>\nQ<|end|>\n<|assistant|>\nA<|end|>");
}

TEST_CASE("second turn has no image marker") {
  ChatExchange ex{{{"Q1", "A1"}, {"Q2", "A2"}}, 1};
  CHECK(render_chat(ex, ChatFamily::idefics_style) ==
        "User:<image>Q1<end_of_utterance>\nAssistant:A1<end_of_utterance>\n"
        "User:Q2<end_of_utterance>\nAssistant:A2<end_of_utterance>");
  CHECK(render_chat(ex, ChatFamily::phi3_style) ==
        "<|user|>\n<|image_1|>\nQ1<|end|>\n<|assistant|>\nA1<|end|>\n"
        "<|user|>\nQ2<|end|>\n<|assistant|>\nA2<|end|>");
}

TEST_CASE("rendering is reversible even when payloads contain markers") {
  const std::vector<std::string> nasty = {
      "plain", "<image>", "<end_of_utterance>", "<|end|>", "<|user|>\nhi", "a <b> c", "<",
      "<\xE2\x81\xA0image>", "<\xE2\x81\xA0\xE2\x81\xA0|end|>", "\nAssistant:", "User:<image>", ""};
  std::mt19937 rng(5);
  for (ChatFamily fam : {ChatFamily::idefics_style, ChatFamily::phi3_style}) {
    for (int trial = 0; trial < 500; ++trial) {
      ChatExchange ex;
      ex.images = static_cast<int>(rng() % 3);
      const int turns = 1 + static_cast<int>(rng() % 3);
      for (int t = 0; t < turns; ++t) {
        std::string u, a;
        for (int k = 0; k < 3; ++k) {
          u += nasty[rng() % nasty.size()];
          a += nasty[rng() % nasty.size()];
        }
        ex.turns.push_back({u, a});
      }
      const std::string text = render_chat(ex, fam);
      REQUIRE(parse_chat(text, fam) == ex);
      for (const auto& turn : ex.turns) {
        const std::string esc = escape_payload(turn.user, fam);
        if (fam == ChatFamily::idefics_style) {
          CHECK(esc.find("<image>") == std::string::npos);
          CHECK(esc.find("<end_of_utterance>") == std::string::npos);
        } else {
          CHECK(esc.find("<|") == std::string::npos);
        }
        CHECK(unescape_payload(esc, fam) == turn.user);
      }
    }
  }
  CHECK_THROWS_AS(parse_chat("garbage", ChatFamily::phi3_style), Error);
}
