#include "doctest.h"

#include <set>

#include "matvl/fsutil.hpp"
#include "matvl/wiki.hpp"
#include "wiki_fixture.hpp"

using namespace matvl;
using namespace matvl::wiki;

namespace {

http::ClientOptions quick() {
  http::ClientOptions o;
  o.timeout_s = 5;
  o.per_host_spacing_s = 0;
  o.retry.initial_backoff_s = 0;
  return o;
}

std::string png(int w, int h, std::uint32_t seed) { return encode_png(test::pattern(w, h, seed)); }

}  // namespace

TEST_CASE("entity decoding") {
  CHECK(decode_entities("a &amp; b &lt;c&gt; &quot;d&quot; &#39;e&#39;") == "a & b <c> \"d\" 'e'");
  CHECK(decode_entities("&#x3bc;m &#956;m") == "\xCE\xBCm \xCE\xBCm");
  CHECK(decode_entities("&unknown; & &#xZZ;") == "&unknown; & &#xZZ;");
  CHECK(decode_entities("&#0;") == "\xEF\xBF\xBD");
}

TEST_CASE("two captioned thumbnails and an uncaptioned icon give two records") {
  const std::string html = test::article(
      test::thumb("/images/a.png", "A spider web <sup class=\"reference\">[1]</sup> in   dew") +
      "<p><img src=\"/images/icon.png\" width=\"16\" height=\"16\"></p>" +
      "<figure typeof=\"mw:File/Thumb\"><a><img src=\"//upload.example.org/b.jpg\" data-file-width=\"800\""
      " data-file-height=\"600\"></a><figcaption>Nacre &amp; <a href=\"/wiki/Bone\">bone</a></figcaption></figure>");
  auto r = extract_article_images(html, "https://en.wikipedia.org/wiki/Biomimicry");
  REQUIRE(r.images.size() == 2);
  CHECK(r.images[0].image_url == "https://en.wikipedia.org/images/a.png");
  CHECK(r.images[0].caption == "A spider web in dew");
  CHECK(r.images[0].width_px == 300);
  CHECK(r.images[1].image_url == "https://upload.example.org/b.jpg");
  CHECK(r.images[1].caption == "Nacre & bone");
  CHECK(r.warnings.empty());
}

TEST_CASE("extraction edge cases") {
  CHECK(extract_article_images(test::article("<p>No pictures.</p>"), "https://x.org/wiki/A").images.empty());

  // icon below the minimum resolution, even when captioned
  auto small = extract_article_images(test::thumb("/i.png", "tiny", 100, 400), "https://x.org/wiki/A");
  CHECK(small.images.empty());
  auto lowered = extract_article_images(test::thumb("/i.png", "tiny", 100, 400), "https://x.org/wiki/A", 64);
  CHECK(lowered.images.size() == 1);

  // figure without caption, caption without figure image
  CHECK(extract_article_images("<figure><img src=\"/a.png\"><figcaption>  </figcaption></figure>",
                               "https://x.org/")
            .images.empty());
  CHECK(extract_article_images("<figure><figcaption>words</figcaption></figure>", "https://x.org/").images.empty());

  // gallery boxes
  const std::string gallery =
      "<ul class=\"gallery\"><li class=\"gallerybox\"><div class=\"thumb\"><img src=\"g1.png\"></div>"
      "<div class=\"gallerytext\"><p>First<br>line</p></div></li>"
      "<li class=\"gallerybox\"><img src=\"g2.png\"><div class=\"gallerytext\">Second</div></li></ul>";
  auto g = extract_article_images(gallery, "https://x.org/wiki/Page");
  REQUIRE(g.images.size() == 2);
  CHECK(g.images[0].image_url == "https://x.org/wiki/g1.png");
  CHECK(g.images[0].caption == "First line");
  CHECK(g.images[1].caption == "Second");

  // script contents never leak into captions
  auto s = extract_article_images(
      "<figure><img src=\"/a.png\"><figcaption>ok<script>var x = '</figcaption>';</script></figcaption></figure>",
      "https://x.org/");
  REQUIRE(s.images.size() == 1);
  CHECK(s.images[0].caption == "ok");
}

TEST_CASE("malformed markup yields warnings, never exceptions") {
  auto unterminated = extract_article_images("<figure><img src=\"/a.png\"", "https://x.org/");
  CHECK(unterminated.images.empty());
  CHECK_FALSE(unterminated.warnings.empty());
  auto comment = extract_article_images(test::thumb("/a.png", "cap") + "<!-- open", "https://x.org/");
  CHECK(comment.images.empty());
  CHECK_FALSE(comment.warnings.empty());

  // a stray close tag is tolerated and the well-formed figure survives
  auto stray = extract_article_images("</span>" + test::thumb("/a.png", "cap") + "<figure><img src=\"/b.png\">",
                                      "https://x.org/");
  CHECK(stray.images.size() == 1);
  CHECK(stray.warnings.size() == 2);

  std::mt19937 rng(5);
  const std::string alphabet = "<>/=\"' abfigurecaptionimgsrc&#;!-";
  for (int i = 0; i < 3000; ++i) {
    std::string junk;
    const int len = static_cast<int>(rng() % 200);
    for (int k = 0; k < len; ++k) junk += alphabet[rng() % alphabet.size()];
    auto res = extract_article_images(junk, "https://x.org/");
    for (const auto& img : res.images) REQUIRE(http::parse_url(img.image_url));
  }
}

TEST_CASE("search truncates to limit in API order") {
  test::FixtureWiki wiki;
  wiki.search["Biomimicry"] = {"Biomimetics", "Gecko", "Lotus effect", "Nacre", "Spider silk"};
  wiki.start();
  http::Client client(quick());
  WikiConfig cfg;
  cfg.base_url = wiki.base();
  auto hits = search_articles(client, cfg, "Biomimicry", 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].title == "Biomimetics");
  CHECK(hits[2].title == "Lotus effect");
  CHECK(hits[2].rank == 3);
  CHECK(search_articles(client, cfg, "Nothing here", 100).empty());
  CHECK(WikiConfig{}.limit == 100);
  CHECK_THROWS_AS(search_articles(client, cfg, "", 3), Error);
  CHECK_THROWS_AS(search_articles(client, cfg, "explode", 3), http::HttpError);
  CHECK(article_url(cfg, "Lotus effect") == wiki.base() + "/wiki/Lotus_effect");
}

TEST_CASE("harvest dedupes, persists and resumes") {
  test::FixtureWiki wiki;
  wiki.images["a.png"] = png(300, 200, 1);
  wiki.images["b.png"] = png(200, 300, 2);
  wiki.images["c.png"] = png(256, 256, 3);
  wiki.images["small.png"] = png(100, 60, 4);  // markup does not declare its size
  wiki.images["junk.png"] = "not an image";
  wiki.articles["Gecko"] = test::article(test::thumb("/images/a.png", "Gecko foot") +
                                         test::thumb("/images/b.png", "Setae") +
                                         "<figure><img src=\"/images/small.png\"><figcaption>Small</figcaption></figure>");
  wiki.articles["Nacre"] = test::article(test::thumb("/images/a.png", "Same image, other article") +
                                         test::thumb("/images/junk.png", "Broken file"));
  wiki.articles["Bone"] = test::article(test::thumb("/images/c.png", "Trabecular bone"));
  wiki.search["Biomimicry"] = {"Gecko", "Nacre", "Missing page"};
  wiki.search["Mechanics"] = {"Nacre", "Bone"};
  wiki.article_failures["Bone"] = 10;  // fails through every retry on the first run
  wiki.start();

  test::TempDir dir("harvest");
  http::Client client(quick());
  WikiConfig cfg;
  cfg.base_url = wiki.base();
  cfg.concurrency = 3;
  const std::vector<std::string> keywords{"Biomimicry", "explode", "Mechanics"};

  auto first = harvest(client, cfg, keywords, dir.path());
  CHECK(first.new_records == 2);
  CHECK(first.images_too_small == 1);
  CHECK(first.duplicate_urls == 1);
  auto records = load_harvest(dir.path());
  REQUIRE(records.size() == 2);
  CHECK(records[0].original_caption == "Gecko foot");
  CHECK(records[0].keyword == "Biomimicry");
  CHECK(records[0].article_url == wiki.base() + "/wiki/Gecko");
  CHECK(records[0].width_px == 300);
  CHECK(read_file(dir.path() / records[0].image_ref) == wiki.images["a.png"]);
  std::set<std::string> scopes;
  for (const auto& issue : first.issues) scopes.insert(issue.scope);
  CHECK(scopes == std::set<std::string>{"keyword", "article", "image"});

  // second run: only the failed article is fetched again
  wiki.article_failures["Bone"] = 0;
  const int before = wiki.article_calls;
  auto second = harvest(client, cfg, keywords, dir.path());
  CHECK(wiki.article_calls - before == 2);  // "Missing page" and "Bone"
  CHECK(second.new_records == 1);
  CHECK(second.total_records == 3);
  records = load_harvest(dir.path());
  std::set<std::string> urls;
  for (const auto& r : records) {
    CHECK(urls.insert(r.image_url).second);
    CHECK(http::parse_url(r.image_url));
    CHECK(http::parse_url(r.article_url));
  }
  CHECK(records.back().keyword == "Mechanics");

  const std::string snapshot = read_file(dir.path() / "harvest.jsonl");
  auto third = harvest(client, cfg, keywords, dir.path());
  CHECK(third.new_records == 0);
  CHECK(read_file(dir.path() / "harvest.jsonl") == snapshot);

  CHECK_THROWS_AS(harvest(client, cfg, {}, dir.path()), Error);
}

TEST_CASE("keyword file loading") {
  test::TempDir dir("kw");
  write_file_atomic(dir.path() / "k.txt", "# comment\nBioinspired materials\n\n  Mechanics \r\n");
  CHECK(load_keywords(dir.path() / "k.txt") == std::vector<std::string>{"Bioinspired materials", "Mechanics"});
  const auto shipped = load_keywords(std::filesystem::path(MATVL_SOURCE_DIR) / "config/keywords.txt");
  CHECK(shipped.size() == 37);
  CHECK(shipped.front() == "Bioinspired materials");
}
