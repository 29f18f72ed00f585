#include "doctest.h"

#include <set>

#include "matvl/config.hpp"
#include "matvl/fsutil.hpp"
#include "support.hpp"

using namespace matvl;
using namespace matvl::config;

TEST_CASE("defaults") {
  const PipelineConfig c;
  CHECK(c.split_ratio == 0.9);
  CHECK(c.harvest.wiki.limit == 100);
  CHECK(c.harvest.wiki.min_image_px == 128);
  CHECK(c.harvest.per_host_spacing_s == 0.5);
  CHECK(c.harvest.per_host_in_flight == 1);
  CHECK(c.refine.endpoint.max_in_flight == 1);
  CHECK(c.damage.color_distance_threshold == 0.15);
  CHECK(c.tokenizer == "whitespace");
  CHECK(std::filesystem::exists(c.harvest.keywords));
  CHECK(std::filesystem::exists(c.refine.templates));
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("toml overrides and relative paths") {
  const auto c = parse(R"(
seed = 11
output_root = "runs"
[harvest]
keywords = "kw.txt"
limit = 5
base_url = "http://127.0.0.1:9"
[endpoint]
base_url = "http://localhost:8000"
model = "m"
max_in_flight = 3
timeout_s = 10
template = "paper_reasoned"
[filter]
max_aspect = 4
[split]
ratio = 0.8
[damage]
color_distance_threshold = 0.2
[stats]
tokenizer = "tok/merges.txt"
bins = 20
[corpus]
query = "Describe the image."
)",
                       "/cfg");
  CHECK(c.seed == 11);
  CHECK(c.output_root == "/cfg/runs");
  CHECK(c.harvest.keywords == "/cfg/kw.txt");
  CHECK(c.harvest.wiki.limit == 5);
  CHECK(c.harvest.wiki.base_url == "http://127.0.0.1:9");
  CHECK(c.refine.endpoint.model == "m");
  CHECK(c.refine.endpoint.max_in_flight == 3);
  CHECK(c.refine.template_id == "paper_reasoned");
  CHECK(c.filter.max_aspect == 4.0);
  CHECK(c.split_ratio == 0.8);
  CHECK(c.damage.color_distance_threshold == 0.2);
  CHECK(c.tokenizer == "/cfg/tok/merges.txt");
  CHECK(c.bins == 20);
  CHECK(c.query == "Describe the image.");
  CHECK(parse("[stats]\ntokenizer = \"whitespace\"\n", "/cfg").tokenizer == "whitespace");
}

TEST_CASE("bad configs are rejected") {
  CHECK_THROWS_AS(parse("unknown = 1"), Error);
  CHECK_THROWS_AS(parse("[harvest]\nlimt = 3"), Error);
  CHECK_THROWS_AS(parse("[harvest]\nlimit = \"many\""), Error);
  CHECK_THROWS_AS(parse("[split]\nratio = "), Error);
  CHECK_THROWS_AS(parse("harvest = 3"), Error);
  CHECK_THROWS_AS(parse("[stats]\nbins = -1"), Error);
  for (const char* ratio : {"0", "1", "1.5", "-0.1"}) {
    CAPTURE(ratio);
    CHECK_THROWS_AS(validate(parse(std::string("[split]\nratio = ") + ratio)), Error);
  }
  CHECK_NOTHROW(validate(parse("[split]\nratio = 0.5")));
  CHECK_THROWS_AS(validate(parse("[endpoint]\nmax_attempts = 0")), Error);
  CHECK_THROWS_AS(require_file("/definitely/not/here", "keyword file"), Error);
  CHECK_THROWS_AS(load("/definitely/not/here.toml"), Error);
}

TEST_CASE("digest changes iff a semantic field changes") {
  const std::vector<std::string> edits = {
      "seed = 8",
      "output_root = \"/elsewhere\"",
      "[harvest]\nkeywords = \"/k2.txt\"",
      "[harvest]\nbase_url = \"http://x\"",
      "[harvest]\napi_path = \"/api.php\"",
      "[harvest]\narticle_path = \"/page/\"",
      "[harvest]\nlimit = 99",
      "[harvest]\nmin_image_px = 127",
      "[harvest]\nconcurrency = 5",
      "[harvest]\nspacing_s = 0.25",
      "[harvest]\nper_host_in_flight = 2",
      "[endpoint]\nbase_url = \"http://e\"",
      "[endpoint]\nmodel = \"m2\"",
      "[endpoint]\nmax_in_flight = 2",
      "[endpoint]\ntimeout_s = 60",
      "[endpoint]\nmax_attempts = 3",
      "[endpoint]\ninitial_backoff_s = 1.0",
      "[endpoint]\nbackoff_multiplier = 3",
      "[endpoint]\nmax_backoff_s = 4",
      "[endpoint]\ntemperature = 0.7",
      "[endpoint]\nmax_tokens = 512",
      "[endpoint]\ntemplates = \"/t.json\"",
      "[endpoint]\ntemplate = \"paper_concise\"",
      "[filter]\nmax_aspect = 7.5",
      "[filter]\nmin_px = 65",
      "[filter]\nbelow_tolerance = 1.0",
      "[filter]\nexclusion_list = \"/x.txt\"",
      "[split]\nratio = 0.85",
      "[damage]\ncolor_distance_threshold = 0.1",
      "[stats]\ntokenizer = \"/tok.json\"",
      "[stats]\nbins = 49",
      "[corpus]\nquery = \"Q?\"",
  };
  const std::string base = digest(PipelineConfig{});
  std::set<std::string> seen{base};
  for (const auto& e : edits) {
    CAPTURE(e);
    const std::string d = digest(parse(e, "/"));
    CHECK(d != base);
    CHECK(seen.insert(d).second);
    CHECK(digest(parse(e, "/")) == d);
  }
  // restating a default leaves the digest alone
  CHECK(digest(parse("seed = 7\n[split]\nratio = 0.9\n[harvest]\nlimit = 100\n")) == base);
  // the credential is not part of the configuration identity
  PipelineConfig keyed;
  keyed.refine.endpoint.api_key = "secret";
  CHECK(digest(keyed) == base);
  CHECK(to_json(keyed).dump().find("secret") == std::string::npos);
}

TEST_CASE("load resolves against the file location") {
  test::TempDir dir("cfg");
  write_file_atomic(dir.path() / "sub/pipeline.toml", "[harvest]\nkeywords = \"kw.txt\"\n");
  CHECK(load(dir.path() / "sub/pipeline.toml").harvest.keywords == dir.path() / "sub/kw.txt");
}
