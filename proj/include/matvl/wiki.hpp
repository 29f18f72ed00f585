#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matvl/http.hpp"

namespace matvl::wiki {

struct WikiConfig {
  std::string base_url = "https://en.wikipedia.org";
  std::string api_path = "/w/api.php";
  std::string article_path = "/wiki/";
  int limit = 100;
  int min_image_px = 128;  // shorter side
  int concurrency = 4;
};

struct SearchHit {
  std::string keyword;
  std::string title;
  int rank = 0;  // 1-based
};

struct WikiImageRecord {
  std::string image_url;
  std::string original_caption;
  std::string article_url;
  std::string article_title;
  std::string keyword;
  int width_px = 0;
  int height_px = 0;
  std::string image_sha256;
  std::string image_ref;  // relative to the harvest directory

  bool operator==(const WikiImageRecord&) const = default;
};

nlohmann::json to_json(const WikiImageRecord& record);
WikiImageRecord record_from_json(const nlohmann::json& j);

/// One keyword per line; blank lines and '#' comments skipped.
std::vector<std::string> load_keywords(const std::filesystem::path& path);

std::string article_url(const WikiConfig& cfg, std::string_view title);

/// Throws HttpError when the API cannot be reached after retries.
std::vector<SearchHit> search_articles(http::Client& client, const WikiConfig& cfg,
                                       const std::string& keyword, int limit);

struct ImageCandidate {
  std::string image_url;
  std::string caption;
  int width_px = 0;  // 0 when the markup does not say
  int height_px = 0;
};

struct ArticleImages {
  std::vector<ImageCandidate> images;
  std::vector<std::string> warnings;
};

/// Scans figure, thumbnail and gallery elements for an image plus a
/// non-empty caption.
ArticleImages extract_article_images(std::string_view markup, std::string_view base_url,
                                     int min_image_px = 128);

/// Entity decoding (named basics plus numeric references).
std::string decode_entities(std::string_view text);

struct HarvestIssue {
  std::string scope;  // "keyword", "article" or "image"
  std::string subject;
  std::string message;
};

struct HarvestSummary {
  std::size_t new_records = 0;
  std::size_t total_records = 0;
  std::size_t articles_fetched = 0;
  std::size_t articles_skipped = 0;  // already done in an earlier run
  std::size_t images_too_small = 0;
  std::size_t duplicate_urls = 0;
  std::vector<HarvestIssue> issues;
};

/// Output layout: harvest.jsonl, images/<sha256>.<ext>, articles_done.txt,
/// issues.jsonl. Re-running skips finished articles and known image URLs.
HarvestSummary harvest(http::Client& client, const WikiConfig& cfg,
                       const std::vector<std::string>& keywords, const std::filesystem::path& out,
                       const std::function<void(const std::string&)>& log = {});

std::vector<WikiImageRecord> load_harvest(const std::filesystem::path& out);

}  // namespace matvl::wiki
