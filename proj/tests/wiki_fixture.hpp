#pragma once

#include <atomic>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "matvl/image.hpp"
#include "mock_server.hpp"
#include "support.hpp"

namespace matvl::test {

/// Local stand-in for a MediaWiki site: search API, article pages and an
/// image directory.
struct FixtureWiki {
  std::map<std::string, std::vector<std::string>> search;  // keyword -> titles in rank order
  std::map<std::string, std::string> articles;             // URL title -> markup
  std::map<std::string, std::string> images;               // file name -> bytes
  std::map<std::string, int> article_failures;              // title -> remaining 500s
  std::atomic<int> api_calls{0}, article_calls{0}, image_calls{0};
  MockServer mock;

  void start() {
    mock.server.Get("/w/api.php", [this](const httplib::Request& req, httplib::Response& res) {
      ++api_calls;
      const std::string kw = req.get_param_value("srsearch");
      const int limit = std::stoi(req.get_param_value("srlimit"));
      if (kw == "explode") {
        res.status = 400;
        return;
      }
      nlohmann::json hits = nlohmann::json::array();
      auto it = search.find(kw);
      if (it != search.end())
        for (std::size_t i = 0; i < it->second.size() && static_cast<int>(i) < limit; ++i)
          hits.push_back({{"ns", 0}, {"title", it->second[i]}});
      res.set_content(nlohmann::json{{"batchcomplete", ""}, {"query", {{"search", hits}}}}.dump(),
                      "application/json");
    });
    mock.server.Get(R"(/wiki/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      ++article_calls;
      const std::string title = req.matches[1];
      auto fail = article_failures.find(title);
      if (fail != article_failures.end() && fail->second > 0) {
        --fail->second;
        res.status = 500;
        return;
      }
      auto it = articles.find(title);
      if (it == articles.end()) {
        res.status = 404;
        return;
      }
      res.set_content(it->second, "text/html");
    });
    mock.server.Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      ++image_calls;
      auto it = images.find(req.matches[1]);
      if (it == images.end()) {
        res.status = 404;
        return;
      }
      res.set_content(it->second, "image/png");
    });
    mock.start();
  }

  std::string base() const { return mock.base(); }
};

inline std::string thumb(const std::string& src, const std::string& caption, int w = 300, int h = 200) {
  return "<div class=\"thumb tright\"><div class=\"thumbinner\"><a href=\"/wiki/File:x\" class=\"image\">"
         "<img src=\"" + src + "\" width=\"220\" height=\"150\" data-file-width=\"" + std::to_string(w) +
         "\" data-file-height=\"" + std::to_string(h) + "\"></a><div class=\"thumbcaption\">"
         "<div class=\"magnify\"><a href=\"/wiki/File:x\" title=\"Enlarge\">Enlarge</a></div>" + caption +
         "</div></div></div>";
}

inline std::string article(const std::string& body) {
  return "<!DOCTYPE html><html><head><title>t</title><style>.thumb{}</style></head><body><p>Intro.</p>" +
         body + "</body></html>";
}

}  // namespace matvl::test
