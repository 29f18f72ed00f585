#include "matvl/wiki.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <mutex>
#include <optional>
#include <set>

#include "matvl/digest.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/image.hpp"

namespace matvl::wiki {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    // U+00A0 counts as a space here
    if (is_space(text[i]) || (text[i] == '\xC2' && i + 1 < text.size() && text[i + 1] == '\xA0')) {
      if (text[i] == '\xC2') ++i;
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += text[i];
  }
  return out;
}

void append_utf8(std::string& out, unsigned long cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

struct Tag {
  std::string name;
  bool closing = false;
  bool self_closing = false;
  std::map<std::string, std::string> attrs;

  std::string attr(const std::string& key) const {
    auto it = attrs.find(key);
    return it == attrs.end() ? std::string{} : it->second;
  }
  bool has_class(std::string_view cls) const {
    const std::string all = attr("class");
    std::size_t i = 0;
    while (i < all.size()) {
      while (i < all.size() && is_space(all[i])) ++i;
      const std::size_t start = i;
      while (i < all.size() && !is_space(all[i])) ++i;
      if (std::string_view(all).substr(start, i - start) == cls) return true;
    }
    return false;
  }
};

// Parses the tag starting at markup[pos] == '<'. Returns the index after '>'
// or npos when the tag never terminates.
std::size_t parse_tag(std::string_view m, std::size_t pos, Tag& tag) {
  std::size_t i = pos + 1;
  if (i < m.size() && m[i] == '/') {
    tag.closing = true;
    ++i;
  }
  const std::size_t name_start = i;
  while (i < m.size() && !is_space(m[i]) && m[i] != '>' && m[i] != '/') ++i;
  tag.name = lower(m.substr(name_start, i - name_start));
  while (i < m.size()) {
    while (i < m.size() && is_space(m[i])) ++i;
    if (i >= m.size()) break;
    if (m[i] == '>') return i + 1;
    if (m[i] == '/') {
      tag.self_closing = true;
      ++i;
      continue;
    }
    const std::size_t key_start = i;
    while (i < m.size() && !is_space(m[i]) && m[i] != '=' && m[i] != '>' && m[i] != '/') ++i;
    std::string key = lower(m.substr(key_start, i - key_start));
    while (i < m.size() && is_space(m[i])) ++i;
    std::string value;
    if (i < m.size() && m[i] == '=') {
      ++i;
      while (i < m.size() && is_space(m[i])) ++i;
      if (i < m.size() && (m[i] == '"' || m[i] == '\'')) {
        const char q = m[i];
        const std::size_t end = m.find(q, i + 1);
        if (end == std::string_view::npos) return std::string_view::npos;
        value = std::string(m.substr(i + 1, end - i - 1));
        i = end + 1;
      } else {
        const std::size_t start = i;
        while (i < m.size() && !is_space(m[i]) && m[i] != '>') ++i;
        value = std::string(m.substr(start, i - start));
      }
    }
    if (!key.empty()) tag.attrs.emplace(std::move(key), decode_entities(value));
  }
  return std::string_view::npos;
}

bool is_void(const std::string& name) {
  static const std::set<std::string> v{"area", "base", "br", "col", "embed", "hr", "img", "input",
                                       "link", "meta", "param", "source", "track", "wbr"};
  return v.count(name) > 0;
}

enum class Role { none, container, caption, skip };

Role role_of(const Tag& t) {
  if (t.name == "figure") return Role::container;
  if (t.name == "div" && t.has_class("thumb")) return Role::container;
  if (t.name == "li" && t.has_class("gallerybox")) return Role::container;
  if (t.name == "figcaption") return Role::caption;
  if (t.name == "div" && (t.has_class("thumbcaption") || t.has_class("gallerytext"))) return Role::caption;
  if (t.name == "div" && t.has_class("magnify")) return Role::skip;
  if (t.name == "sup" && t.has_class("reference")) return Role::skip;
  if (t.name == "span" && t.has_class("mw-editsection")) return Role::skip;
  if (t.name == "style" || t.name == "script") return Role::skip;
  return Role::none;
}

int to_int(const std::string& s) {
  int v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return v;
    v = v * 10 + (c - '0');
    if (v > 1000000) return 0;
  }
  return v;
}

struct Partial {
  std::size_t depth = 0;
  std::string src;
  int width = 0;
  int height = 0;
  bool has_image = false;
  std::string caption;
};

}  // namespace

std::string decode_entities(std::string_view text) {
  static const std::map<std::string, std::string, std::less<>> named{
      {"amp", "&"},   {"lt", "<"},         {"gt", ">"},        {"quot", "\""},     {"apos", "'"},
      {"nbsp", "\xC2\xA0"}, {"ndash", "\xE2\x80\x93"}, {"mdash", "\xE2\x80\x94"}, {"times", "\xC3\x97"},
      {"deg", "\xC2\xB0"},  {"micro", "\xC2\xB5"}};
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out += text[i++];
      continue;
    }
    const std::size_t semi = text.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out += text[i++];
      continue;
    }
    const std::string_view body = text.substr(i + 1, semi - i - 1);
    if (!body.empty() && body[0] == '#') {
      unsigned long cp = 0;
      bool ok = body.size() > 1;
      const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
      for (std::size_t k = hex ? 2 : 1; k < body.size() && ok; ++k) {
        const char c = body[k];
        if (hex && std::isxdigit(static_cast<unsigned char>(c)))
          cp = cp * 16 + static_cast<unsigned long>(std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : (std::tolower(c) - 'a' + 10));
        else if (!hex && std::isdigit(static_cast<unsigned char>(c)))
          cp = cp * 10 + static_cast<unsigned long>(c - '0');
        else
          ok = false;
        if (cp > 0x10FFFF) cp = 0x110000;
      }
      if (hex && body.size() == 2) ok = false;
      if (ok) {
        append_utf8(out, cp);
        i = semi + 1;
        continue;
      }
    } else if (auto it = named.find(body); it != named.end()) {
      out += it->second;
      i = semi + 1;
      continue;
    }
    out += text[i++];
  }
  return out;
}

json to_json(const WikiImageRecord& r) {
  return {{"image_url", r.image_url},       {"original_caption", r.original_caption},
          {"article_url", r.article_url},   {"article_title", r.article_title},
          {"keyword", r.keyword},           {"width_px", r.width_px},
          {"height_px", r.height_px},       {"image_sha256", r.image_sha256},
          {"image_ref", r.image_ref}};
}

WikiImageRecord record_from_json(const json& j) {
  WikiImageRecord r;
  r.image_url = j.at("image_url").get<std::string>();
  r.original_caption = j.at("original_caption").get<std::string>();
  r.article_url = j.at("article_url").get<std::string>();
  r.article_title = j.at("article_title").get<std::string>();
  r.keyword = j.at("keyword").get<std::string>();
  r.width_px = j.value("width_px", 0);
  r.height_px = j.value("height_px", 0);
  r.image_sha256 = j.at("image_sha256").get<std::string>();
  r.image_ref = j.at("image_ref").get<std::string>();
  return r;
}

std::vector<std::string> load_keywords(const fs::path& path) {
  std::vector<std::string> out;
  for (const std::string& line : read_lines(path)) {
    const std::string k = collapse_whitespace(line);
    if (k.empty() || k.front() == '#') continue;
    out.push_back(k);
  }
  return out;
}

std::string article_url(const WikiConfig& cfg, std::string_view title) {
  std::string t(title);
  std::replace(t.begin(), t.end(), ' ', '_');
  return cfg.base_url + cfg.article_path + http::percent_encode(t);
}

std::vector<SearchHit> search_articles(http::Client& client, const WikiConfig& cfg,
                                       const std::string& keyword, int limit) {
  if (keyword.empty()) throw Error("wiki", "empty keyword");
  if (limit < 1) throw Error("wiki", "limit must be at least 1");
  const std::string url = cfg.base_url + cfg.api_path + "?action=query&list=search&srsearch=" +
                          http::percent_encode(keyword) + "&srlimit=" + std::to_string(limit) +
                          "&format=json";
  const http::Response res = client.get(url);
  if (res.status != 200) throw http::HttpError("search returned HTTP " + std::to_string(res.status), res.status);
  json j;
  try {
    j = json::parse(res.body);
  } catch (const json::exception& e) {
    throw Error("wiki", "search response is not JSON: " + std::string(e.what()));
  }
  if (j.contains("error")) throw Error("wiki", "search API error: " + j["error"].dump());
  std::vector<SearchHit> hits;
  if (!j.contains("query") || !j["query"].contains("search")) return hits;
  for (const auto& item : j["query"]["search"]) {
    if (static_cast<int>(hits.size()) >= limit) break;
    const std::string title = item.value("title", "");
    if (title.empty()) continue;
    hits.push_back({keyword, title, static_cast<int>(hits.size()) + 1});
  }
  return hits;
}

ArticleImages extract_article_images(std::string_view m, std::string_view base_url, int min_image_px) {
  ArticleImages out;
  struct Frame {
    std::string name;
    Role role;
  };
  std::vector<Frame> stack;
  std::vector<Partial> open;
  int caption_depth = 0;
  int skip_depth = 0;
  std::set<std::string> stray;

  auto finish = [&](Partial p) {
    const std::string caption = collapse_whitespace(decode_entities(p.caption));
    if (!p.has_image || caption.empty() || p.src.empty()) return;
    const auto url = http::join_url(base_url, p.src);
    if (!url) {
      out.warnings.push_back("unusable image URL '" + p.src + "'");
      return;
    }
    if (p.width > 0 && p.height > 0 && std::min(p.width, p.height) < min_image_px) return;
    out.images.push_back({*url, caption, p.width, p.height});
  };
  auto pop = [&] {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.role == Role::caption) --caption_depth;
    if (f.role == Role::skip) --skip_depth;
    if (f.role == Role::container && !open.empty() && open.back().depth == stack.size()) {
      Partial p = std::move(open.back());
      open.pop_back();
      finish(std::move(p));
    }
  };
  auto text = [&](std::string_view t) {
    if (skip_depth == 0 && caption_depth > 0 && !open.empty()) open.back().caption += t;
  };

  std::size_t i = 0;
  while (i < m.size()) {
    if (m[i] != '<') {
      const std::size_t next = m.find('<', i);
      text(m.substr(i, next == std::string_view::npos ? std::string_view::npos : next - i));
      i = next == std::string_view::npos ? m.size() : next;
      continue;
    }
    if (m.substr(i, 4) == "<!--") {
      const std::size_t end = m.find("-->", i + 4);
      if (end == std::string_view::npos) return {{}, {"malformed markup: unterminated comment"}};
      i = end + 3;
      continue;
    }
    if (i + 1 < m.size() && (m[i + 1] == '!' || m[i + 1] == '?')) {
      const std::size_t end = m.find('>', i);
      if (end == std::string_view::npos) return {{}, {"malformed markup: unterminated declaration"}};
      i = end + 1;
      continue;
    }
    if (i + 1 >= m.size() || !(std::isalpha(static_cast<unsigned char>(m[i + 1])) || m[i + 1] == '/')) {
      text("<");
      ++i;
      continue;
    }
    Tag tag;
    const std::size_t end = parse_tag(m, i, tag);
    if (end == std::string_view::npos) return {{}, {"malformed markup: unterminated tag"}};
    i = end;

    if (tag.closing) {
      auto it = std::find_if(stack.rbegin(), stack.rend(), [&](const Frame& f) { return f.name == tag.name; });
      if (it == stack.rend()) {
        stray.insert(tag.name);
        continue;
      }
      const std::size_t target = static_cast<std::size_t>(stack.rend() - it) - 1;
      while (stack.size() > target) pop();
      if (tag.name == "p" || tag.name == "div" || tag.name == "li") text(" ");
      continue;
    }
    if (tag.name == "img") {
      if (skip_depth == 0 && !open.empty() && !open.back().has_image) {
        Partial& p = open.back();
        p.has_image = true;
        p.src = tag.attr("src");
        p.width = to_int(tag.attr("data-file-width"));
        p.height = to_int(tag.attr("data-file-height"));
        if (p.width == 0 || p.height == 0) {
          p.width = to_int(tag.attr("width"));
          p.height = to_int(tag.attr("height"));
        }
      }
      continue;
    }
    if (tag.name == "br") {
      text(" ");
      continue;
    }
    if (is_void(tag.name) || tag.self_closing) continue;

    Role role = role_of(tag);
    if (role == Role::container && !open.empty()) role = Role::none;  // gallerybox > div.thumb
    if (tag.name == "p" || tag.name == "div" || tag.name == "li") text(" ");
    stack.push_back({tag.name, role});
    if (role == Role::container) open.push_back({stack.size() - 1, {}, 0, 0, false, {}});
    if (role == Role::caption) ++caption_depth;
    if (role == Role::skip) ++skip_depth;
    if (tag.name == "script" || tag.name == "style") {
      // raw text: jump to the matching close tag
      const std::string close = "</" + tag.name;
      std::size_t k = i;
      while (k < m.size()) {
        k = m.find("</", k);
        if (k == std::string_view::npos) break;
        if (lower(m.substr(k, close.size())) == close) break;
        k += 2;
      }
      i = k == std::string_view::npos ? m.size() : k;
    }
  }
  for (const auto& name : stray) out.warnings.push_back("stray closing tag </" + name + ">");
  if (!open.empty()) out.warnings.push_back("markup ended inside " + std::to_string(open.size()) + " open figure element(s)");
  return out;
}

std::vector<WikiImageRecord> load_harvest(const fs::path& out) {
  std::vector<WikiImageRecord> records;
  for (const std::string& line : read_lines(out / "harvest.jsonl")) {
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error("wiki", "corrupt harvest.jsonl line: " + std::string(e.what()));
    }
  }
  return records;
}

namespace {

bool transient(const http::HttpError& e) { return e.status() == 0 || e.status() == 429 || e.status() >= 500; }

struct Download {
  std::string bytes;
  std::string ext;
  int width = 0;
  int height = 0;
  std::string error;
  bool transient_error = false;
};

}  // namespace

HarvestSummary harvest(http::Client& client, const WikiConfig& cfg, const std::vector<std::string>& keywords,
                       const fs::path& out, const std::function<void(const std::string&)>& log) {
  if (keywords.empty()) throw Error("wiki", "keyword list is empty");
  if (cfg.limit < 1) throw Error("wiki", "limit must be at least 1");
  fs::create_directories(out / "images");
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };

  HarvestSummary summary;
  std::set<std::string> known_urls;
  for (const auto& r : load_harvest(out)) known_urls.insert(r.image_url);
  summary.total_records = known_urls.size();
  std::set<std::string> done_titles;
  for (const auto& t : read_lines(out / "articles_done.txt")) done_titles.insert(t);

  auto issue = [&](std::string scope, std::string subject, std::string message) {
    say(scope + " " + subject + ": " + message);
    append_line(out / "issues.jsonl", json{{"scope", scope}, {"subject", subject}, {"message", message}}.dump());
    summary.issues.push_back({std::move(scope), std::move(subject), std::move(message)});
  };

  for (const std::string& keyword : keywords) {
    std::vector<SearchHit> hits;
    try {
      hits = search_articles(client, cfg, keyword, cfg.limit);
    } catch (const Error& e) {
      issue("keyword", keyword, e.what());
      continue;
    }
    std::vector<SearchHit> todo;
    for (const auto& h : hits) {
      if (done_titles.count(h.title)) {
        ++summary.articles_skipped;
        continue;
      }
      if (std::none_of(todo.begin(), todo.end(), [&](const SearchHit& t) { return t.title == h.title; }))
        todo.push_back(h);
    }
    say("keyword '" + keyword + "': " + std::to_string(hits.size()) + " hits, " + std::to_string(todo.size()) +
        " to fetch");

    std::vector<std::optional<ArticleImages>> pages(todo.size());
    std::vector<std::string> page_errors(todo.size());
    http::parallel_for(todo.size(), cfg.concurrency, [&](std::size_t i) {
      try {
        const http::Response res = client.get(article_url(cfg, todo[i].title));
        if (res.status != 200) {
          page_errors[i] = "HTTP " + std::to_string(res.status);
          return;
        }
        pages[i] = extract_article_images(res.body, article_url(cfg, todo[i].title), cfg.min_image_px);
      } catch (const Error& e) {
        page_errors[i] = e.what();
      }
    });

    struct Job {
      std::size_t article;
      ImageCandidate candidate;
    };
    std::vector<Job> jobs;
    std::set<std::string> claimed;
    for (std::size_t a = 0; a < todo.size(); ++a) {
      if (!pages[a]) {
        issue("article", todo[a].title, page_errors[a]);
        continue;
      }
      ++summary.articles_fetched;
      for (const auto& w : pages[a]->warnings) issue("article", todo[a].title, w);
      for (const auto& c : pages[a]->images) {
        if (known_urls.count(c.image_url) || claimed.count(c.image_url)) {
          ++summary.duplicate_urls;
          continue;
        }
        claimed.insert(c.image_url);
        jobs.push_back({a, c});
      }
    }

    std::vector<Download> downloads(jobs.size());
    http::parallel_for(jobs.size(), cfg.concurrency, [&](std::size_t i) {
      Download& d = downloads[i];
      try {
        const http::Response res = client.get(jobs[i].candidate.image_url);
        if (res.status != 200) {
          d.error = "HTTP " + std::to_string(res.status);
          return;
        }
        const auto format = sniff_format(res.body);
        if (!format) {
          d.error = "unsupported image format";
          return;
        }
        const Raster r = decode_image(res.body);
        d.width = r.width;
        d.height = r.height;
        d.ext = *format == ImageFormat::png ? "png" : "jpg";
        d.bytes = res.body;
      } catch (const http::HttpError& e) {
        d.error = e.what();
        d.transient_error = transient(e);
      } catch (const Error& e) {
        d.error = e.what();
      }
    });

    std::vector<bool> incomplete(todo.size(), false);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const Job& job = jobs[i];
      const Download& d = downloads[i];
      if (!d.error.empty()) {
        issue("image", job.candidate.image_url, d.error);
        if (d.transient_error) incomplete[job.article] = true;
        continue;
      }
      if (std::min(d.width, d.height) < cfg.min_image_px) {
        ++summary.images_too_small;
        continue;
      }
      WikiImageRecord rec;
      rec.image_url = job.candidate.image_url;
      rec.original_caption = job.candidate.caption;
      rec.article_url = article_url(cfg, todo[job.article].title);
      rec.article_title = todo[job.article].title;
      rec.keyword = keyword;
      rec.width_px = d.width;
      rec.height_px = d.height;
      rec.image_sha256 = sha256_hex(d.bytes);
      rec.image_ref = "images/" + rec.image_sha256 + "." + d.ext;
      if (!fs::exists(out / rec.image_ref)) write_file_atomic(out / rec.image_ref, d.bytes);
      append_line(out / "harvest.jsonl", to_json(rec).dump());
      known_urls.insert(rec.image_url);
      ++summary.new_records;
      ++summary.total_records;
    }
    for (std::size_t a = 0; a < todo.size(); ++a) {
      if (!pages[a] || incomplete[a]) continue;
      append_line(out / "articles_done.txt", todo[a].title);
      done_titles.insert(todo[a].title);
    }
  }
  say("harvest: " + std::to_string(summary.new_records) + " new, " + std::to_string(summary.total_records) +
      " total records");
  return summary;
}

}  // namespace matvl::wiki
