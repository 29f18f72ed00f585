#include "matvl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "matvl/digest.hpp"

namespace matvl::config {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path default_data_dir() { return MATVL_DEFAULT_DATA_DIR; }

PipelineConfig::PipelineConfig() {
  harvest.keywords = default_data_dir() / "keywords.txt";
  refine.templates = default_data_dir() / "refine_templates.json";
}

namespace {

class Reader {
 public:
  Reader(const toml::table& root, fs::path base) : root_(root), base_(std::move(base)) {}

  const toml::table* section(std::string_view name, std::set<std::string> keys) {
    allowed_top_.insert(std::string(name));
    const toml::node* node = root_.get(name);
    if (!node) return nullptr;
    const toml::table* t = node->as_table();
    if (!t) throw Error("config", "[" + std::string(name) + "] must be a table");
    check_keys(*t, keys, std::string(name) + ".");
    return t;
  }

  void top_level(std::set<std::string> keys) {
    for (const auto& k : keys) allowed_top_.insert(k);
    check_keys(root_, allowed_top_, "");
  }

  template <class T>
  void number(const toml::table* t, std::string_view key, T& dst) {
    const toml::node* n = t ? t->get(key) : nullptr;
    if (!n) return;
    if constexpr (std::is_floating_point_v<T>) {
      auto v = n->value<double>();
      if (!v || (!n->is_floating_point() && !n->is_integer())) fail(key, "a number");
      dst = static_cast<T>(*v);
    } else {
      if (!n->is_integer()) fail(key, "an integer");
      const std::int64_t v = *n->value<std::int64_t>();
      if constexpr (std::is_unsigned_v<T>)
        if (v < 0) fail(key, "non-negative");
      dst = static_cast<T>(v);
    }
  }

  void string(const toml::table* t, std::string_view key, std::string& dst) {
    const toml::node* n = t ? t->get(key) : nullptr;
    if (!n) return;
    if (!n->is_string()) fail(key, "a string");
    dst = *n->value<std::string>();
  }

  void path(const toml::table* t, std::string_view key, fs::path& dst) {
    std::string s;
    const bool present = t && t->get(key);
    string(t, key, s);
    if (!present) return;
    dst = s.empty() || fs::path(s).is_absolute() || base_.empty() ? fs::path(s) : base_ / s;
  }

 private:
  [[noreturn]] void fail(std::string_view key, std::string_view what) {
    throw Error("config", "'" + std::string(key) + "' must be " + std::string(what));
  }
  void check_keys(const toml::table& t, const std::set<std::string>& keys, const std::string& prefix) {
    for (const auto& [k, v] : t)
      if (!keys.count(std::string(k.str()))) throw Error("config", "unknown key '" + prefix + std::string(k.str()) + "'");
  }

  const toml::table& root_;
  fs::path base_;
  std::set<std::string> allowed_top_;
};

}  // namespace

PipelineConfig parse(std::string_view toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at line " << e.source().begin.line;
    throw Error("config", msg.str());
  }
  PipelineConfig cfg;
  Reader r(root, base_dir);

  const auto* harvest = r.section("harvest", {"keywords", "base_url", "api_path", "article_path", "limit", "min_image_px",
                                              "concurrency", "spacing_s", "per_host_in_flight"});
  r.path(harvest, "keywords", cfg.harvest.keywords);
  r.string(harvest, "base_url", cfg.harvest.wiki.base_url);
  r.string(harvest, "api_path", cfg.harvest.wiki.api_path);
  r.string(harvest, "article_path", cfg.harvest.wiki.article_path);
  r.number(harvest, "limit", cfg.harvest.wiki.limit);
  r.number(harvest, "min_image_px", cfg.harvest.wiki.min_image_px);
  r.number(harvest, "concurrency", cfg.harvest.wiki.concurrency);
  r.number(harvest, "spacing_s", cfg.harvest.per_host_spacing_s);
  r.number(harvest, "per_host_in_flight", cfg.harvest.per_host_in_flight);

  const auto* endpoint = r.section("endpoint", {"base_url", "model", "max_in_flight", "timeout_s", "max_attempts",
                                                "initial_backoff_s", "backoff_multiplier", "max_backoff_s",
                                                "temperature", "max_tokens", "templates", "template"});
  auto& ep = cfg.refine.endpoint;
  r.string(endpoint, "base_url", ep.base_url);
  r.string(endpoint, "model", ep.model);
  r.number(endpoint, "max_in_flight", ep.max_in_flight);
  r.number(endpoint, "timeout_s", ep.timeout_s);
  r.number(endpoint, "max_attempts", ep.retry.max_attempts);
  r.number(endpoint, "initial_backoff_s", ep.retry.initial_backoff_s);
  r.number(endpoint, "backoff_multiplier", ep.retry.multiplier);
  r.number(endpoint, "max_backoff_s", ep.retry.max_backoff_s);
  r.number(endpoint, "temperature", ep.temperature);
  r.number(endpoint, "max_tokens", ep.max_tokens);
  r.path(endpoint, "templates", cfg.refine.templates);
  r.string(endpoint, "template", cfg.refine.template_id);

  const auto* filter = r.section("filter", {"max_aspect", "min_px", "below_tolerance", "exclusion_list"});
  r.number(filter, "max_aspect", cfg.filter.max_aspect);
  r.number(filter, "min_px", cfg.filter.min_px);
  r.number(filter, "below_tolerance", cfg.filter.below_tolerance);
  r.path(filter, "exclusion_list", cfg.exclusion_list);

  const auto* split = r.section("split", {"ratio"});
  r.number(split, "ratio", cfg.split_ratio);

  const auto* damage = r.section("damage", {"color_distance_threshold"});
  r.number(damage, "color_distance_threshold", cfg.damage.color_distance_threshold);

  const auto* stats = r.section("stats", {"tokenizer", "bins"});
  if (stats && stats->get("tokenizer")) {
    std::string tok;
    r.string(stats, "tokenizer", tok);
    const bool keep = tok == "whitespace" || tok.empty() || fs::path(tok).is_absolute() || base_dir.empty();
    cfg.tokenizer = keep ? tok : (base_dir / tok).string();
  }
  r.number(stats, "bins", cfg.bins);

  const auto* corpus = r.section("corpus", {"query"});
  r.string(corpus, "query", cfg.query);

  const toml::table* top = &root;
  r.path(top, "output_root", cfg.output_root);
  r.number(top, "seed", cfg.seed);
  r.top_level({"output_root", "seed"});
  return cfg;
}

PipelineConfig load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("config", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void validate(const PipelineConfig& cfg) {
  auto bad = [](const std::string& what) { throw Error("config", what); };
  if (!(cfg.split_ratio > 0 && cfg.split_ratio < 1)) bad("split ratio must lie strictly between 0 and 1");
  if (cfg.harvest.wiki.limit < 1) bad("harvest limit must be at least 1");
  if (cfg.harvest.wiki.concurrency < 1) bad("harvest concurrency must be at least 1");
  if (cfg.harvest.per_host_in_flight < 1) bad("per_host_in_flight must be at least 1");
  if (cfg.harvest.per_host_spacing_s < 0) bad("spacing must be non-negative");
  if (cfg.refine.endpoint.max_in_flight < 1) bad("max_in_flight must be at least 1");
  if (cfg.refine.endpoint.retry.max_attempts < 1) bad("max_attempts must be at least 1");
  if (!(cfg.refine.endpoint.timeout_s > 0)) bad("timeout must be positive");
  if (!(cfg.filter.max_aspect >= 1)) bad("max_aspect must be at least 1");
  if (cfg.filter.min_px < 0) bad("min_px must be non-negative");
  if (!(cfg.damage.color_distance_threshold >= 0)) bad("damage threshold must be non-negative");
  if (cfg.bins < 1) bad("bins must be at least 1");
  if (cfg.query.empty()) bad("query must not be empty");
}

void require_file(const fs::path& path, std::string_view what) {
  if (path.empty() || !fs::is_regular_file(path))
    throw Error("config", std::string(what) + " not found: " + path.string());
}

json to_json(const PipelineConfig& c) {
  const auto& ep = c.refine.endpoint;
  return {{"output_root", c.output_root.string()},
          {"seed", c.seed},
          {"harvest",
           {{"keywords", c.harvest.keywords.string()},
            {"base_url", c.harvest.wiki.base_url},
            {"api_path", c.harvest.wiki.api_path},
            {"article_path", c.harvest.wiki.article_path},
            {"limit", c.harvest.wiki.limit},
            {"min_image_px", c.harvest.wiki.min_image_px},
            {"concurrency", c.harvest.wiki.concurrency},
            {"spacing_s", c.harvest.per_host_spacing_s},
            {"per_host_in_flight", c.harvest.per_host_in_flight}}},
          {"endpoint",
           {{"base_url", ep.base_url},
            {"model", ep.model},
            {"max_in_flight", ep.max_in_flight},
            {"timeout_s", ep.timeout_s},
            {"max_attempts", ep.retry.max_attempts},
            {"initial_backoff_s", ep.retry.initial_backoff_s},
            {"backoff_multiplier", ep.retry.multiplier},
            {"max_backoff_s", ep.retry.max_backoff_s},
            {"temperature", ep.temperature},
            {"max_tokens", ep.max_tokens},
            {"templates", c.refine.templates.string()},
            {"template", c.refine.template_id}}},
          {"filter",
           {{"max_aspect", c.filter.max_aspect},
            {"min_px", c.filter.min_px},
            {"below_tolerance", c.filter.below_tolerance},
            {"exclusion_list", c.exclusion_list.string()}}},
          {"split", {{"ratio", c.split_ratio}}},
          {"damage", {{"color_distance_threshold", c.damage.color_distance_threshold}}},
          {"stats", {{"tokenizer", c.tokenizer}, {"bins", c.bins}}},
          {"corpus", {{"query", c.query}}}};
}

std::string digest(const PipelineConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

}  // namespace matvl::config
