#include "matvl/refine.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <map>
#include <mutex>

#include "matvl/digest.hpp"
#include "matvl/fsutil.hpp"
#include "matvl/image.hpp"
#include "matvl/wiki.hpp"

namespace matvl::refine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kPlaceholder = "{caption}";

std::size_t count_placeholders(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(kPlaceholder); pos != std::string_view::npos; pos = text.find(kPlaceholder, pos + 1)) ++n;
  return n;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}

json opt_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

json entry_json(const RefineInput& in, const std::optional<RefineResult>& result, const std::string& error) {
  json j = {{"id", in.id},
            {"status", result ? "ok" : "error"},
            {"source", corpus::to_string(in.source)},
            {"image_path", in.image_path.string()},
            {"original_caption", in.caption},
            {"image_url", opt_json(in.image_url)},
            {"article_url", opt_json(in.article_url)},
            {"origin", in.origin}};
  if (result) {
    j["refined_text"] = result->refined_text;
    j["template_id"] = result->template_id;
    j["model"] = result->model_name;
    j["latency_s"] = result->latency_s;
    j["validation"] = result->validation == Validation::pass ? "pass" : "warn";
    j["warn_reason"] = result->warn_reason;
  } else {
    j["error"] = error;
  }
  return j;
}

RefineInput input_from_json(const json& j) {
  RefineInput in;
  in.id = j.at("id").get<std::string>();
  const auto source = corpus::parse_source(j.at("source").get<std::string>());
  if (!source) throw Error("refine", "unknown source in entry " + in.id);
  in.source = *source;
  in.image_path = j.at("image_path").get<std::string>();
  in.caption = j.at("original_caption").get<std::string>();
  in.image_url = opt_string(j, "image_url");
  in.article_url = opt_string(j, "article_url");
  in.origin = j.value("origin", "");
  return in;
}

RefineResult result_from_json(const json& j) {
  RefineResult r;
  r.record_id = j.at("id").get<std::string>();
  r.refined_text = j.at("refined_text").get<std::string>();
  r.template_id = j.at("template_id").get<std::string>();
  r.model_name = j.at("model").get<std::string>();
  r.latency_s = j.value("latency_s", 0.0);
  r.validation = j.value("validation", "pass") == "pass" ? Validation::pass : Validation::warn;
  r.warn_reason = j.value("warn_reason", "");
  return r;
}

std::string reply_text(const json& body) {
  const json& content = body.at("choices").at(0).at("message").at("content");
  if (content.is_null()) return {};
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  for (const auto& part : content)
    if (part.value("type", "") == "text") out += part.value("text", "");
  return out;
}

}  // namespace

std::vector<RefineTemplate> parse_templates(std::string_view json_text) {
  std::vector<RefineTemplate> out;
  try {
    const json j = json::parse(json_text);
    for (const auto& t : j.at("templates")) {
      RefineTemplate tmpl{t.at("id").get<std::string>(), t.at("system_text").get<std::string>(),
                          t.at("user_text").get<std::string>()};
      if (count_placeholders(tmpl.user_text) != 1)
        throw Error("refine.template", "template '" + tmpl.id + "' must contain exactly one {caption}");
      if (std::any_of(out.begin(), out.end(), [&](const RefineTemplate& o) { return o.id == tmpl.id; }))
        throw Error("refine.template", "duplicate template id '" + tmpl.id + "'");
      out.push_back(std::move(tmpl));
    }
  } catch (const json::exception& e) {
    throw Error("refine.template", std::string("malformed template file: ") + e.what());
  }
  return out;
}

std::vector<RefineTemplate> load_templates(const fs::path& path) { return parse_templates(read_file(path)); }

std::string serialize_templates(const std::vector<RefineTemplate>& templates) {
  json arr = json::array();
  for (const auto& t : templates)
    arr.push_back(json{{"id", t.id}, {"system_text", t.system_text}, {"user_text", t.user_text}});
  return json{{"templates", arr}}.dump(2) + "\n";
}

const RefineTemplate& find_template(const std::vector<RefineTemplate>& templates, std::string_view id) {
  for (const auto& t : templates)
    if (t.id == id) return t;
  throw Error("refine.template", "no template named '" + std::string(id) + "'");
}

std::string build_prompt(const RefineTemplate& tmpl, std::string_view caption) {
  if (caption.find_first_not_of(" \t\r\n") == std::string_view::npos) throw Error("refine", "empty caption");
  std::string safe(caption);
  std::replace(safe.begin(), safe.end(), '`', '\'');
  const auto pos = tmpl.user_text.find(kPlaceholder);
  if (pos == std::string::npos) throw Error("refine.template", "template '" + tmpl.id + "' has no {caption}");
  std::string out = tmpl.user_text;
  out.replace(pos, kPlaceholder.size(), safe);
  return out;
}

http::ClientOptions client_options(const EndpointConfig& cfg) {
  http::ClientOptions o;
  o.timeout_s = cfg.timeout_s;
  o.retry = cfg.retry;
  o.per_host_in_flight = std::max(1, cfg.max_in_flight);
  o.per_host_spacing_s = 0;
  return o;
}

bool has_accepted_opener(std::string_view text) {
  const auto start = text.find_first_not_of(" \t\r\n\"'");
  if (start == std::string_view::npos) return false;
  text.remove_prefix(start);
  for (std::string_view opener : {"the image shows", "shown in the image", "the image depicts"}) {
    if (text.size() < opener.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < opener.size() && match; ++i)
      match = std::tolower(static_cast<unsigned char>(text[i])) == opener[i];
    if (match) return true;
  }
  return false;
}

json chat_request(const EndpointConfig& cfg, std::string_view system_text, std::string_view prompt,
                  std::string_view image_bytes) {
  const auto format = sniff_format(image_bytes);
  const std::string mime = format == ImageFormat::jpeg ? "image/jpeg" : "image/png";
  json user_content = json::array(
      {json{{"type", "text"}, {"text", prompt}},
       json{{"type", "image_url"},
            {"image_url", {{"url", "data:" + mime + ";base64," + base64_encode(image_bytes)}}}}});
  return {{"model", cfg.model},
          {"messages",
           json::array({json{{"role", "system"}, {"content", system_text}},
                        json{{"role", "user"}, {"content", user_content}}})},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_tokens}};
}

RefineResult refine_caption(http::Client& client, const EndpointConfig& cfg, const std::string& record_id,
                            std::string_view image_bytes, const RefineTemplate& tmpl, const std::string& prompt) {
  if (!sniff_format(image_bytes)) throw RefineError(record_id, "image is neither PNG nor JPEG");
  const std::string body = chat_request(cfg, tmpl.system_text, prompt, image_bytes).dump();
  std::map<std::string, std::string> headers;
  if (!cfg.api_key.empty()) headers["Authorization"] = "Bearer " + cfg.api_key;

  const auto t0 = std::chrono::steady_clock::now();
  http::Response res;
  try {
    res = client.post(cfg.base_url + "/v1/chat/completions", body, "application/json", headers);
  } catch (const http::HttpError& e) {
    throw RefineError(record_id, e.what());
  }
  const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (res.status != 200) throw RefineError(record_id, "endpoint returned HTTP " + std::to_string(res.status));

  std::string text;
  try {
    text = reply_text(json::parse(res.body));
  } catch (const json::exception& e) {
    throw RefineError(record_id, std::string("unexpected endpoint reply: ") + e.what());
  }
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw RefineError(record_id, "empty reply");

  RefineResult r;
  r.record_id = record_id;
  r.refined_text = std::move(text);
  r.template_id = tmpl.id;
  r.model_name = cfg.model;
  r.latency_s = latency;
  if (!has_accepted_opener(r.refined_text)) {
    r.validation = Validation::warn;
    r.warn_reason = "opener";
  }
  return r;
}

std::vector<RefineInput> load_inputs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("refine", "input directory not found: " + dir.string());
  const fs::path root = fs::absolute(dir).lexically_normal();
  std::vector<RefineInput> out;
  if (fs::exists(root / "harvest.jsonl")) {
    for (const auto& rec : wiki::load_harvest(root)) {
      RefineInput in;
      in.id = "w" + sha256_hex(rec.image_url).substr(0, 16);
      in.source = corpus::Source::wikipedia;
      in.image_path = root / rec.image_ref;
      in.caption = rec.original_caption;
      in.image_url = rec.image_url;
      in.article_url = rec.article_url;
      in.origin = rec.article_title;
      out.push_back(std::move(in));
    }
  }
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl" && entry.path().filename() != "harvest.jsonl")
      sidecars.push_back(entry.path());
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& path : sidecars) {
    const auto lines = read_lines(path);
    for (const auto& line : lines) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        break;
      }
      if (!j.is_object() || !j.contains("doc_id") || !j.contains("image") || !j.contains("caption")) break;
      RefineInput in;
      const std::string image = j["image"].get<std::string>();
      in.id = fs::path(image).stem().string();
      in.source = corpus::Source::paper_pdf;
      in.image_path = root / image;
      in.caption = j["caption"].get<std::string>();
      in.origin = j["doc_id"].get<std::string>();
      out.push_back(std::move(in));
    }
  }
  std::map<std::string, int> seen;
  for (const auto& in : out)
    if (++seen[in.id] > 1) throw Error("refine", "duplicate input id " + in.id);
  return out;
}

BatchOutcome refine_batch(http::Client& client, const EndpointConfig& cfg, const std::vector<RefineInput>& inputs,
                          const RefineTemplate& tmpl, const fs::path& out,
                          const std::function<void(const std::string&)>& log) {
  if (cfg.max_in_flight < 1) throw Error("refine", "max_in_flight must be at least 1");
  fs::create_directories(out);
  const fs::path results_path = out / "results.jsonl";

  std::map<std::string, RefineResult> previous;
  for (const auto& line : read_lines(results_path)) {
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      continue;  // torn final line from an interrupted run
    }
    const std::string id = j.value("id", "");
    if (j.value("status", "") != "ok") {
      previous.erase(id);
      continue;
    }
    RefineResult r = result_from_json(j);
    if (r.template_id == tmpl.id && r.model_name == cfg.model)
      previous[id] = std::move(r);
    else
      previous.erase(id);
  }

  BatchOutcome outcome;
  outcome.entries.resize(inputs.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    outcome.entries[i].input = inputs[i];
    if (auto it = previous.find(inputs[i].id); it != previous.end()) {
      outcome.entries[i].result = it->second;
      ++outcome.reused;
    } else {
      pending.push_back(i);
    }
  }
  if (log) log("refine: " + std::to_string(pending.size()) + " to send, " + std::to_string(outcome.reused) + " reused");

  std::mutex writer;
  std::size_t calls = 0;
  http::parallel_for(pending.size(), cfg.max_in_flight, [&](std::size_t k) {
    BatchEntry& entry = outcome.entries[pending[k]];
    const RefineInput& in = entry.input;
    try {
      const std::string prompt = build_prompt(tmpl, in.caption);
      std::string bytes;
      try {
        bytes = read_file(in.image_path);
      } catch (const Error& e) {
        throw RefineError(in.id, e.what());
      }
      {
        std::lock_guard lock(writer);
        ++calls;
      }
      entry.result = refine_caption(client, cfg, in.id, bytes, tmpl, prompt);
    } catch (const Error& e) {
      entry.error = e.what();
    }
    std::lock_guard lock(writer);
    append_line(results_path, entry_json(in, entry.result, entry.error).dump());
    if (log && !entry.result) log("refine " + in.id + " failed: " + entry.error);
  });
  outcome.calls = calls;

  std::string manifest;
  for (const BatchEntry& e : outcome.entries) {
    if (!e.result) ++outcome.failed;
    manifest += entry_json(e.input, e.result, e.error).dump() + "\n";
  }
  write_file_atomic(out / "manifest.jsonl", manifest);
  return outcome;
}

std::vector<RefinedRecord> load_refined(const fs::path& out) {
  const fs::path path = out / "manifest.jsonl";
  if (!fs::exists(path)) throw Error("refine", "no manifest.jsonl in " + out.string());
  std::vector<RefinedRecord> records;
  for (const auto& line : read_lines(path)) {
    try {
      const json j = json::parse(line);
      if (j.value("status", "") != "ok") continue;
      records.push_back({input_from_json(j), result_from_json(j)});
    } catch (const json::exception& e) {
      throw Error("refine", "corrupt manifest line: " + std::string(e.what()));
    }
  }
  return records;
}

}  // namespace matvl::refine
