#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matvl/corpus.hpp"
#include "matvl/http.hpp"

namespace matvl::refine {

struct RefineTemplate {
  std::string id;  // wiki, paper_concise or paper_reasoned
  std::string system_text;
  std::string user_text;  // holds exactly one {caption}

  bool operator==(const RefineTemplate&) const = default;
};

std::vector<RefineTemplate> parse_templates(std::string_view json_text);
std::vector<RefineTemplate> load_templates(const std::filesystem::path& path);
std::string serialize_templates(const std::vector<RefineTemplate>& templates);
const RefineTemplate& find_template(const std::vector<RefineTemplate>& templates, std::string_view id);

/// Backticks in the caption become apostrophes so the ``` delimiters in the
/// template stay intact.
std::string build_prompt(const RefineTemplate& tmpl, std::string_view caption);

struct EndpointConfig {
  std::string base_url;  // e.g. http://localhost:8000
  std::string model;
  int max_in_flight = 1;
  double timeout_s = 120;
  http::RetryPolicy retry;
  double temperature = 0.2;
  int max_tokens = 1024;
  std::string api_key;  // sent as a bearer token when set
};

/// Client options matching the endpoint's timeout, retry and concurrency.
http::ClientOptions client_options(const EndpointConfig& cfg);

enum class Validation { pass, warn };

struct RefineResult {
  std::string record_id;
  std::string refined_text;
  std::string template_id;
  std::string model_name;
  double latency_s = 0;
  Validation validation = Validation::pass;
  std::string warn_reason;
};

class RefineError : public Error {
 public:
  RefineError(std::string record_id, const std::string& message)
      : Error("refine", record_id + ": " + message), record_id_(std::move(record_id)) {}
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

/// Case-insensitive check for "The image shows", "Shown in the image" or
/// "The image depicts" at the start of the text.
bool has_accepted_opener(std::string_view text);

nlohmann::json chat_request(const EndpointConfig& cfg, std::string_view system_text, std::string_view prompt,
                            std::string_view image_bytes);

RefineResult refine_caption(http::Client& client, const EndpointConfig& cfg, const std::string& record_id,
                            std::string_view image_bytes, const RefineTemplate& tmpl, const std::string& prompt);

struct RefineInput {
  std::string id;
  corpus::Source source = corpus::Source::wikipedia;
  std::filesystem::path image_path;
  std::string caption;
  std::optional<std::string> image_url;
  std::optional<std::string> article_url;
  std::string origin;  // article title or PDF document id

  bool operator==(const RefineInput&) const = default;
};

/// Reads harvest.jsonl and any figure sidecar JSONL files in `dir`. Harvest
/// entries come first, then sidecars in file-name order.
std::vector<RefineInput> load_inputs(const std::filesystem::path& dir);

struct BatchEntry {
  RefineInput input;
  std::optional<RefineResult> result;
  std::string error;  // set when result is empty
};

struct BatchOutcome {
  std::vector<BatchEntry> entries;  // input order
  std::size_t calls = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
};

/// Appends to <out>/results.jsonl as calls finish and rewrites
/// <out>/manifest.jsonl with one line per input. Ids already refined with the
/// same template and model are not sent again.
BatchOutcome refine_batch(http::Client& client, const EndpointConfig& cfg, const std::vector<RefineInput>& inputs,
                          const RefineTemplate& tmpl, const std::filesystem::path& out,
                          const std::function<void(const std::string&)>& log = {});

struct RefinedRecord {
  RefineInput input;
  RefineResult result;
};

/// Successful entries of a finished batch, in manifest order.
std::vector<RefinedRecord> load_refined(const std::filesystem::path& out);

}  // namespace matvl::refine
