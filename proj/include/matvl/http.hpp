#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "matvl/error.hpp"

namespace matvl::http {

struct Url {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;  // 0 = scheme default
  std::string target = "/";  // path plus query, never a fragment

  std::string origin() const;
  std::string str() const { return origin() + target; }
};

std::optional<Url> parse_url(std::string_view text);

/// Resolves `reference` against an absolute `base` (RFC 3986 section 5.2,
/// fragments dropped). Returns nullopt when the result is not http(s).
std::optional<std::string> join_url(std::string_view base, std::string_view reference);

std::string percent_encode(std::string_view text);

struct RetryPolicy {
  int max_attempts = 4;
  double initial_backoff_s = 0.5;
  double multiplier = 2.0;
  double max_backoff_s = 8.0;
};

struct ClientOptions {
  double timeout_s = 30;
  RetryPolicy retry;
  double per_host_spacing_s = 0.5;
  int per_host_in_flight = 1;
  std::string user_agent = "matvl/0.1";
};

struct Response {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;  // lower-cased names
  int attempts = 0;
};

class HttpError : public Error {
 public:
  HttpError(const std::string& message, int status) : Error("http", message), status_(status) {}
  int status() const { return status_; }  // 0 for transport failures

 private:
  int status_;
};

/// Blocking client that is safe to share between threads. Retries 429,
/// 5xx and transport failures with exponential backoff, honours Retry-After,
/// and paces requests per host.
class Client {
 public:
  explicit Client(ClientOptions options = {});
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// Non-retryable statuses (2xx-4xx except 429) are returned as-is.
  Response get(const std::string& url, const std::map<std::string, std::string>& headers = {});
  Response post(const std::string& url, const std::string& body, const std::string& content_type,
                const std::map<std::string, std::string>& headers = {});

  /// Replaces the sleep used for pacing and backoff (tests).
  void set_sleeper(std::function<void(std::chrono::duration<double>)> sleeper);

 private:
  struct HostGate;
  Response send(const std::string& method, const std::string& url, const std::string* body,
                const std::string& content_type, const std::map<std::string, std::string>& headers);
  HostGate& gate_for(const std::string& origin);

  ClientOptions options_;
  std::mutex gates_mutex_;
  std::map<std::string, std::unique_ptr<HostGate>> gates_;
  std::function<void(std::chrono::duration<double>)> sleep_;
};

/// Runs fn(i) for i in [0, n) on at most `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace matvl::http
