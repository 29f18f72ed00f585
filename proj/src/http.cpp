#include "matvl/http.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <thread>
#include <vector>

#include <httplib.h>

namespace matvl::http {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct Parts {
  std::string scheme;
  std::optional<std::string> authority;
  std::string path;
  std::optional<std::string> query;
};

Parts split_reference(std::string_view ref) {
  Parts p;
  if (auto hash = ref.find('#'); hash != std::string_view::npos) ref = ref.substr(0, hash);
  // scheme = ALPHA *( ALPHA / DIGIT / "+" / "-" / "." ) ":"
  const auto colon = ref.find(':');
  if (colon != std::string_view::npos && colon > 0 && std::isalpha(static_cast<unsigned char>(ref[0]))) {
    bool ok = true;
    for (std::size_t i = 1; i < colon; ++i) {
      const char c = ref[i];
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '+' && c != '-' && c != '.') ok = false;
    }
    if (ok) {
      p.scheme = lower(ref.substr(0, colon));
      ref.remove_prefix(colon + 1);
    }
  }
  if (ref.substr(0, 2) == "//") {
    ref.remove_prefix(2);
    const auto end = ref.find_first_of("/?");
    p.authority = std::string(ref.substr(0, end));
    ref = end == std::string_view::npos ? std::string_view{} : ref.substr(end);
  }
  if (auto q = ref.find('?'); q != std::string_view::npos) {
    p.query = std::string(ref.substr(q + 1));
    ref = ref.substr(0, q);
  }
  p.path = std::string(ref);
  return p;
}

std::string remove_dot_segments(std::string_view in) {
  std::string input(in);
  std::string output;
  while (!input.empty()) {
    if (input.rfind("../", 0) == 0) {
      input.erase(0, 3);
    } else if (input.rfind("./", 0) == 0) {
      input.erase(0, 2);
    } else if (input.rfind("/./", 0) == 0) {
      input.erase(0, 2);
    } else if (input == "/.") {
      input = "/";
    } else if (input.rfind("/../", 0) == 0 || input == "/..") {
      input = input == "/.." ? "/" : input.substr(3);
      const auto slash = output.rfind('/');
      output.erase(slash == std::string::npos ? 0 : slash);
    } else if (input == "." || input == "..") {
      input.clear();
    } else {
      const auto next = input.find('/', input[0] == '/' ? 1 : 0);
      output += input.substr(0, next);
      input.erase(0, next == std::string::npos ? input.size() : next);
    }
  }
  return output;
}

}  // namespace

std::string Url::origin() const {
  std::string out = scheme + "://" + host;
  const int default_port = scheme == "https" ? 443 : 80;
  if (port != 0 && port != default_port) out += ":" + std::to_string(port);
  return out;
}

std::optional<Url> parse_url(std::string_view text) {
  Parts p = split_reference(text);
  if ((p.scheme != "http" && p.scheme != "https") || !p.authority || p.authority->empty()) return std::nullopt;
  Url url;
  url.scheme = p.scheme;
  std::string_view auth = *p.authority;
  if (auto at = auth.rfind('@'); at != std::string_view::npos) auth.remove_prefix(at + 1);
  std::string_view host = auth;
  std::string_view port;
  if (!auth.empty() && auth.front() == '[') {
    const auto close = auth.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    host = auth.substr(0, close + 1);
    if (close + 1 < auth.size()) {
      if (auth[close + 1] != ':') return std::nullopt;
      port = auth.substr(close + 2);
    }
  } else if (auto colon = auth.rfind(':'); colon != std::string_view::npos) {
    host = auth.substr(0, colon);
    port = auth.substr(colon + 1);
  }
  if (host.empty()) return std::nullopt;
  for (char c : host)
    if (std::isspace(static_cast<unsigned char>(c))) return std::nullopt;
  url.host = lower(host);
  if (!port.empty()) {
    int v = 0;
    for (char c : port) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
      v = v * 10 + (c - '0');
      if (v > 65535) return std::nullopt;
    }
    url.port = v;
  }
  url.target = p.path.empty() ? "/" : p.path;
  if (p.query) url.target += "?" + *p.query;
  return url;
}

std::optional<std::string> join_url(std::string_view base_text, std::string_view reference) {
  const Parts base = split_reference(base_text);
  const Parts ref = split_reference(reference);
  Parts target;
  if (!ref.scheme.empty()) {
    target = ref;
    target.path = remove_dot_segments(ref.path);
  } else {
    target.scheme = base.scheme;
    if (ref.authority) {
      target.authority = ref.authority;
      target.path = remove_dot_segments(ref.path);
      target.query = ref.query;
    } else {
      target.authority = base.authority;
      if (ref.path.empty()) {
        target.path = base.path;
        target.query = ref.query ? ref.query : base.query;
      } else {
        if (ref.path.front() == '/') {
          target.path = remove_dot_segments(ref.path);
        } else {
          std::string merged;
          if (base.authority && base.path.empty())
            merged = "/" + ref.path;
          else
            merged = base.path.substr(0, base.path.rfind('/') + 1) + ref.path;
          target.path = remove_dot_segments(merged);
        }
        target.query = ref.query;
      }
    }
  }
  std::string out = target.scheme + "://" + target.authority.value_or("") + target.path;
  if (target.query) out += "?" + *target.query;
  auto parsed = parse_url(out);
  if (!parsed) return std::nullopt;
  return parsed->str();
}

std::string percent_encode(std::string_view text) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

struct Client::HostGate {
  std::mutex m;
  std::condition_variable cv;
  int in_flight = 0;
  std::chrono::steady_clock::time_point next_start{};
};

Client::Client(ClientOptions options) : options_(std::move(options)) {
  if (options_.retry.max_attempts < 1) throw Error("http", "max_attempts must be at least 1");
  if (options_.per_host_in_flight < 1) throw Error("http", "per_host_in_flight must be at least 1");
  sleep_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
}

Client::~Client() = default;

void Client::set_sleeper(std::function<void(std::chrono::duration<double>)> sleeper) {
  sleep_ = std::move(sleeper);
}

Client::HostGate& Client::gate_for(const std::string& origin) {
  std::lock_guard lock(gates_mutex_);
  auto& slot = gates_[origin];
  if (!slot) slot = std::make_unique<HostGate>();
  return *slot;
}

Response Client::get(const std::string& url, const std::map<std::string, std::string>& headers) {
  return send("GET", url, nullptr, {}, headers);
}

Response Client::post(const std::string& url, const std::string& body, const std::string& content_type,
                      const std::map<std::string, std::string>& headers) {
  return send("POST", url, &body, content_type, headers);
}

Response Client::send(const std::string& method, const std::string& url_text, const std::string* body,
                      const std::string& content_type,
                      const std::map<std::string, std::string>& headers) {
  const auto url = parse_url(url_text);
  if (!url) throw HttpError("invalid URL '" + url_text + "'", 0);
  HostGate& gate = gate_for(url->origin());
  const auto spacing = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(options_.per_host_spacing_s));

  httplib::Headers hdrs{{"User-Agent", options_.user_agent}};
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);

  double backoff = options_.retry.initial_backoff_s;
  std::string last_error;
  int last_status = 0;
  for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
    std::chrono::steady_clock::duration wait{};
    {
      std::unique_lock lock(gate.m);
      gate.cv.wait(lock, [&] { return gate.in_flight < options_.per_host_in_flight; });
      const auto now = std::chrono::steady_clock::now();
      const auto start = std::max(now, gate.next_start);
      wait = start - now;
      gate.next_start = start + spacing;
      ++gate.in_flight;
    }
    if (wait.count() > 0) sleep_(wait);

    httplib::Result res{nullptr, httplib::Error::Unknown};
    {
      httplib::Client cli(url->origin());
      const auto to = std::chrono::duration<double>(options_.timeout_s);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
      cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(to));
      cli.set_follow_location(true);
      if (method == "GET")
        res = cli.Get(url->target, hdrs);
      else
        res = cli.Post(url->target, hdrs, *body, content_type);
    }
    {
      std::lock_guard lock(gate.m);
      --gate.in_flight;
    }
    gate.cv.notify_one();

    double retry_after = 0;
    if (res) {
      last_status = res->status;
      if (res->status != 429 && res->status < 500) {
        Response out;
        out.status = res->status;
        out.body = res->body;
        out.attempts = attempt;
        for (const auto& [k, v] : res->headers) out.headers[lower(k)] = v;
        return out;
      }
      last_error = "HTTP " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        try {
          retry_after = std::stod(res->get_header_value("Retry-After"));
        } catch (const std::exception&) {
          retry_after = 0;
        }
      }
    } else {
      last_status = 0;
      last_error = httplib::to_string(res.error());
    }
    if (attempt == options_.retry.max_attempts) break;
    const double delay = std::min(std::max(backoff, retry_after), std::max(options_.retry.max_backoff_s, 0.0));
    if (delay > 0) sleep_(std::chrono::duration<double>(delay));
    backoff = std::min(backoff * options_.retry.multiplier, options_.retry.max_backoff_s);
  }
  throw HttpError(method + " " + url_text + " failed after " + std::to_string(options_.retry.max_attempts) +
                      " attempts: " + last_error,
                  last_status);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (count == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < count; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace matvl::http
