#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mock_server.hpp"

namespace matvl::test {

/// Chat-completions stand-in. `reply` maps the user text part to the
/// assistant content; an empty optional answers with HTTP 500.
struct MockChat {
  struct Call {
    nlohmann::json request;
    std::string authorization;
    std::chrono::steady_clock::time_point start, end;
  };

  std::function<std::optional<std::string>(const std::string& prompt)> reply = [](const std::string&) {
    return std::optional<std::string>("The image shows a sample.");
  };
  std::chrono::milliseconds delay{0};
  std::vector<Call> calls;
  std::mutex m;
  MockServer mock;

  void start() {
    mock.server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      Call call;
      call.start = std::chrono::steady_clock::now();
      call.request = nlohmann::json::parse(req.body);
      call.authorization = req.get_header_value("Authorization");
      const std::string prompt = call.request["messages"][1]["content"][0]["text"];
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      const auto text = reply(prompt);
      call.end = std::chrono::steady_clock::now();
      {
        std::lock_guard lock(m);
        calls.push_back(call);
      }
      if (!text) {
        res.status = 500;
        return;
      }
      nlohmann::json body = {
          {"id", "chatcmpl-1"},
          {"object", "chat.completion"},
          {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", *text}}}, {"finish_reason", "stop"}}}}};
      res.set_content(body.dump(), "application/json");
    });
    mock.start();
  }

  std::size_t call_count() {
    std::lock_guard lock(m);
    return calls.size();
  }
  std::string base() const { return mock.base(); }
};

}  // namespace matvl::test
