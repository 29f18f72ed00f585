#pragma once

#include <string>
#include <thread>

#include <httplib.h>

namespace matvl::test {

/// httplib server on a random loopback port, listening for the lifetime of
/// the object. Register handlers through `server` before calling start().
class MockServer {
 public:
  httplib::Server server;

  void start() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  int port_ = 0;
  std::thread thread_;
};

}  // namespace matvl::test
