#pragma once

// A stand-in for the messaging platform: serves message content and records
// reply calls, speaking the same endpoints as the real API subset.

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ricebot::testing {

class FakePlatform {
 public:
  FakePlatform();
  ~FakePlatform();
  FakePlatform(const FakePlatform&) = delete;
  FakePlatform& operator=(const FakePlatform&) = delete;

  int port() const { return port_; }
  std::string base_url() const;

  void put_content(const std::string& message_id, std::string bytes);
  void set_reply_status(int status);
  void set_content_status(int status);

  std::vector<nlohmann::json> replies() const;
  std::size_t reply_count() const;
  std::size_t content_requests() const;
  bool wait_for_replies(std::size_t n, std::chrono::milliseconds timeout) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace ricebot::testing
