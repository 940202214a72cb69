#pragma once

// Chat-platform webhook service: ingests image messages, runs detection jobs
// on a worker pool, replies with annotated images, serves those images and
// accepts specialist verdict commands.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ricebot/detector.hpp"
#include "ricebot/store.hpp"

namespace ricebot::gateway {

inline constexpr const char* kDefaultReplyTemplate =
    "Detected: {class} ({confidence})\nJob {job-ref}";
inline constexpr const char* kSignatureHeader = "x-line-signature";
inline constexpr int kPreviewMaxSide = 240;

struct GatewayConfig {
  std::string listen_host = "0.0.0.0";
  int listen_port = 8080;
  std::string platform_base_url = "http://127.0.0.1:9000";
  std::string channel_secret;
  std::string access_token;  // sent as a bearer token when set
  double threshold = 0.25;
  int workers = 2;
  int queue_capacity = 1024;
  std::string public_base_url = "http://127.0.0.1:8080";
  std::string reply_template = kDefaultReplyTemplate;
  bool verbose = false;  // reply "no target disease found" instead of silence
  std::string data_dir = "ricebot-data";
  int detect_deadline_ms = 10000;
  int platform_timeout_ms = 5000;
  detector::BackendConfig backend{detector::BackendKind::kMockSynthetic, "", "",
                                   detector::default_color_map()};
  std::vector<std::string> specialists;
  std::vector<std::string> admins;

  // Throws InvalidArgument.
  void validate() const;
};

nlohmann::json config_to_json(const GatewayConfig& cfg);
// Missing keys keep their defaults; unknown keys are an error.
GatewayConfig config_from_json(const nlohmann::json& j);
// Each scalar key may be overridden by RICEBOT_<KEY> (nested keys joined with
// '_', e.g. RICEBOT_BACKEND_KIND). String lists take comma-separated values.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
nlohmann::json apply_env_overrides(nlohmann::json j, const EnvLookup& env);
EnvLookup process_env();
// File (optional, empty path for none) then environment.
GatewayConfig load_config(const std::string& path, const EnvLookup& env = process_env());

// base64(HMAC-SHA256(secret, body)).
std::string compute_signature(std::string_view secret, std::string_view body);
bool verify_signature(std::string_view secret, std::string_view body,
                      std::string_view signature);

struct ChatEvent {
  std::string type;          // "message", "follow", ...
  std::string message_type;  // "image", "text", ... (message events only)
  std::string message_id;
  std::string source_type;
  std::string user_id;
  std::string group_id;
  std::string reply_token;
  std::int64_t timestamp = 0;
  std::string text;
};

// {destination, events:[...]}. Throws ParseError.
std::vector<ChatEvent> parse_envelope(std::string_view body);
nlohmann::json event_to_json(const ChatEvent& e);

struct Command {
  enum class Kind { kCorrect, kConfirm };
  Kind kind = Kind::kConfirm;
  std::string job_ref;
  // kCorrect only; nullopt for "none" (not a disease).
  std::optional<std::string> class_name;
};

// "/correct <job-ref> <class|none>" or "/confirm <job-ref>". Returns nullopt
// for ordinary chat; throws InvalidArgument for a malformed command.
std::optional<Command> parse_command(std::string_view text);

struct ClassSummary {
  DiseaseClass cls;
  double max_confidence = 0;
};
// Distinct classes by descending maximum confidence (ties by class id).
std::vector<ClassSummary> summarize(const std::vector<Detection>& dets);

// Lines mentioning {class} or {confidence} repeat once per summary entry;
// {job-ref} is substituted everywhere. Confidences print with 2 decimals.
std::string render_reply_text(std::string_view tmpl, const std::vector<Detection>& dets,
                              std::string_view job_ref);

detector::DetectionResponse apply_threshold(const detector::DetectionResponse& r,
                                            double threshold);

struct OutboundMessage {
  enum class Kind { kImage, kText };
  Kind kind = Kind::kText;
  std::string text;
  std::string original_url;
  std::string preview_url;
};

struct ReplyBundle {
  std::string reply_token;
  std::vector<OutboundMessage> messages;
};
nlohmann::json reply_to_json(const ReplyBundle& r);

// Messaging API client for content fetch and replies.
class PlatformClient {
 public:
  PlatformClient(std::string base_url, std::string access_token, int timeout_ms);

  // Throws BackendUnavailable.
  std::string fetch_content(const std::string& message_id) const;
  // Returns the ids the platform assigned to the sent messages. Throws
  // BackendUnavailable.
  std::vector<std::string> reply(const ReplyBundle& bundle) const;

 private:
  std::string origin_;
  std::string base_path_;
  std::string access_token_;
  int timeout_ms_;
};

struct HttpResult {
  int status = 200;
  std::string body;
};

struct Content {
  std::string bytes;
  std::string content_type;
};

class Gateway {
 public:
  // Opens <data_dir>/logs.db. A null backend is built from cfg.backend.
  explicit Gateway(GatewayConfig cfg,
                   std::unique_ptr<detector::DetectorBackend> backend = nullptr,
                   ClassRegistry registry = ClassRegistry());
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const GatewayConfig& config() const { return cfg_; }
  store::Store& store() { return *store_; }
  const ClassRegistry& registry() const { return registry_; }

  // Starts the worker pool and re-enqueues jobs left queued or running by a
  // previous process.
  void start_workers();
  // Drains nothing; in-flight jobs finish, queued ones stay queued.
  void stop();

  // Verifies, persists and enqueues. Never waits for detection.
  HttpResult handle_webhook(std::string_view body, std::string_view signature);

  // Runs one job to completion; used by the workers.
  store::JobRecord process_job(const std::string& job_id);

  // token is hex; nullopt for anything unpublished.
  std::optional<Content> serve_content(std::string_view token, bool preview) const;

  // Publishes PNG bytes and returns the token.
  std::string publish(const std::string& png);

  // Blocks until the queue is empty and no job is running, or the timeout.
  bool wait_idle(std::chrono::milliseconds timeout);
  std::size_t queue_depth() const;

  // HTTP front end: POST /webhook, GET /content/..., GET /healthz.
  int start_http(const std::string& host, int port);  // background; returns port
  void listen_http(const std::string& host, int port);  // blocking
  void stop_http();

 private:
  struct Task {
    std::string job_id;             // a detection job, or
    std::function<void()> action;   // an outbound reply
  };

  bool enqueue(Task task, bool bounded);
  void worker_loop();
  void handle_text(const ChatEvent& e);
  void send_text(const std::string& reply_token, const std::string& text);
  void ensure_user(const std::string& user_id);
  store::JobRecord fail_job(const std::string& job_id, const std::string& reason);

  GatewayConfig cfg_;
  ClassRegistry registry_;
  std::unique_ptr<store::Store> store_;
  std::unique_ptr<detector::DetectorBackend> backend_;
  PlatformClient platform_;

  mutable std::mutex qmu_;
  std::condition_variable qcv_;
  std::condition_variable idle_cv_;
  std::deque<Task> queue_;
  std::size_t jobs_queued_ = 0;
  int busy_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace ricebot::gateway
