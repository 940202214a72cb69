#include "ricebot/gateway.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <spdlog/spdlog.h>

#include "gateway_http_impl.hpp"
#include "ricebot/annotate.hpp"
#include "ricebot/image.hpp"

namespace ricebot::gateway {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config --------------------------------------------------------------------

void GatewayConfig::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InvalidArgument("threshold must lie in [0,1]");
  if (workers < 1) throw InvalidArgument("worker count must be >= 1");
  if (queue_capacity < 1) throw InvalidArgument("queue capacity must be >= 1");
  if (listen_port < 0 || listen_port > 65535) throw InvalidArgument("bad listen port");
  if (detect_deadline_ms < 1 || platform_timeout_ms < 1)
    throw InvalidArgument("timeouts must be positive");
  if (reply_template.empty()) throw InvalidArgument("reply template must not be empty");
  if (data_dir.empty()) throw InvalidArgument("data_dir must not be empty");
  backend.validate();
}

namespace {

bool same_colors(const std::vector<detector::ColorClass>& a,
                 const std::vector<detector::ColorClass>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](const auto& x, const auto& y) {
    return x.color == y.color && x.class_name == y.class_name;
  });
}

json backend_to_json(const detector::BackendConfig& b) {
  json j = {{"kind", detector::to_string(b.kind)},
            {"endpoint", b.endpoint},
            {"fixture_path", b.fixture_path},
            {"confidence_floor", b.confidence_floor},
            {"max_in_flight", b.max_in_flight},
            {"color_tolerance", b.color_tolerance},
            {"min_component_pixels", b.min_component_pixels}};
  // The stock colour scheme is implied by the synthetic kind.
  if (!b.color_map.empty() && !same_colors(b.color_map, detector::default_color_map())) {
    json colors = json::array();
    for (const auto& c : b.color_map)
      colors.push_back({{"class", c.class_name}, {"rgb", {c.color.r, c.color.g, c.color.b}}});
    j["color_map"] = colors;
  }
  return j;
}

detector::BackendConfig backend_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "kind",          "endpoint",        "fixture_path",         "confidence_floor",
      "max_in_flight", "color_tolerance", "min_component_pixels", "color_map"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InvalidArgument("unknown backend config key: " + key);
  detector::BackendConfig b;
  b.kind = detector::parse_backend_kind(j.value("kind", std::string("mock_synthetic")));
  b.endpoint = j.value("endpoint", std::string());
  b.fixture_path = j.value("fixture_path", std::string());
  b.confidence_floor = j.value("confidence_floor", 0.0);
  b.max_in_flight = j.value("max_in_flight", 4);
  b.color_tolerance = j.value("color_tolerance", 8);
  b.min_component_pixels = j.value("min_component_pixels", 4);
  if (j.contains("color_map")) {
    for (const auto& c : j.at("color_map")) {
      const auto& rgb = c.at("rgb");
      b.color_map.push_back({{rgb.at(0).get<std::uint8_t>(), rgb.at(1).get<std::uint8_t>(),
                              rgb.at(2).get<std::uint8_t>()},
                             c.at("class").get<std::string>()});
    }
  } else if (b.kind == detector::BackendKind::kMockSynthetic) {
    b.color_map = detector::default_color_map();
  }
  return b;
}

std::string env_name(const std::string& prefix, const std::string& key) {
  std::string out = prefix + "_";
  for (char c : key) out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(
                                                        static_cast<unsigned char>(c))));
  return out;
}

json parse_env_value(const json& current, const std::string& name, const std::string& v) {
  try {
    switch (current.type()) {
      case json::value_t::boolean: {
        const std::string t = to_lower(v);
        if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
        if (t == "0" || t == "false" || t == "no" || t == "off") return false;
        break;
      }
      case json::value_t::number_integer:
      case json::value_t::number_unsigned:
        return std::stoll(v);
      case json::value_t::number_float:
        return std::stod(v);
      case json::value_t::array: {
        json arr = json::array();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!item.empty()) arr.push_back(item);
        return arr;
      }
      default:
        return v;
    }
  } catch (const std::logic_error&) {
  }
  throw InvalidArgument("cannot parse " + name + "=" + v);
}

json apply_env_at(json j, const std::string& prefix, const EnvLookup& env) {
  for (auto& [key, value] : j.items()) {
    const std::string name = env_name(prefix, key);
    if (value.is_object()) {
      value = apply_env_at(value, name, env);
    } else if (auto v = env(name)) {
      value = parse_env_value(value, name, *v);
    }
  }
  return j;
}

}  // namespace

json config_to_json(const GatewayConfig& c) {
  return {{"listen_host", c.listen_host},
          {"listen_port", c.listen_port},
          {"platform_base_url", c.platform_base_url},
          {"channel_secret", c.channel_secret},
          {"access_token", c.access_token},
          {"threshold", c.threshold},
          {"workers", c.workers},
          {"queue_capacity", c.queue_capacity},
          {"public_base_url", c.public_base_url},
          {"reply_template", c.reply_template},
          {"verbose", c.verbose},
          {"data_dir", c.data_dir},
          {"detect_deadline_ms", c.detect_deadline_ms},
          {"platform_timeout_ms", c.platform_timeout_ms},
          {"backend", backend_to_json(c.backend)},
          {"specialists", c.specialists},
          {"admins", c.admins}};
}

GatewayConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  const json defaults = config_to_json(GatewayConfig{});
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw InvalidArgument("unknown config key: " + key);
  GatewayConfig c;
  try {
    c.listen_host = j.value("listen_host", c.listen_host);
    c.listen_port = j.value("listen_port", c.listen_port);
    c.platform_base_url = j.value("platform_base_url", c.platform_base_url);
    c.channel_secret = j.value("channel_secret", c.channel_secret);
    c.access_token = j.value("access_token", c.access_token);
    c.threshold = j.value("threshold", c.threshold);
    c.workers = j.value("workers", c.workers);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.public_base_url = j.value("public_base_url", c.public_base_url);
    c.reply_template = j.value("reply_template", c.reply_template);
    c.verbose = j.value("verbose", c.verbose);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.detect_deadline_ms = j.value("detect_deadline_ms", c.detect_deadline_ms);
    c.platform_timeout_ms = j.value("platform_timeout_ms", c.platform_timeout_ms);
    if (j.contains("backend")) c.backend = backend_from_json(j.at("backend"));
    c.specialists = j.value("specialists", c.specialists);
    c.admins = j.value("admins", c.admins);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

json apply_env_overrides(json j, const EnvLookup& env) {
  return apply_env_at(std::move(j), "RICEBOT", env);
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

GatewayConfig load_config(const std::string& path, const EnvLookup& env) {
  json j = config_to_json(GatewayConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config " + path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(0, "config " + path + ": " + e.what());
    }
    if (!file.is_object()) throw InvalidArgument("config must be a JSON object");
    // A changed backend kind should not inherit the other kinds' parameters.
    if (file.contains("backend")) j.erase("backend");
    j.update(file);
  }
  return config_from_json(apply_env_overrides(std::move(j), env));
}

// --- signature -----------------------------------------------------------------

std::string compute_signature(std::string_view secret, std::string_view body) {
  unsigned char mac[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), secret.data(), static_cast<int>(secret.size()),
            reinterpret_cast<const unsigned char*>(body.data()), body.size(), mac, &len))
    throw Error("HMAC computation failed");
  std::string out(4 * ((len + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), mac,
                                static_cast<int>(len));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

bool verify_signature(std::string_view secret, std::string_view body,
                      std::string_view signature) {
  const std::string expected = compute_signature(secret, body);
  return signature.size() == expected.size() &&
         CRYPTO_memcmp(expected.data(), signature.data(), expected.size()) == 0;
}

// --- envelope ----------------------------------------------------------------------

std::vector<ChatEvent> parse_envelope(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ParseError(0, std::string("envelope is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("events") || !j.at("events").is_array())
    throw ParseError(0, "envelope needs an events array");
  std::vector<ChatEvent> out;
  try {
    for (const auto& ev : j.at("events")) {
      ChatEvent e;
      e.type = ev.at("type").get<std::string>();
      e.timestamp = ev.value("timestamp", std::int64_t{0});
      e.reply_token = ev.value("replyToken", std::string());
      if (ev.contains("source")) {
        const auto& src = ev.at("source");
        e.source_type = src.value("type", std::string());
        e.user_id = src.value("userId", std::string());
        e.group_id = src.value("groupId", std::string());
      }
      if (e.type == "message") {
        const auto& m = ev.at("message");
        e.message_id = m.at("id").get<std::string>();
        e.message_type = m.at("type").get<std::string>();
        e.text = m.value("text", std::string());
        if (e.message_id.empty()) throw ParseError(0, "message without an id");
      }
      out.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("malformed event: ") + e.what());
  }
  return out;
}

json event_to_json(const ChatEvent& e) {
  json source = {{"type", e.source_type.empty() ? std::string(e.group_id.empty() ? "user" : "group")
                                                : e.source_type},
                 {"userId", e.user_id}};
  if (!e.group_id.empty()) source["groupId"] = e.group_id;
  json ev = {{"type", e.type}, {"timestamp", e.timestamp}, {"source", source}};
  if (!e.reply_token.empty()) ev["replyToken"] = e.reply_token;
  if (e.type == "message") {
    json m = {{"id", e.message_id}, {"type", e.message_type}};
    if (e.message_type == "text") m["text"] = e.text;
    ev["message"] = m;
  }
  return ev;
}

// --- commands and replies --------------------------------------------------------------

std::optional<Command> parse_command(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.empty()) return std::nullopt;
  const std::string verb = to_lower(words[0]);
  if (verb == "/confirm") {
    if (words.size() != 2) throw InvalidArgument("usage: /confirm <job>");
    return Command{Command::Kind::kConfirm, words[1], std::nullopt};
  }
  if (verb == "/correct") {
    if (words.size() != 3) throw InvalidArgument("usage: /correct <job> <class|none>");
    std::optional<std::string> cls = to_lower(words[2]);
    if (*cls == "none") cls.reset();
    return Command{Command::Kind::kCorrect, words[1], cls};
  }
  return std::nullopt;
}

std::vector<ClassSummary> summarize(const std::vector<Detection>& dets) {
  std::map<DiseaseClass, double> best;
  for (const auto& d : dets) {
    auto [it, fresh] = best.emplace(d.cls(), d.confidence());
    if (!fresh) it->second = std::max(it->second, d.confidence());
  }
  std::vector<ClassSummary> out;
  for (const auto& [cls, conf] : best) out.push_back({cls, conf});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.max_confidence > b.max_confidence;
  });
  return out;
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_reply_text(std::string_view tmpl, const std::vector<Detection>& dets,
                              std::string_view job_ref) {
  const auto summary = summarize(dets);
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in{std::string(tmpl)};
  while (std::getline(in, line)) {
    replace_all(line, "{job-ref}", job_ref);
    if (line.find("{class}") == std::string::npos &&
        line.find("{confidence}") == std::string::npos) {
      lines.push_back(line);
      continue;
    }
    for (const auto& s : summary) {
      std::string l = line;
      replace_all(l, "{class}", s.cls.name);
      replace_all(l, "{confidence}", fixed2(s.max_confidence));
      lines.push_back(std::move(l));
    }
  }
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

detector::DetectionResponse apply_threshold(const detector::DetectionResponse& r,
                                            double threshold) {
  detector::DetectionResponse out = r;
  out.detections.clear();
  for (const auto& d : r.detections)
    if (d.confidence() >= threshold) out.detections.push_back(d);
  return out;
}

json reply_to_json(const ReplyBundle& r) {
  json messages = json::array();
  for (const auto& m : r.messages) {
    if (m.kind == OutboundMessage::Kind::kImage)
      messages.push_back({{"type", "image"},
                          {"originalContentUrl", m.original_url},
                          {"previewImageUrl", m.preview_url}});
    else
      messages.push_back({{"type", "text"}, {"text", m.text}});
  }
  return {{"replyToken", r.reply_token}, {"messages", messages}};
}

// --- gateway -------------------------------------------------------------------------

namespace {

std::string random_hex(std::size_t bytes) {
  std::string raw(bytes, '\0');
  if (RAND_bytes(reinterpret_cast<unsigned char*>(raw.data()), static_cast<int>(bytes)) != 1)
    throw Error("random token generation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : raw) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::optional<std::string> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_hex_token(std::string_view t) {
  return !t.empty() && t.size() <= 64 &&
         std::all_of(t.begin(), t.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

std::string trim_slash(std::string s) {
  while (!s.empty() && s.back() == '/') s.pop_back();
  return s;
}

std::string extension_for(const std::string& content_type) {
  if (content_type == "image/png") return ".png";
  if (content_type == "image/jpeg") return ".jpg";
  return ".bin";
}

}  // namespace

Gateway::Gateway(GatewayConfig cfg, std::unique_ptr<detector::DetectorBackend> backend,
                 ClassRegistry registry)
    : cfg_(std::move(cfg)),
      registry_(std::move(registry)),
      platform_(cfg_.platform_base_url, cfg_.access_token, cfg_.platform_timeout_ms) {
  if (!backend) cfg_.validate();
  fs::create_directories(fs::path(cfg_.data_dir) / "content");
  fs::create_directories(fs::path(cfg_.data_dir) / "images");
  store_ = std::make_unique<store::Store>((fs::path(cfg_.data_dir) / "logs.db").string(),
                                          registry_);
  backend_ = backend ? std::move(backend) : detector::make_backend(cfg_.backend, registry_);
  for (const auto& id : cfg_.specialists)
    store_->upsert_user({id, store::Role::kSpecialist, ""});
  for (const auto& id : cfg_.admins) store_->upsert_user({id, store::Role::kAdmin, ""});
}

Gateway::~Gateway() {
  stop_http();
  stop();
}

void Gateway::start_workers() {
  {
    std::lock_guard lock(qmu_);
    if (!workers_.empty()) return;
    stopping_ = false;
  }
  // Jobs a previous process acknowledged but never finished.
  std::vector<store::JobRecord> pending;
  for (auto status : {store::JobStatus::kRunning, store::JobStatus::kQueued}) {
    store::JobFilter f;
    f.status = status;
    auto jobs = store_->list_jobs(f);
    pending.insert(pending.end(), jobs.begin(), jobs.end());
  }
  std::sort(pending.begin(), pending.end(), [](const auto& a, const auto& b) {
    return *store::parse_job_ref(a.job_id) < *store::parse_job_ref(b.job_id);
  });
  {
    std::lock_guard lock(qmu_);
    std::vector<std::string> present;
    for (const auto& t : queue_) present.push_back(t.job_id);
    for (const auto& j : pending) {
      if (std::find(present.begin(), present.end(), j.job_id) != present.end()) continue;
      queue_.push_back({j.job_id, {}});
      ++jobs_queued_;
    }
  }
  if (!pending.empty()) spdlog::info("resuming {} unfinished job(s)", pending.size());
  std::lock_guard lock(qmu_);
  for (int i = 0; i < cfg_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void Gateway::stop() {
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(qmu_);
    stopping_ = true;
    workers.swap(workers_);
  }
  qcv_.notify_all();
  for (auto& t : workers) t.join();
}

bool Gateway::enqueue(Task task, bool bounded) {
  {
    std::lock_guard lock(qmu_);
    const bool is_job = !task.job_id.empty();
    if (bounded && is_job && jobs_queued_ >= static_cast<std::size_t>(cfg_.queue_capacity))
      return false;
    queue_.push_back(std::move(task));
    if (is_job) ++jobs_queued_;
  }
  qcv_.notify_one();
  return true;
}

std::size_t Gateway::queue_depth() const {
  std::lock_guard lock(qmu_);
  return queue_.size();
}

bool Gateway::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(qmu_);
  return idle_cv_.wait_for(lock, timeout, [this] { return queue_.empty() && busy_ == 0; });
}

void Gateway::worker_loop() {
  for (;;) {
    Task task;
    {
      std::unique_lock lock(qmu_);
      qcv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      task = std::move(queue_.front());
      queue_.pop_front();
      if (!task.job_id.empty()) --jobs_queued_;
      ++busy_;
    }
    try {
      if (!task.job_id.empty())
        process_job(task.job_id);
      else
        task.action();
    } catch (const std::exception& e) {
      spdlog::error("worker task failed: {}", e.what());
      if (!task.job_id.empty()) {
        try {
          fail_job(task.job_id, std::string("internal error: ") + e.what());
        } catch (const std::exception&) {
        }
      }
    }
    {
      std::lock_guard lock(qmu_);
      --busy_;
    }
    idle_cv_.notify_all();
  }
}

void Gateway::ensure_user(const std::string& user_id) {
  if (user_id.empty() || store_->get_user(user_id)) return;
  store_->upsert_user({user_id, store::Role::kFarmer, ""});
}

HttpResult Gateway::handle_webhook(std::string_view body, std::string_view signature) {
  if (!verify_signature(cfg_.channel_secret, body, signature))
    return {401, R"({"message":"invalid signature"})"};
  std::vector<ChatEvent> events;
  try {
    events = parse_envelope(body);
  } catch (const ParseError& e) {
    return {400, json{{"message", e.what()}}.dump()};
  }
  for (const auto& e : events) {
    const store::EventRecord rec{e.message_id, e.type,        e.message_type, e.user_id,
                                 e.group_id,   e.reply_token, e.timestamp,    e.text};
    if (e.type == "message" && e.message_type == "image") {
      // The job row is the durable acknowledgement; a crash before the
      // event row is written is repaired by the redelivery.
      ensure_user(e.user_id);
      auto job = store_->create_job({e.message_id, e.user_id, e.group_id, e.reply_token});
      store_->append_event(rec);
      if (!job) continue;  // redelivery
      if (!enqueue({job->job_id, {}}, true)) {
        spdlog::warn("queue full, failing {}", job->job_id);
        fail_job(job->job_id, "queue full");
      }
      continue;
    }
    if (!store_->append_event(rec)) continue;
    if (e.type == "message" && e.message_type == "text") handle_text(e);
  }
  return {200, "{}"};
}

store::JobRecord Gateway::fail_job(const std::string& job_id, const std::string& reason) {
  spdlog::warn("{} failed: {}", job_id, reason);
  store::JobUpdate u;
  u.reason = reason;
  return store_->transition_job(job_id, store::JobStatus::kFailed, u);
}

void Gateway::send_text(const std::string& reply_token, const std::string& text) {
  if (reply_token.empty()) return;
  ReplyBundle bundle{reply_token, {{OutboundMessage::Kind::kText, text, "", ""}}};
  enqueue({"", [this, bundle] {
             try {
               platform_.reply(bundle);
             } catch (const Error& e) {
               spdlog::error("reply failed: {}", e.what());
             }
           }},
          false);
}

void Gateway::handle_text(const ChatEvent& e) {
  std::optional<Command> cmd;
  std::string malformed;
  try {
    cmd = parse_command(e.text);
  } catch (const InvalidArgument& ex) {
    malformed = ex.what();
  }
  if (!cmd && malformed.empty()) return;  // ordinary chat

  const auto user = store_->get_user(e.user_id);
  const store::Role role = user ? user->role : store::Role::kFarmer;
  if (role == store::Role::kFarmer) {
    store_->append_audit({0, e.user_id, "command_ignored", e.text});
    return;
  }
  if (!cmd) {
    send_text(e.reply_token, malformed);
    return;
  }

  store::JobRecord job;
  try {
    job = store_->get_job(cmd->job_ref);
  } catch (const UnknownJob&) {
    send_text(e.reply_token, "Unknown job " + cmd->job_ref);
    return;
  }

  store::FeedbackRecord fb;
  fb.job_id = job.job_id;
  fb.specialist_id = e.user_id;
  fb.timestamp_ms = e.timestamp ? e.timestamp : store::wall_clock_ms();
  if (cmd->kind == Command::Kind::kConfirm) {
    fb.verdict = store::Verdict::kConfirm;
  } else if (!cmd->class_name) {
    fb.verdict = store::Verdict::kNotDisease;
  } else {
    const auto cls = registry_.lookup(*cmd->class_name);
    if (!cls) {
      std::string known;
      for (const auto& c : registry_.classes()) known += (known.empty() ? "" : ", ") + c.name;
      send_text(e.reply_token,
                "Unknown class '" + *cmd->class_name + "'. Known classes: " + known);
      return;
    }
    fb.verdict = store::Verdict::kWrongClass;
    fb.corrected_class = *cls;
  }

  try {
    fb = store_->record_feedback(fb);
  } catch (const DuplicateFeedback&) {
    send_text(e.reply_token, "Already recorded for " + job.job_id);
    return;
  }
  std::string detail = job.job_id + " " + store::to_string(fb.verdict);
  if (fb.corrected_class) detail += " " + fb.corrected_class->name;
  store_->append_audit({0, e.user_id, "feedback", detail});
  send_text(e.reply_token, "Recorded: " + detail);
}

std::string Gateway::publish(const std::string& png) {
  const fs::path dir = fs::path(cfg_.data_dir) / "content";
  const std::string token = random_hex(16);
  const image::Image full = image::decode(png);
  write_file_atomic(dir / (token + ".preview.png"),
                    image::encode_png(image::downscale(full, kPreviewMaxSide)));
  write_file_atomic(dir / (token + ".png"), png);
  return token;
}

std::optional<Content> Gateway::serve_content(std::string_view token, bool preview) const {
  if (!is_hex_token(token)) return std::nullopt;
  const fs::path path = fs::path(cfg_.data_dir) / "content" /
                        (std::string(token) + (preview ? ".preview.png" : ".png"));
  auto bytes = read_file(path);
  if (!bytes) return std::nullopt;
  return Content{std::move(*bytes), "image/png"};
}

store::JobRecord Gateway::process_job(const std::string& job_id) {
  store::JobRecord job = store_->get_job(job_id);
  if (job.status == store::JobStatus::kQueued)
    job = store_->transition_job(job_id, store::JobStatus::kRunning);
  else if (job.status != store::JobStatus::kRunning)
    return job;  // finished earlier

  std::string bytes;
  try {
    bytes = platform_.fetch_content(job.message_id);
  } catch (const Error& e) {
    return fail_job(job_id, std::string("content fetch failed: ") + e.what());
  }

  ImageRef ref;
  try {
    const auto [w, h] = image::probe_dimensions(bytes);
    const std::string type = image::sniff_content_type(bytes);
    ref.id = job.message_id;
    ref.content_hash = image::content_hash(bytes);
    ref.width = w;
    ref.height = h;
    const fs::path path =
        fs::path(cfg_.data_dir) / "images" / (ref.content_hash + extension_for(type));
    if (!fs::exists(path)) write_file_atomic(path, bytes);
    ref.storage_path = path.string();
  } catch (const DecodeError& e) {
    return fail_job(job_id, std::string("undecodable image: ") + e.what());
  }

  store::JobUpdate started;
  started.image = ref;
  started.start = store::Instant::now();
  store_->update_job(job_id, started);

  detector::DetectionResponse raw;
  try {
    detector::DetectionRequest req;
    req.image = bytes;
    req.content_type = image::sniff_content_type(bytes);
    req.request_id = job_id;
    req.deadline = std::chrono::milliseconds(cfg_.detect_deadline_ms);
    raw = detector::detect(req, *backend_, cfg_.backend.confidence_floor);
  } catch (const Error& e) {
    return fail_job(job_id, std::string("detection failed: ") + e.what());
  }
  const detector::DetectionResponse kept = apply_threshold(raw, cfg_.threshold);

  const std::string ref_text = job.job_id;
  if (kept.detections.empty()) {
    store::JobUpdate done;
    done.prediction = kept;
    done.end = store::Instant::now();
    job = store_->transition_job(job_id, store::JobStatus::kDone, done);
    if (!cfg_.verbose) return store_->transition_job(job_id, store::JobStatus::kSkippedNoReply);
    ReplyBundle bundle{job.reply_token,
                       {{OutboundMessage::Kind::kText,
                         "No target disease found\nJob " + ref_text, "", ""}}};
    try {
      store::JobUpdate sent;
      sent.reply_message_ids = platform_.reply(bundle);
      return store_->update_job(job_id, sent);
    } catch (const Error& e) {
      spdlog::error("{}: reply failed: {}", job_id, e.what());
      return job;
    }
  }

  std::string token;
  try {
    token = publish(image::render_annotation(bytes, kept.detections));
  } catch (const Error& e) {
    return fail_job(job_id, std::string("annotation failed: ") + e.what());
  }
  store::JobUpdate done;
  done.prediction = kept;
  done.end = store::Instant::now();
  job = store_->transition_job(job_id, store::JobStatus::kDone, done);

  const std::string base = trim_slash(cfg_.public_base_url) + "/content/" + token;
  ReplyBundle bundle{
      job.reply_token,
      {{OutboundMessage::Kind::kImage, "", base, base + "/preview"},
       {OutboundMessage::Kind::kText,
        render_reply_text(cfg_.reply_template, kept.detections, ref_text), "", ""}}};
  try {
    store::JobUpdate sent;
    sent.reply_message_ids = platform_.reply(bundle);
    job = store_->update_job(job_id, sent);
  } catch (const Error& e) {
    spdlog::error("{}: reply failed: {}", job_id, e.what());
  }
  return job;
}

}  // namespace ricebot::gateway
