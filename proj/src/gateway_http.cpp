// Platform client and the gateway's HTTP front end.

#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "gateway_http_impl.hpp"

namespace ricebot::gateway {

using nlohmann::json;

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw InvalidArgument("platform URL must look like http://host:port: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

}  // namespace

PlatformClient::PlatformClient(std::string base_url, std::string access_token,
                               int timeout_ms)
    : access_token_(std::move(access_token)), timeout_ms_(timeout_ms) {
  std::tie(origin_, base_path_) = split_url(base_url);
}

namespace {

httplib::Client make_client(const std::string& origin, int timeout_ms) {
  httplib::Client c(origin);
  const auto t = std::chrono::milliseconds(timeout_ms);
  c.set_connection_timeout(t);
  c.set_read_timeout(t);
  c.set_write_timeout(t);
  return c;
}

}  // namespace

std::string PlatformClient::fetch_content(const std::string& message_id) const {
  auto client = make_client(origin_, timeout_ms_);
  httplib::Headers headers;
  if (!access_token_.empty()) headers.emplace("Authorization", "Bearer " + access_token_);
  auto res = client.Get(base_path_ + "/v1/message/" + message_id + "/content", headers);
  if (!res)
    throw BackendUnavailable("platform unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendUnavailable("content fetch answered HTTP " + std::to_string(res->status));
  return std::move(res->body);
}

std::vector<std::string> PlatformClient::reply(const ReplyBundle& bundle) const {
  auto client = make_client(origin_, timeout_ms_);
  httplib::Headers headers;
  if (!access_token_.empty()) headers.emplace("Authorization", "Bearer " + access_token_);
  auto res = client.Post(base_path_ + "/v1/message/reply", headers,
                         reply_to_json(bundle).dump(), "application/json");
  if (!res) throw BackendUnavailable("platform unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendUnavailable("reply answered HTTP " + std::to_string(res->status) + ": " +
                             res->body);
  std::vector<std::string> ids;
  try {
    const json j = json::parse(res->body);
    if (j.contains("sentMessages"))
      for (const auto& m : j.at("sentMessages")) ids.push_back(m.at("id").get<std::string>());
  } catch (const json::exception&) {
    // Some platforms answer with an empty body.
  }
  if (ids.empty())
    for (std::size_t i = 0; i < bundle.messages.size(); ++i)
      ids.push_back(bundle.reply_token + "#" + std::to_string(i));
  return ids;
}

namespace {

void install_routes(httplib::Server& s, Gateway& g) {
  s.Post("/webhook", [&g](const httplib::Request& req, httplib::Response& res) {
    const HttpResult r = g.handle_webhook(req.body, req.get_header_value(kSignatureHeader));
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  auto content = [&g](bool preview) {
    return [&g, preview](const httplib::Request& req, httplib::Response& res) {
      auto c = g.serve_content(req.path_params.at("token"), preview);
      if (!c) {
        res.status = 404;
        res.set_content("not found", "text/plain");
        return;
      }
      res.set_header("Cache-Control", "public, max-age=31536000, immutable");
      res.set_content(std::move(c->bytes), c->content_type);
    };
  };
  s.Get("/content/:token", content(false));
  s.Get("/content/:token/preview", content(true));
  s.Get("/healthz", [&g](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"status", "ok"}, {"queue_depth", g.queue_depth()}}.dump(),
                    "application/json");
  });
}

}  // namespace

int Gateway::start_http(const std::string& host, int port) {
  if (http_) throw InvalidArgument("HTTP front end already running");
  http_ = std::make_unique<Http>();
  install_routes(http_->server, *this);
  const int bound = port == 0 ? http_->server.bind_to_any_port(host)
                              : (http_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    http_.reset();
    throw BackendUnavailable("cannot bind " + host + ":" + std::to_string(port));
  }
  http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
  spdlog::info("gateway listening on {}:{}", host, bound);
  return bound;
}

void Gateway::listen_http(const std::string& host, int port) {
  const int bound = start_http(host, port);
  (void)bound;
  http_->thread.join();
}

void Gateway::stop_http() {
  if (!http_) return;
  http_->server.stop();
  if (http_->thread.joinable()) http_->thread.join();
  http_.reset();
}

}  // namespace ricebot::gateway
