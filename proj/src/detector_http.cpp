// Remote backend client and the wire-protocol server.

#include <semaphore>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ricebot/detector.hpp"

namespace ricebot::detector {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw InvalidArgument("remote endpoint must look like http://host:port: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, slash), path};
}

class RemoteBackend final : public DetectorBackend {
 public:
  RemoteBackend(const BackendConfig& cfg, const ClassRegistry& registry)
      : endpoint_(split_endpoint(cfg.endpoint)),
        registry_(registry),
        slots_(cfg.max_in_flight) {}

  RawResponse run(const DetectionRequest& req, const image::Image&) override {
    using namespace std::chrono;
    const auto start = steady_clock::now();
    // Bounded wait for an in-flight slot; the wait counts against the deadline.
    if (!slots_.try_acquire_for(req.deadline))
      throw Timeout("no detector slot free within the deadline");
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    const auto remaining =
        req.deadline - duration_cast<milliseconds>(steady_clock::now() - start);
    if (remaining.count() <= 0) throw Timeout("deadline spent waiting for a slot");

    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(remaining);
    client.set_read_timeout(remaining);
    client.set_write_timeout(remaining);
    httplib::Headers headers;
    if (!req.request_id.empty()) headers.emplace("X-Request-Id", req.request_id);
    auto res = client.Post(endpoint_.base_path + "/v1/detect", headers, req.image,
                           req.content_type.empty() ? "application/octet-stream"
                                                    : req.content_type);
    if (!res) {
      const auto err = res.error();
      const bool out_of_time = steady_clock::now() - start >= req.deadline;
      if (err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && out_of_time))
        throw Timeout("detector did not answer within " +
                      std::to_string(req.deadline.count()) + " ms");
      throw BackendUnavailable("detector unreachable at " + endpoint_.origin +
                               ": " + httplib::to_string(err));
    }
    switch (res->status) {
      case 200:
        break;
      case 415:
        throw DecodeError("detector could not decode the image");
      case 503:
        throw BackendUnavailable("detector model not loaded");
      default:
        throw BackendUnavailable("detector answered HTTP " +
                                 std::to_string(res->status));
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendUnavailable(std::string("detector sent malformed JSON: ") +
                               e.what());
    }
    RawResponse raw = raw_response_from_json(body, registry_);
    if (raw.model_version.empty()) raw.model_version = model_version();
    return raw;
  }

  std::string model_version() const override { return "remote"; }

 private:
  const Endpoint endpoint_;
  const ClassRegistry registry_;
  std::counting_semaphore<> slots_;
};

}  // namespace

std::unique_ptr<DetectorBackend> make_remote_backend(
    const BackendConfig& cfg, const ClassRegistry& registry) {
  return std::make_unique<RemoteBackend>(cfg, registry);
}

struct DetectorServer::Impl {
  std::unique_ptr<DetectorBackend> backend;
  ClassRegistry registry;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> loaded{true};
};

DetectorServer::DetectorServer(std::unique_ptr<DetectorBackend> backend,
                               ClassRegistry registry)
    : impl_(std::make_unique<Impl>()) {
  impl_->backend = std::move(backend);
  impl_->registry = std::move(registry);
  Impl* impl = impl_.get();

  impl->server.Post("/v1/detect", [impl](const httplib::Request& req,
                                         httplib::Response& res) {
    auto fail = [&](int status, const std::string& msg) {
      res.status = status;
      res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
    };
    if (!impl->loaded) return fail(503, "model not loaded");
    DetectionRequest dr;
    dr.image = req.body;
    dr.content_type = req.get_header_value("Content-Type");
    dr.request_id = req.get_header_value("X-Request-Id");
    try {
      const DetectionResponse out = detect(dr, *impl->backend);
      res.set_content(response_to_json(out).dump(), "application/json");
    } catch (const DecodeError& e) {
      fail(415, e.what());
    } catch (const BackendUnavailable& e) {
      fail(503, e.what());
    } catch (const std::exception& e) {
      spdlog::error("detect failed: {}", e.what());
      fail(500, e.what());
    }
  });
  impl->server.Get("/healthz", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl->loaded ? "ok" : "loading", "text/plain");
  });
}

DetectorServer::~DetectorServer() { stop(); }

int DetectorServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind detector server to " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void DetectorServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port))
    throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void DetectorServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void DetectorServer::set_loaded(bool loaded) { impl_->loaded = loaded; }

}  // namespace ricebot::detector
