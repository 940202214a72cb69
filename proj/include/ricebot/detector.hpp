#pragma once

// Detector backends behind a single wire contract. The model itself lives on
// an external inference server; the mock kinds make the rest of the system
// runnable and testable without one.

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ricebot/domain.hpp"
#include "ricebot/image.hpp"

namespace ricebot::detector {

struct DetectionRequest {
  std::string image;  // encoded bytes
  std::string content_type = "image/png";
  std::string request_id;
  std::chrono::milliseconds deadline{10000};
};

struct DetectionResponse {
  std::vector<Detection> detections;  // descending confidence
  std::string model_version;
  double backend_latency_ms = 0;
};

enum class BackendKind { kMockFixture, kMockSynthetic, kRemote };

std::string to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view text);

using image::ColorClass;

struct BackendConfig {
  BackendKind kind = BackendKind::kMockSynthetic;
  std::string endpoint;       // kRemote, e.g. "http://gpu-host:8500"
  std::string fixture_path;   // kMockFixture
  std::vector<ColorClass> color_map;  // kMockSynthetic
  double confidence_floor = 0.0;
  int max_in_flight = 4;      // kRemote
  int color_tolerance = 8;    // kMockSynthetic, per channel
  int min_component_pixels = 4;

  // Throws InvalidArgument when a parameter of another kind is populated or
  // a required one is missing.
  void validate() const;
};

// The colour scheme used by synthetic scenes in tests and demos.
std::vector<ColorClass> default_color_map();

// A detection as emitted by a backend: the box may stick out of the frame.
struct RawDetection {
  BoxCoords box;
  DiseaseClass cls;
  double confidence = 0;
};

struct RawResponse {
  std::vector<RawDetection> detections;
  std::string model_version;
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  // Callers normally go through detect() below, which adds decoding,
  // clamping, the confidence floor, ordering and latency measurement.
  virtual RawResponse run(const DetectionRequest& req,
                          const image::Image& decoded) = 0;
  virtual std::string model_version() const = 0;
};

std::unique_ptr<DetectorBackend> make_backend(const BackendConfig& cfg,
                                              const ClassRegistry& registry);

// Decodes the request image, runs the backend, clamps boxes into the frame
// (dropping those left degenerate), applies the confidence floor and sorts by
// descending confidence. Throws DecodeError, BackendUnavailable, Timeout.
DetectionResponse detect(const DetectionRequest& req, DetectorBackend& backend,
                         double confidence_floor = 0.0);
DetectionResponse detect(const DetectionRequest& req, const BackendConfig& cfg,
                         const ClassRegistry& registry = ClassRegistry());

// Wire schema: {model_version, latency_ms, detections:[{class_name,
// confidence, box:{x_min,y_min,x_max,y_max}}]}.
nlohmann::json detection_to_json(const Detection& d);
nlohmann::json response_to_json(const DetectionResponse& r);
nlohmann::json raw_detection_to_json(const RawDetection& d);
// Throws ParseError(0, ...) on schema violations and UnknownClass on class
// names missing from `registry`.
RawDetection raw_detection_from_json(const nlohmann::json& j,
                                     const ClassRegistry& registry);
// Parses a wire response. Detections of unknown classes are dropped.
RawResponse raw_response_from_json(const nlohmann::json& j,
                                   const ClassRegistry& registry,
                                   double* latency_ms = nullptr);

// Mock-fixture content: content hash -> detections.
using Fixture = std::map<std::string, std::vector<RawDetection>>;
Fixture load_fixture(const std::string& path, const ClassRegistry& registry);
void save_fixture(const Fixture& fixture, const std::string& path);

// Hosts a backend behind the wire protocol (POST /v1/detect). Used as a
// stand-in inference server and by the remote backend's tests.
class DetectorServer {
 public:
  DetectorServer(std::unique_ptr<DetectorBackend> backend,
                 ClassRegistry registry);
  ~DetectorServer();
  DetectorServer(const DetectorServer&) = delete;
  DetectorServer& operator=(const DetectorServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host, int port);
  // Blocks the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  // When false, /v1/detect answers 503.
  void set_loaded(bool loaded);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ricebot::detector
