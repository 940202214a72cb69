#include "ricebot/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

namespace ricebot::detector {

std::unique_ptr<DetectorBackend> make_remote_backend(
    const BackendConfig& cfg, const ClassRegistry& registry);  // detector_remote.cpp

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kMockFixture: return "mock_fixture";
    case BackendKind::kMockSynthetic: return "mock_synthetic";
    case BackendKind::kRemote: return "remote";
  }
  return "unknown";
}

BackendKind parse_backend_kind(std::string_view text) {
  if (text == "mock_fixture") return BackendKind::kMockFixture;
  if (text == "mock_synthetic") return BackendKind::kMockSynthetic;
  if (text == "remote") return BackendKind::kRemote;
  throw InvalidArgument("unknown backend kind: " + std::string(text));
}

void BackendConfig::validate() const {
  const bool has_endpoint = !endpoint.empty();
  const bool has_fixture = !fixture_path.empty();
  const bool has_colors = !color_map.empty();
  const int populated = int(has_endpoint) + int(has_fixture) + int(has_colors);
  const bool own = (kind == BackendKind::kRemote && has_endpoint) ||
                   (kind == BackendKind::kMockFixture && has_fixture) ||
                   (kind == BackendKind::kMockSynthetic && has_colors);
  if (!own || populated != 1)
    throw InvalidArgument("backend '" + to_string(kind) +
                          "' needs exactly its own parameters populated");
  if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0))
    throw InvalidArgument("confidence floor must lie in [0,1]");
  if (max_in_flight < 1) throw InvalidArgument("max_in_flight must be >= 1");
  if (color_tolerance < 0 || color_tolerance > 255)
    throw InvalidArgument("colour tolerance must lie in [0,255]");
}

std::vector<ColorClass> default_color_map() {
  return {{{255, 0, 0}, "blast"},
          {{255, 165, 0}, "blight"},
          {{139, 69, 19}, "bsp"},
          {{255, 255, 0}, "nbs"},
          {{0, 0, 255}, "streak"}};
}

// --- JSON ---------------------------------------------------------------

nlohmann::json detection_to_json(const Detection& d) {
  return {{"class_name", d.cls().name},
          {"confidence", d.confidence()},
          {"box",
           {{"x_min", d.box().x_min()},
            {"y_min", d.box().y_min()},
            {"x_max", d.box().x_max()},
            {"y_max", d.box().y_max()}}}};
}

nlohmann::json raw_detection_to_json(const RawDetection& d) {
  return {{"class_name", d.cls.name},
          {"confidence", d.confidence},
          {"box",
           {{"x_min", d.box.x_min},
            {"y_min", d.box.y_min},
            {"x_max", d.box.x_max},
            {"y_max", d.box.y_max}}}};
}

nlohmann::json response_to_json(const DetectionResponse& r) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : r.detections) dets.push_back(detection_to_json(d));
  return {{"model_version", r.model_version},
          {"latency_ms", r.backend_latency_ms},
          {"detections", std::move(dets)}};
}

RawDetection raw_detection_from_json(const nlohmann::json& j,
                                     const ClassRegistry& registry) {
  try {
    const auto& box = j.at("box");
    RawDetection d;
    d.cls = registry.at(j.at("class_name").get<std::string>());
    d.confidence = j.at("confidence").get<double>();
    d.box = {box.at("x_min").get<double>(), box.at("y_min").get<double>(),
             box.at("x_max").get<double>(), box.at("y_max").get<double>()};
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("bad detection record: ") + e.what());
  }
}

RawResponse raw_response_from_json(const nlohmann::json& j,
                                   const ClassRegistry& registry,
                                   double* latency_ms) {
  RawResponse r;
  try {
    r.model_version = j.value("model_version", std::string());
    if (latency_ms) *latency_ms = j.value("latency_ms", 0.0);
    for (const auto& item : j.at("detections")) {
      try {
        r.detections.push_back(raw_detection_from_json(item, registry));
      } catch (const UnknownClass&) {
        // Model knows classes we do not serve; skip them.
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("bad detector response: ") + e.what());
  }
  return r;
}

Fixture load_fixture(const std::string& path, const ClassRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open fixture file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "fixture " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(0, "fixture must be a JSON object");
  Fixture fx;
  for (const auto& [hash, dets] : j.items()) {
    auto& list = fx[hash];
    for (const auto& d : dets) list.push_back(raw_detection_from_json(d, registry));
  }
  return fx;
}

void save_fixture(const Fixture& fixture, const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [hash, dets] : fixture) {
    auto& arr = j[hash] = nlohmann::json::array();
    for (const auto& d : dets) arr.push_back(raw_detection_to_json(d));
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write fixture file: " + path);
  out << j.dump(2) << '\n';
}

// --- mock backends --------------------------------------------------------

namespace {

class FixtureBackend final : public DetectorBackend {
 public:
  explicit FixtureBackend(Fixture fixture) : fixture_(std::move(fixture)) {}

  RawResponse run(const DetectionRequest& req, const image::Image&) override {
    RawResponse r;
    r.model_version = model_version();
    if (auto it = fixture_.find(image::content_hash(req.image));
        it != fixture_.end())
      r.detections = it->second;
    return r;
  }
  std::string model_version() const override { return "mock-fixture-1"; }

 private:
  const Fixture fixture_;
};

// Finds solid regions of mapped colours. Confidence grows with the region's
// share of the frame: 0.5 at nothing, 0.99 at a quarter of the frame or more.
class SyntheticBackend final : public DetectorBackend {
 public:
  SyntheticBackend(const BackendConfig& cfg, const ClassRegistry& registry)
      : tolerance_(cfg.color_tolerance), min_pixels_(cfg.min_component_pixels) {
    for (const auto& cc : cfg.color_map)
      colors_.push_back({cc.color, registry.at(cc.class_name)});
  }

  RawResponse run(const DetectionRequest&, const image::Image& img) override {
    const int w = img.width();
    const int h = img.height();
    auto color_index = [&](int x, int y) {
      const image::Rgb c = img.at(x, y);
      for (std::size_t k = 0; k < colors_.size(); ++k) {
        const auto& m = colors_[k].first;
        if (std::abs(c.r - m.r) <= tolerance_ &&
            std::abs(c.g - m.g) <= tolerance_ &&
            std::abs(c.b - m.b) <= tolerance_)
          return static_cast<int>(k);
      }
      return -1;
    };

    RawResponse r;
    r.model_version = model_version();
    std::vector<std::uint8_t> visited(static_cast<std::size_t>(w) * h, 0);
    std::queue<std::pair<int, int>> frontier;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (visited[std::size_t(y) * w + x]) continue;
        visited[std::size_t(y) * w + x] = 1;
        const int k = color_index(x, y);
        if (k < 0) continue;
        int x0 = x, x1 = x, y0 = y, y1 = y;
        long pixels = 0;
        frontier.push({x, y});
        while (!frontier.empty()) {
          auto [cx, cy] = frontier.front();
          frontier.pop();
          ++pixels;
          x0 = std::min(x0, cx);
          x1 = std::max(x1, cx);
          y0 = std::min(y0, cy);
          y1 = std::max(y1, cy);
          constexpr int dx[] = {1, -1, 0, 0};
          constexpr int dy[] = {0, 0, 1, -1};
          for (int n = 0; n < 4; ++n) {
            const int nx = cx + dx[n];
            const int ny = cy + dy[n];
            if (!img.contains(nx, ny)) continue;
            const std::size_t at = std::size_t(ny) * w + nx;
            if (visited[at] || color_index(nx, ny) != k) continue;
            visited[at] = 1;
            frontier.push({nx, ny});
          }
        }
        if (pixels < min_pixels_) continue;
        const double box_area = double(x1 + 1 - x0) * double(y1 + 1 - y0);
        const double frac = box_area / (double(w) * double(h));
        double conf = 0.5 + 0.49 * std::min(1.0, frac / 0.25);
        conf = std::round(conf * 10000.0) / 10000.0;
        r.detections.push_back({{double(x0), double(y0), double(x1 + 1),
                                 double(y1 + 1)},
                                colors_[k].second,
                                conf});
      }
    return r;
  }
  std::string model_version() const override { return "mock-synthetic-1"; }

 private:
  std::vector<std::pair<image::Rgb, DiseaseClass>> colors_;
  int tolerance_;
  int min_pixels_;
};

}  // namespace

std::unique_ptr<DetectorBackend> make_backend(const BackendConfig& cfg,
                                              const ClassRegistry& registry) {
  cfg.validate();
  switch (cfg.kind) {
    case BackendKind::kMockFixture:
      return std::make_unique<FixtureBackend>(load_fixture(cfg.fixture_path, registry));
    case BackendKind::kMockSynthetic:
      return std::make_unique<SyntheticBackend>(cfg, registry);
    case BackendKind::kRemote:
      return make_remote_backend(cfg, registry);
  }
  throw InvalidArgument("unknown backend kind");
}

DetectionResponse detect(const DetectionRequest& req, DetectorBackend& backend,
                         double confidence_floor) {
  if (req.deadline.count() <= 0)
    throw InvalidArgument("detection deadline must be positive");
  const image::Image img = image::decode(req.image);

  const auto t0 = std::chrono::steady_clock::now();
  RawResponse raw = backend.run(req, img);
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  if (elapsed > req.deadline)
    throw Timeout("detector exceeded its deadline of " +
                  std::to_string(req.deadline.count()) + " ms");

  DetectionResponse resp;
  resp.model_version =
      raw.model_version.empty() ? backend.model_version() : raw.model_version;
  resp.backend_latency_ms =
      std::chrono::duration<double, std::milli>(elapsed).count();
  for (const auto& d : raw.detections) {
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) continue;
    if (d.confidence < confidence_floor) continue;
    try {
      resp.detections.emplace_back(
          validate_box(d.box, img.width(), img.height()), d.cls, d.confidence);
    } catch (const InvalidBox&) {
      // Entirely outside the frame.
    }
  }
  std::stable_sort(resp.detections.begin(), resp.detections.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence() > b.confidence();
                   });
  return resp;
}

DetectionResponse detect(const DetectionRequest& req, const BackendConfig& cfg,
                         const ClassRegistry& registry) {
  auto backend = make_backend(cfg, registry);
  return detect(req, *backend, cfg.confidence_floor);
}

}  // namespace ricebot::detector
