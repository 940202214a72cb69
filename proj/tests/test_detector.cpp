#include <atomic>
#include <fstream>
#include <future>
#include <thread>

#include <doctest.h>

#include "helpers.hpp"
#include "ricebot/detector.hpp"
#include "ricebot/metrics.hpp"

using namespace ricebot;
using namespace ricebot::detector;
using namespace std::chrono_literals;
using ricebot::testing::TempDir;

namespace {

// Returns canned raw detections, optionally after a pause.
class CannedBackend final : public DetectorBackend {
 public:
  explicit CannedBackend(std::vector<RawDetection> dets,
                         std::chrono::milliseconds pause = 0ms)
      : dets_(std::move(dets)), pause_(pause) {}
  RawResponse run(const DetectionRequest&, const image::Image&) override {
    ++calls;
    std::this_thread::sleep_for(pause_);
    return {dets_, ""};
  }
  std::string model_version() const override { return "canned"; }
  std::atomic<int> calls{0};

 private:
  std::vector<RawDetection> dets_;
  std::chrono::milliseconds pause_;
};

DetectionRequest request(const std::string& png, std::chrono::milliseconds deadline = 5000ms) {
  DetectionRequest r;
  r.image = png;
  r.deadline = deadline;
  return r;
}

BackendConfig remote_config(int port, int in_flight = 4) {
  BackendConfig c;
  c.kind = BackendKind::kRemote;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port);
  c.max_in_flight = in_flight;
  return c;
}

}  // namespace

TEST_CASE("backend config validation") {
  BackendConfig c;
  c.color_map = default_color_map();
  CHECK_NOTHROW(c.validate());
  c.endpoint = "http://x:1";
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  BackendConfig r = remote_config(1);
  CHECK_NOTHROW(r.validate());
  r.endpoint.clear();
  CHECK_THROWS_AS(r.validate(), InvalidArgument);
  BackendConfig f;
  f.kind = BackendKind::kMockFixture;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
  c = BackendConfig{};
  c.color_map = default_color_map();
  c.confidence_floor = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(parse_backend_kind(to_string(BackendKind::kMockFixture)) == BackendKind::kMockFixture);
  CHECK_THROWS_AS(parse_backend_kind("gpu"), InvalidArgument);
}

TEST_CASE("detect clamps, floors and sorts") {
  ClassRegistry reg;
  const std::string png = testing::blank_scene(100, 80).png;
  CannedBackend b({{{-10, -5, 30, 20}, reg.at("blast"), 0.4},
                   {{50, 50, 150, 90}, reg.at("bsp"), 0.9},
                   {{200, 200, 250, 250}, reg.at("nbs"), 0.95},  // outside the frame
                   {{10, 10, 20, 20}, reg.at("streak"), 0.1},
                   {{10, 10, 20, 20}, reg.at("blight"), 1.7},   // invalid confidence
                   {{5, 5, 15, 15}, reg.at("blight"), 0.4}});
  const auto r = detect(request(png), b, 0.2);
  REQUIRE(r.detections.size() == 3);
  CHECK(r.detections[0].cls().name == "bsp");
  CHECK(r.detections[0].box().x_max() == 100);
  CHECK(r.detections[0].box().y_max() == 80);
  // Equal confidences keep the backend's order.
  CHECK(r.detections[1].cls().name == "blast");
  CHECK(r.detections[1].box().x_min() == 0);
  CHECK(r.detections[1].box().y_min() == 0);
  CHECK(r.detections[2].cls().name == "blight");
  CHECK(r.model_version == "canned");
  CHECK(r.backend_latency_ms >= 0);

  CHECK_THROWS_AS(detect(request("garbage"), b), DecodeError);
  CHECK_THROWS_AS(detect(request(png, 0ms), b), InvalidArgument);
  CannedBackend slow({}, 80ms);
  CHECK_THROWS_AS(detect(request(png, 20ms), slow), Timeout);
}

TEST_CASE("fixture backend") {
  ClassRegistry reg;
  TempDir dir;
  const auto s = testing::scene({{"blast", {10, 10, 50, 40}}});
  Fixture fx;
  fx[image::content_hash(s.png)] = {{{10, 10, 50, 40}, reg.at("blast"), 0.87}};
  save_fixture(fx, dir.file("fx.json"));
  const auto loaded = load_fixture(dir.file("fx.json"), reg);
  REQUIRE(loaded.size() == 1);
  BackendConfig c;
  c.kind = BackendKind::kMockFixture;
  c.fixture_path = dir.file("fx.json");
  const auto r = detect(request(s.png), c, reg);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].confidence() == 0.87);
  CHECK(r.model_version == "mock-fixture-1");
  // Unknown images get nothing.
  CHECK(detect(request(testing::blank_scene().png), c, reg).detections.empty());
  CHECK_THROWS_AS(load_fixture(dir.file("absent.json"), reg), Error);
  std::ofstream(dir.file("bad.json")) << "[1,2]";
  CHECK_THROWS_AS(load_fixture(dir.file("bad.json"), reg), ParseError);
}

TEST_CASE("synthetic backend recovers painted boxes") {
  BackendConfig c;
  c.color_map = default_color_map();
  std::vector<metrics::ImageSample> samples;
  std::mt19937 rng(11);
  for (int i = 0; i < 30; ++i) {
    std::vector<std::pair<std::string, image::PixelRect>> rects;
    // Disjoint columns so regions never touch.
    for (int k = 0; k < 3; ++k) {
      if (rng() % 3 == 0) continue;
      const auto& cc = c.color_map[rng() % c.color_map.size()];
      const int x0 = 4 + k * 52 + int(rng() % 10);
      const int y0 = 4 + int(rng() % 40);
      rects.push_back({cc.class_name, {x0, y0, x0 + 10 + int(rng() % 25), y0 + 10 + int(rng() % 60)}});
    }
    if (i % 5 == 0) rects.push_back({"none", {150, 100, 158, 118}});
    const auto s = testing::scene(rects);
    const auto r = detect(request(s.png), c);
    samples.push_back({"img" + std::to_string(i), r.detections, s.ground_truth});
    CHECK(r.detections.size() == s.ground_truth.size());
  }
  const auto rep = metrics::map_report(samples);
  CHECK(rep.mean_ap == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<metrics::AtpSample> atp;
  for (const auto& s : samples) {
    ClassSet gt;
    for (const auto& g : s.ground_truth) gt.insert(g.cls);
    if (!gt.empty()) atp.push_back({gt, classes_of(s.detections)});
  }
  CHECK(metrics::atp_report(atp).total.atp_percent == doctest::Approx(100.0));

  // Confidence grows with area; tiny specks are ignored.
  const auto big = detect(request(testing::scene({{"blast", {0, 0, 100, 80}}}).png), c);
  const auto small = detect(request(testing::scene({{"blast", {0, 0, 10, 8}}}).png), c);
  CHECK(big.detections.at(0).confidence() > small.detections.at(0).confidence());
  CHECK(big.detections.at(0).confidence() <= 0.99);
  CHECK(detect(request(testing::scene({{"blast", {5, 5, 6, 7}}}).png), c).detections.empty());
}

TEST_CASE("wire format round trip") {
  ClassRegistry reg;
  DetectionResponse r;
  r.model_version = "v7";
  r.backend_latency_ms = 12.5;
  r.detections = {Detection(BoundingBox(1, 2, 30, 40), reg.at("nbs"), 0.75)};
  double latency = 0;
  const auto back = raw_response_from_json(response_to_json(r), reg, &latency);
  CHECK(back.model_version == "v7");
  CHECK(latency == 12.5);
  REQUIRE(back.detections.size() == 1);
  CHECK(back.detections[0].box.x_max == 30);
  CHECK(back.detections[0].cls.name == "nbs");
  CHECK(back.detections[0].confidence == 0.75);

  auto j = response_to_json(r);
  j["detections"][0]["class_name"] = "mystery";
  CHECK(raw_response_from_json(j, reg).detections.empty());
  CHECK_THROWS_AS(raw_detection_from_json(j["detections"][0], reg), UnknownClass);
  CHECK_THROWS_AS(raw_response_from_json(nlohmann::json{{"detections", 3}}, reg), ParseError);
  CHECK_THROWS_AS(raw_detection_from_json(nlohmann::json{{"class_name", "nbs"}}, reg), ParseError);
}

TEST_CASE("remote backend against a detector server") {
  ClassRegistry reg;
  const auto s = testing::scene({{"bsp", {20, 20, 60, 70}}});
  BackendConfig syn;
  syn.color_map = default_color_map();
  DetectorServer server(make_backend(syn, reg), reg);
  const int port = server.start("127.0.0.1", 0);
  auto remote = make_backend(remote_config(port), reg);

  const auto r = detect(request(s.png), *remote);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].cls().name == "bsp");
  CHECK(r.detections[0].box().x_min() == 20);
  CHECK(r.model_version == "mock-synthetic-1");

  // The server rejects what it cannot decode.
  CHECK_THROWS_AS(remote->run(request("garbage"), image::Image{}), DecodeError);

  server.set_loaded(false);
  CHECK_THROWS_AS(detect(request(s.png), *remote), BackendUnavailable);
  server.set_loaded(true);
  CHECK_NOTHROW(detect(request(s.png), *remote));
  server.stop();
  CHECK_THROWS_AS(detect(request(s.png), *remote), BackendUnavailable);
}

TEST_CASE("remote backend deadline and in-flight cap") {
  ClassRegistry reg;
  const std::string png = testing::blank_scene().png;
  auto slow = std::make_unique<CannedBackend>(std::vector<RawDetection>{}, 400ms);
  CannedBackend* slow_ptr = slow.get();
  DetectorServer server(std::move(slow), reg);
  const int port = server.start("127.0.0.1", 0);

  auto remote = make_backend(remote_config(port), reg);
  CHECK_THROWS_AS(detect(request(png, 100ms), *remote), Timeout);

  auto capped = make_backend(remote_config(port, 1), reg);
  auto first = std::async(std::launch::async, [&] { return detect(request(png, 3000ms), *capped); });
  while (slow_ptr->calls.load() < 2) std::this_thread::sleep_for(5ms);
  // The only slot is taken for longer than this request may wait.
  CHECK_THROWS_AS(detect(request(png, 100ms), *capped), Timeout);
  CHECK(first.get().detections.empty());
  CHECK(slow_ptr->calls.load() == 2);
  server.stop();
}
