#include "helpers.hpp"

#include <atomic>
#include <chrono>

#include <unistd.h>

namespace ricebot::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          ("ricebot-test-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
           std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

gateway::ChatEvent image_event(const std::string& message_id, const std::string& user,
                               const std::string& group) {
  gateway::ChatEvent e;
  e.type = "message";
  e.message_type = "image";
  e.message_id = message_id;
  e.source_type = "group";
  e.user_id = user;
  e.group_id = group;
  e.reply_token = "rt-" + message_id;
  e.timestamp = 1600000000000;
  return e;
}

gateway::ChatEvent text_event(const std::string& message_id, const std::string& user,
                              const std::string& text, const std::string& group) {
  gateway::ChatEvent e = image_event(message_id, user, group);
  e.message_type = "text";
  e.text = text;
  return e;
}

std::string envelope(const std::vector<gateway::ChatEvent>& events) {
  nlohmann::json evs = nlohmann::json::array();
  for (const auto& e : events) evs.push_back(gateway::event_to_json(e));
  return nlohmann::json{{"destination", "Ubot"}, {"events", evs}}.dump();
}

image::SynthScene scene(const std::vector<std::pair<std::string, image::PixelRect>>& rects,
                        int w, int h) {
  const auto colors = detector::default_color_map();
  std::vector<image::SynthShape> shapes;
  for (const auto& [name, r] : rects) {
    image::Rgb color{40, 160, 40};
    for (const auto& c : colors)
      if (c.class_name == name) color = c.color;
    shapes.push_back({r, color});
  }
  return image::synth_image(shapes, w, h, {255, 255, 255}, colors);
}

image::SynthScene blank_scene(int w, int h) { return scene({}, w, h); }

gateway::GatewayConfig test_config(const std::string& data_dir, const std::string& platform_url) {
  gateway::GatewayConfig cfg;
  cfg.data_dir = data_dir;
  cfg.platform_base_url = platform_url;
  cfg.channel_secret = kSecret;
  cfg.public_base_url = "http://bot.example";
  cfg.workers = 2;
  cfg.platform_timeout_ms = 2000;
  return cfg;
}

}  // namespace ricebot::testing

namespace ricebot::testing {

dataset::DatasetManifest table_manifest(const std::vector<TableRow>& rows,
                                        const std::string& id_prefix) {
  dataset::DatasetManifest m;
  int serial = 0;
  for (const auto& r : rows) {
    const DiseaseClass cls = m.registry.register_class(r.cls);
    auto add = [&](dataset::Split split, int images, int boxes) {
      for (int i = 0; i < images; ++i) {
        dataset::ManifestEntry e;
        e.image.id = id_prefix + std::to_string(serial);
        e.image.content_hash = "hash-" + id_prefix + std::to_string(serial);
        e.image.width = 416;
        e.image.height = 416;
        e.image.storage_path = "images/" + e.image.id + ".jpg";
        ++serial;
        e.split = split;
        e.source_tag = id_prefix;
        const int n = 1 + (i < boxes - images ? 1 : 0) + (i + images < boxes - images ? 1 : 0);
        for (int k = 0; k < n; ++k)
          e.labels.push_back({BoundingBox(10.0 * k, 10.0 * k, 10.0 * k + 50, 10.0 * k + 40), cls});
        m.entries.push_back(std::move(e));
      }
    };
    add(dataset::Split::kTrain, r.train_images, r.train_boxes);
    add(dataset::Split::kValidate, r.validate_images, r.validate_boxes);
  }
  return m;
}

std::vector<TableRow> before_refinement_rows() {
  return {{"blast", 873, 217, 805, 200},   {"blight", 881, 214, 866, 205},
          {"bsp", 873, 216, 513, 131},     {"nbs", 874, 214, 822, 183},
          {"streak", 874, 215, 829, 204},  {"rrsv", 873, 214, 682, 170}};
}

std::vector<TableRow> after_refinement_rows() {
  return {{"blast", 1622, 351, 1490, 331},
          {"blight", 1641, 351, 1583, 325},
          {"bsp", 1606, 352, 1213, 253},
          {"nbs", 1642, 351, 1433, 318},
          {"streak", 1604, 351, 1494, 327}};
}

}  // namespace ricebot::testing
