#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ricebot/annotate.hpp"
#include "ricebot/gateway.hpp"

namespace ricebot::testing {

// A fresh directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

gateway::ChatEvent image_event(const std::string& message_id, const std::string& user,
                               const std::string& group = "G1");
gateway::ChatEvent text_event(const std::string& message_id, const std::string& user,
                              const std::string& text, const std::string& group = "G1");
std::string envelope(const std::vector<gateway::ChatEvent>& events);

// A synthetic paddy photo: coloured rectangles from the default colour map
// over a plain background.
image::SynthScene scene(const std::vector<std::pair<std::string, image::PixelRect>>& rects,
                        int w = 160, int h = 120);
image::SynthScene blank_scene(int w = 160, int h = 120);

// A gateway config pointing at the given platform with a test secret.
gateway::GatewayConfig test_config(const std::string& data_dir, const std::string& platform_url);

inline constexpr const char* kSecret = "test-channel-secret";

}  // namespace ricebot::testing

#include "ricebot/dataset.hpp"

namespace ricebot::testing {

// Per-class counts of one dataset table row.
struct TableRow {
  const char* cls;
  int train_boxes, validate_boxes;
  int train_images, validate_images;
};

// Single-class images with exactly the given box and image counts; each
// image gets one box and the surplus boxes go to the first images.
dataset::DatasetManifest table_manifest(const std::vector<TableRow>& rows,
                                        const std::string& id_prefix);

// The six-class table before refinement, the five-class table after it.
std::vector<TableRow> before_refinement_rows();
std::vector<TableRow> after_refinement_rows();

}  // namespace ricebot::testing
