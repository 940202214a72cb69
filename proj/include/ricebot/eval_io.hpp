#pragma once

// Interchange files for offline evaluation and the text renderings of
// evaluation reports.
//
// One JSON object per line: {image_id, class_name, confidence, x_min, y_min,
// x_max, y_max}; confidence is present on predictions only.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ricebot/metrics.hpp"

namespace ricebot::eval {

struct EvalInputs {
  std::vector<metrics::ImageSample> images;  // sorted by image id
  ClassRegistry registry;
};

// Images present in only one file still take part. Unknown class names are
// registered. Throws ParseError with the 1-based line.
EvalInputs load_eval_inputs(std::istream& predictions, std::istream& ground_truth,
                            ClassRegistry registry = ClassRegistry());
EvalInputs load_eval_files(const std::string& predictions_path,
                           const std::string& ground_truth_path,
                           ClassRegistry registry = ClassRegistry());

void write_predictions(std::span<const metrics::ImageSample> images, std::ostream& out);
void write_ground_truth(std::span<const metrics::ImageSample> images, std::ostream& out);

// Class sets per image: ground truth from the boxes, prediction from
// detections at or above `threshold`. Images without ground truth are
// non-target and left out.
std::vector<metrics::AtpSample> atp_samples(std::span<const metrics::ImageSample> images,
                                            double threshold);

nlohmann::json ap_report_to_json(const metrics::APReport& r);
nlohmann::json atp_report_to_json(const metrics::ATPReport& r);

std::string format_ap_table(const metrics::APReport& r);
std::string format_atp_table(const metrics::ATPReport& r);
// "key=value" lines, e.g. "ap.blast=0.912500", "map=0.880000".
std::string ap_key_values(const metrics::APReport& r);
std::string atp_key_values(const metrics::ATPReport& r);

}  // namespace ricebot::eval
