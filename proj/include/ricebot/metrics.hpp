#pragma once

// Detection evaluation: IoU, greedy matching, precision/recall, interpolated
// average precision, and the per-image class-set score (Average True
// Positive Point) used to judge the deployed bot.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ricebot/domain.hpp"

namespace ricebot::metrics {

inline constexpr double kDefaultIouThreshold = 0.5;

double iou(const BoundingBox& a, const BoundingBox& b);

struct RankedFlag {
  double confidence = 0;
  bool is_tp = false;
};

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  // One entry per detection of the evaluated class, sorted by descending
  // confidence (ties keep input order).
  std::vector<RankedFlag> flags;
};

// Greedy matching for one image and one class. Detections are visited in
// descending confidence; each claims the still-unmatched ground truth with the
// highest IoU, provided that IoU exceeds `iou_threshold`. Inputs of other
// classes are ignored.
MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const GroundTruthBox> gts,
                             const DiseaseClass& cls,
                             double iou_threshold = kDefaultIouThreshold);

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
};

// Zero denominators yield 0.
PrecisionRecall precision_recall(const MatchResult& m);

struct PRPoint {
  double recall = 0;
  double precision = 0;
};
using PRCurve = std::vector<PRPoint>;

// Cumulative (recall, precision) after each ranked detection. Throws
// EmptyGroundTruth when total_gt is 0 but flags is not empty, and
// InvalidArgument when flags are not sorted by descending confidence.
PRCurve pr_curve(std::span<const RankedFlag> flags, int total_gt);

enum class ApMode { kAllPoints, kElevenPoint };

std::string to_string(ApMode mode);
// Accepts "all_points" and "eleven_point"; throws InvalidArgument otherwise.
ApMode parse_ap_mode(std::string_view text);

// kAllPoints: area under the monotone precision envelope.
// kElevenPoint: mean interpolated precision at recall 0, 0.1, ..., 1.
// An empty curve scores 0.
double average_precision(const PRCurve& curve, ApMode mode = ApMode::kAllPoints);

struct ImageSample {
  std::string image_id;
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> ground_truth;
};

struct ClassEvaluation {
  DiseaseClass cls;
  int gt_count = 0;
  int detection_count = 0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  // Unset when the class has no ground truth at all.
  std::optional<double> ap;
};

struct APReport {
  // Classes with at least one ground-truth box.
  std::map<DiseaseClass, ClassEvaluation> per_class;
  // Classes that only appear among detections; AP is undefined for them and
  // they do not enter the mean.
  std::map<DiseaseClass, ClassEvaluation> absent;
  double mean_ap = 0;
};

APReport map_report(std::span<const ImageSample> images,
                    double iou_threshold = kDefaultIouThreshold,
                    ApMode mode = ApMode::kAllPoints);

// n/(n+m) with n = |pred ∩ gt| and m = |pred \ gt|; 0 when pred is empty.
// Throws EmptyGroundTruth when gt is empty.
double atp_image_point(const ClassSet& gt, const ClassSet& pred);

struct AtpSample {
  ClassSet gt;
  ClassSet pred;
};

struct AtpRow {
  long image_count = 0;
  double point_sum = 0;
  double atp_percent = 0;
};

struct ATPReport {
  // Only classes with at least one image appear.
  std::map<DiseaseClass, AtpRow> per_class;
  AtpRow total;
};

// Each image's point is credited to every class of its ground-truth set.
ATPReport atp_report(std::span<const AtpSample> samples);

}  // namespace ricebot::metrics
