#pragma once

// Independent reference computations used as test oracles. They avoid the
// library's evaluation code paths on purpose and favour exact integer
// arithmetic where the inputs allow it.

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ricebot/domain.hpp"
#include "ricebot/metrics.hpp"

namespace ricebot::testing {

struct IntBox {
  int x0, y0, x1, y1;
};

// IoU by counting unit pixels on the integer grid.
double pixel_iou(const IntBox& a, const IntBox& b);

// Largest tp count over every one-to-one assignment of detections to ground
// truths with IoU above the threshold, found by exhaustive search.
int exhaustive_max_tp(const std::vector<IntBox>& dets, const std::vector<IntBox>& gts,
                      double iou_threshold);

// Area under the monotone precision envelope: each true positive adds a
// 1/total_gt wide rectangle as tall as the best precision at or after it.
double envelope_rectangle_ap(const std::vector<bool>& ranked_is_tp, int total_gt);

struct RefClass {
  int gt = 0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::optional<double> ap;
};

struct RefReport {
  std::map<std::string, RefClass> per_class;
  double mean_ap = 0;
};

// One image of integer boxes for the reference evaluator.
struct RefDet {
  std::string cls;
  double confidence;
  IntBox box;
};
struct RefGt {
  std::string cls;
  IntBox box;
};
struct RefImage {
  std::vector<RefDet> dets;
  std::vector<RefGt> gts;
};

// Straight-line evaluator for IoU > 0.5 matching, all-points or 11-point AP.
RefReport reference_map(const std::vector<RefImage>& images, bool eleven_point);

// Converts to library inputs using `registry`.
std::vector<metrics::ImageSample> to_samples(const std::vector<RefImage>& images,
                                             const ClassRegistry& registry);

// Random instance: up to 5 images, at most 6 boxes per class per image kind,
// 5 classes, integer coordinates on a small grid so overlaps are common.
std::vector<RefImage> random_instance(std::mt19937_64& rng);

// The image-point rules as separate cases rather than one formula.
double atp_point_by_cases(const ClassSet& gt, const ClassSet& pred);

}  // namespace ricebot::testing

namespace ricebot::testing {

// Deployment tallies per class: images and true-positive points (halves
// allowed), turned into single-class samples whose points add up exactly.
struct ClassTally {
  const char* cls;
  int images;
  double points;
};
std::vector<metrics::AtpSample> samples_from_tallies(const std::vector<ClassTally>& tallies,
                                                     const ClassRegistry& registry);

}  // namespace ricebot::testing
