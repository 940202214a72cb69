#include "ricebot/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace ricebot::metrics {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw =
      std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double ih =
      std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

// Indices of the class's detections, descending confidence, stable.
std::vector<std::size_t> ranked_indices(std::span<const Detection> dets,
                                        const DiseaseClass& cls) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].cls() == cls) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence() > dets[b].confidence();
  });
  return order;
}

}  // namespace

MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const GroundTruthBox> gts,
                             const DiseaseClass& cls, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw InvalidArgument("IoU threshold must lie in (0,1)");

  std::vector<std::size_t> gt_idx;
  for (std::size_t j = 0; j < gts.size(); ++j)
    if (gts[j].cls == cls) gt_idx.push_back(j);
  std::vector<bool> matched(gt_idx.size(), false);

  MatchResult result;
  for (std::size_t i : ranked_indices(dets, cls)) {
    const Detection& det = dets[i];
    double best = iou_threshold;
    std::optional<std::size_t> best_k;
    for (std::size_t k = 0; k < gt_idx.size(); ++k) {
      if (matched[k]) continue;
      const double o = iou(det.box(), gts[gt_idx[k]].box);
      if (o > best) {
        best = o;
        best_k = k;
      }
    }
    const bool is_tp = best_k.has_value();
    if (is_tp) {
      matched[*best_k] = true;
      ++result.tp;
    } else {
      ++result.fp;
    }
    result.flags.push_back({det.confidence(), is_tp});
  }
  result.fn = static_cast<int>(gt_idx.size()) - result.tp;
  return result;
}

PrecisionRecall precision_recall(const MatchResult& m) {
  PrecisionRecall pr;
  if (m.tp + m.fp > 0) pr.precision = double(m.tp) / double(m.tp + m.fp);
  if (m.tp + m.fn > 0) pr.recall = double(m.tp) / double(m.tp + m.fn);
  return pr;
}

PRCurve pr_curve(std::span<const RankedFlag> flags, int total_gt) {
  if (total_gt < 0) throw InvalidArgument("total_gt must be non-negative");
  if (flags.empty()) return {};
  if (total_gt == 0)
    throw EmptyGroundTruth("precision-recall curve undefined without ground truth");
  for (std::size_t i = 1; i < flags.size(); ++i)
    if (flags[i].confidence > flags[i - 1].confidence)
      throw InvalidArgument("flags must be sorted by descending confidence");

  PRCurve curve;
  curve.reserve(flags.size());
  int tp = 0;
  int seen = 0;
  for (const auto& f : flags) {
    ++seen;
    if (f.is_tp) ++tp;
    if (tp > total_gt)
      throw InvalidArgument("more true positives than ground-truth boxes");
    curve.push_back({double(tp) / double(total_gt), double(tp) / double(seen)});
  }
  return curve;
}

std::string to_string(ApMode mode) {
  return mode == ApMode::kAllPoints ? "all_points" : "eleven_point";
}

ApMode parse_ap_mode(std::string_view text) {
  if (text == "all_points") return ApMode::kAllPoints;
  if (text == "eleven_point") return ApMode::kElevenPoint;
  throw InvalidArgument("unknown AP mode: " + std::string(text));
}

double average_precision(const PRCurve& curve, ApMode mode) {
  if (curve.empty()) return 0.0;

  if (mode == ApMode::kElevenPoint) {
    double sum = 0;
    for (int i = 0; i <= 10; ++i) {
      const double t = i / 10.0;
      double p = 0;
      for (const auto& pt : curve)
        if (pt.recall >= t) p = std::max(p, pt.precision);
      sum += p;
    }
    return sum / 11.0;
  }

  // Sentinel-padded envelope, swept right to left.
  std::vector<double> rec{0.0};
  std::vector<double> prec{0.0};
  for (const auto& pt : curve) {
    rec.push_back(pt.recall);
    prec.push_back(pt.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i)
    prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0;
  for (std::size_t i = 1; i < rec.size(); ++i)
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  return std::clamp(ap, 0.0, 1.0);
}

APReport map_report(std::span<const ImageSample> images, double iou_threshold,
                    ApMode mode) {
  struct Accumulator {
    ClassEvaluation eval;
    std::vector<RankedFlag> flags;
  };
  std::map<DiseaseClass, Accumulator> acc;

  for (const auto& img : images) {
    ClassSet present;
    for (const auto& g : img.ground_truth) present.insert(g.cls);
    for (const auto& d : img.detections) present.insert(d.cls());
    for (const auto& cls : present) {
      MatchResult m =
          match_detections(img.detections, img.ground_truth, cls, iou_threshold);
      auto& a = acc[cls];
      a.eval.cls = cls;
      a.eval.tp += m.tp;
      a.eval.fp += m.fp;
      a.eval.fn += m.fn;
      a.eval.gt_count += m.tp + m.fn;
      a.eval.detection_count += m.tp + m.fp;
      a.flags.insert(a.flags.end(), m.flags.begin(), m.flags.end());
    }
  }

  APReport report;
  double sum = 0;
  for (auto& [cls, a] : acc) {
    if (a.eval.gt_count == 0) {
      report.absent.emplace(cls, a.eval);
      continue;
    }
    // Merge across images; stable so equal confidences keep image order.
    std::stable_sort(a.flags.begin(), a.flags.end(),
                     [](const RankedFlag& x, const RankedFlag& y) {
                       return x.confidence > y.confidence;
                     });
    a.eval.ap = average_precision(pr_curve(a.flags, a.eval.gt_count), mode);
    sum += *a.eval.ap;
    report.per_class.emplace(cls, a.eval);
  }
  if (!report.per_class.empty())
    report.mean_ap = sum / double(report.per_class.size());
  return report;
}

double atp_image_point(const ClassSet& gt, const ClassSet& pred) {
  if (gt.empty())
    throw EmptyGroundTruth("image point needs at least one ground-truth class");
  long n = 0;
  long m = 0;
  for (const auto& c : pred) (gt.contains(c) ? n : m) += 1;
  if (n + m == 0) return 0.0;
  return double(n) / double(n + m);
}

ATPReport atp_report(std::span<const AtpSample> samples) {
  ATPReport report;
  for (const auto& s : samples) {
    const double point = atp_image_point(s.gt, s.pred);
    for (const auto& cls : s.gt) {
      auto& row = report.per_class[cls];
      row.image_count += 1;
      row.point_sum += point;
    }
  }
  for (auto& [cls, row] : report.per_class) {
    row.atp_percent = 100.0 * row.point_sum / double(row.image_count);
    report.total.image_count += row.image_count;
    report.total.point_sum += row.point_sum;
  }
  if (report.total.image_count > 0)
    report.total.atp_percent =
        100.0 * report.total.point_sum / double(report.total.image_count);
  return report;
}

}  // namespace ricebot::metrics
