#include "oracles.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace ricebot::testing {

double pixel_iou(const IntBox& a, const IntBox& b) {
  const int lo_x = std::min(a.x0, b.x0), hi_x = std::max(a.x1, b.x1);
  const int lo_y = std::min(a.y0, b.y0), hi_y = std::max(a.y1, b.y1);
  long inter = 0, uni = 0;
  for (int y = lo_y; y < hi_y; ++y)
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
      const bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

namespace {

long area(const IntBox& b) { return long(b.x1 - b.x0) * long(b.y1 - b.y0); }

long overlap(const IntBox& a, const IntBox& b) {
  const long w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const long h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? w * h : 0;
}

// inter/union as an exact fraction.
struct Ratio {
  long num, den;
};

Ratio iou_ratio(const IntBox& a, const IntBox& b) {
  const long i = overlap(a, b);
  return {i, area(a) + area(b) - i};
}

bool above_half(const Ratio& r) { return 2 * r.num > r.den; }
bool greater(const Ratio& a, const Ratio& b) { return a.num * b.den > b.num * a.den; }

}  // namespace

int exhaustive_max_tp(const std::vector<IntBox>& dets, const std::vector<IntBox>& gts,
                      double iou_threshold) {
  std::vector<bool> used(gts.size(), false);
  std::function<int(std::size_t)> go = [&](std::size_t i) -> int {
    if (i == dets.size()) return 0;
    int best = go(i + 1);  // detection i unmatched
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || pixel_iou(dets[i], gts[j]) <= iou_threshold) continue;
      used[j] = true;
      best = std::max(best, 1 + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0);
}

double envelope_rectangle_ap(const std::vector<bool>& ranked_is_tp, int total_gt) {
  const std::size_t n = ranked_is_tp.size();
  std::vector<double> precision(n);
  int tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += ranked_is_tp[k];
    precision[k] = double(tp) / double(k + 1);
  }
  double ap = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!ranked_is_tp[j]) continue;
    double best = 0;
    for (std::size_t k = j; k < n; ++k) best = std::max(best, precision[k]);
    ap += best / double(total_gt);
  }
  return ap;
}

RefReport reference_map(const std::vector<RefImage>& images, bool eleven_point) {
  struct Hit {
    double confidence;
    std::size_t image;
    std::size_t det;
    bool tp;
  };
  std::map<std::string, std::vector<Hit>> hits;
  std::map<std::string, int> gt_count;

  for (std::size_t im = 0; im < images.size(); ++im) {
    const RefImage& img = images[im];
    for (const auto& g : img.gts) ++gt_count[g.cls];
    // Visit detections by descending confidence, ties in input order.
    std::vector<std::size_t> order(img.dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.dets[a].confidence > img.dets[b].confidence;
    });
    std::vector<bool> taken(img.gts.size(), false);
    for (std::size_t d : order) {
      const RefDet& det = img.dets[d];
      int pick = -1;
      Ratio best{0, 1};
      for (std::size_t g = 0; g < img.gts.size(); ++g) {
        if (taken[g] || img.gts[g].cls != det.cls) continue;
        const Ratio r = iou_ratio(det.box, img.gts[g].box);
        if (!above_half(r)) continue;
        if (pick < 0 || greater(r, best)) {
          pick = int(g);
          best = r;
        }
      }
      if (pick >= 0) taken[std::size_t(pick)] = true;
      hits[det.cls].push_back({det.confidence, im, d, pick >= 0});
    }
  }

  RefReport out;
  std::vector<std::string> classes;
  for (const auto& [c, _] : hits) classes.push_back(c);
  for (const auto& [c, _] : gt_count) classes.push_back(c);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  double sum = 0;
  int counted = 0;
  for (const auto& c : classes) {
    auto list = hits[c];
    // Global rank: confidence, then image, then the within-image rank.
    std::stable_sort(list.begin(), list.end(), [](const Hit& a, const Hit& b) {
      return a.confidence > b.confidence;
    });
    RefClass rc;
    rc.gt = gt_count.count(c) ? gt_count[c] : 0;
    for (const auto& h : list) (h.tp ? rc.tp : rc.fp) += 1;
    rc.fn = rc.gt - rc.tp;
    if (rc.gt > 0) {
      std::vector<bool> flags;
      for (const auto& h : list) flags.push_back(h.tp);
      if (!eleven_point) {
        rc.ap = envelope_rectangle_ap(flags, rc.gt);
      } else {
        double total = 0;
        for (int t = 0; t <= 10; ++t) {
          double best = 0;
          int tp = 0;
          for (std::size_t k = 0; k < flags.size(); ++k) {
            tp += flags[k];
            if (tp * 10 >= t * rc.gt) best = std::max(best, double(tp) / double(k + 1));
          }
          total += best;
        }
        rc.ap = total / 11.0;
      }
      sum += *rc.ap;
      ++counted;
    }
    out.per_class[c] = rc;
  }
  out.mean_ap = counted ? sum / counted : 0.0;
  return out;
}

std::vector<metrics::ImageSample> to_samples(const std::vector<RefImage>& images,
                                             const ClassRegistry& registry) {
  std::vector<metrics::ImageSample> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    metrics::ImageSample s;
    s.image_id = "img" + std::to_string(i);
    for (const auto& d : images[i].dets)
      s.detections.emplace_back(BoundingBox(d.box.x0, d.box.y0, d.box.x1, d.box.y1),
                                registry.at(d.cls), d.confidence);
    for (const auto& g : images[i].gts)
      s.ground_truth.push_back(
          {BoundingBox(g.box.x0, g.box.y0, g.box.x1, g.box.y1), registry.at(g.cls)});
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RefImage> random_instance(std::mt19937_64& rng) {
  static const char* kClasses[] = {"blast", "blight", "bsp", "nbs", "streak"};
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto box = [&] {
    const int x0 = uni(0, 12), y0 = uni(0, 12);
    return IntBox{x0, y0, x0 + uni(2, 8), y0 + uni(2, 8)};
  };
  auto jitter = [&](const IntBox& b) {
    return IntBox{b.x0 + uni(-2, 2), b.y0 + uni(-2, 2), b.x1 + uni(-2, 2), b.y1 + uni(-2, 2)};
  };
  auto valid = [](const IntBox& b) { return b.x0 >= 0 && b.y0 >= 0 && b.x1 > b.x0 && b.y1 > b.y0; };
  // Coarse confidences make ties frequent.
  auto conf = [&] { return uni(1, 20) / 20.0; };

  std::vector<RefImage> images(std::size_t(uni(1, 5)));
  for (auto& img : images) {
    for (const char* c : kClasses) {
      const int n_gt = uni(0, 3);
      const int n_det = uni(0, 3);
      for (int k = 0; k < n_gt; ++k) img.gts.push_back({c, box()});
      for (int k = 0; k < n_det; ++k) {
        IntBox b = (!img.gts.empty() && uni(0, 2) > 0) ? jitter(img.gts[std::size_t(uni(0, int(img.gts.size()) - 1))].box)
                                                       : box();
        if (!valid(b)) b = box();
        img.dets.push_back({c, conf(), b});
      }
    }
  }
  return images;
}

double atp_point_by_cases(const ClassSet& gt, const ClassSet& pred) {
  if (pred.empty()) return 0.0;  // no prediction
  int right = 0, wrong = 0;
  for (const auto& p : pred) (gt.count(p) ? right : wrong) += 1;
  if (wrong == 0) return 1.0;  // every predicted class is correct
  if (right == 0) return 0.0;  // every predicted class is wrong
  return double(right) / double(right + wrong);
}

}  // namespace ricebot::testing

namespace ricebot::testing {

std::vector<metrics::AtpSample> samples_from_tallies(const std::vector<ClassTally>& tallies,
                                                     const ClassRegistry& registry) {
  std::vector<metrics::AtpSample> out;
  for (const auto& t : tallies) {
    const DiseaseClass cls = registry.at(t.cls);
    // A wrong extra class alongside the right one earns half a point.
    const DiseaseClass other = registry.by_id((cls.id + 1) % 5);
    const int whole = int(t.points);
    const bool half = t.points - whole > 0.25;
    for (int i = 0; i < t.images; ++i) {
      if (i < whole)
        out.push_back({{cls}, {cls}});
      else if (i == whole && half)
        out.push_back({{cls}, {cls, other}});
      else
        out.push_back({{cls}, {}});
    }
  }
  return out;
}

}  // namespace ricebot::testing
