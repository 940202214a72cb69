#include "ricebot/eval_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace ricebot::eval {

using nlohmann::json;

namespace {

struct Row {
  std::string image_id;
  DiseaseClass cls;
  double confidence = 0;
  BoundingBox box{0, 0, 1, 1};
};

template <typename Fn>
void read_rows(std::istream& in, ClassRegistry& registry, bool predictions, Fn&& emit) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Row r;
      r.image_id = j.at("image_id").get<std::string>();
      if (r.image_id.empty()) throw InvalidArgument("empty image_id");
      r.cls = registry.register_class(j.at("class_name").get<std::string>());
      r.box = BoundingBox(j.at("x_min").get<double>(), j.at("y_min").get<double>(),
                          j.at("x_max").get<double>(), j.at("y_max").get<double>());
      if (predictions) {
        r.confidence = j.at("confidence").get<double>();
        if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
          throw InvalidArgument("confidence outside [0,1]");
      }
      emit(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw ParseError(line_no, e.what());
    }
  }
}

json box_fields(json j, const BoundingBox& b) {
  j["x_min"] = b.x_min();
  j["y_min"] = b.y_min();
  j["x_max"] = b.x_max();
  j["y_max"] = b.y_max();
  return j;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

EvalInputs load_eval_inputs(std::istream& predictions, std::istream& ground_truth,
                            ClassRegistry registry) {
  std::map<std::string, metrics::ImageSample> by_id;
  auto sample = [&](const std::string& id) -> metrics::ImageSample& {
    auto& s = by_id[id];
    s.image_id = id;
    return s;
  };
  read_rows(predictions, registry, true, [&](Row r) {
    sample(r.image_id).detections.emplace_back(r.box, r.cls, r.confidence);
  });
  read_rows(ground_truth, registry, false, [&](Row r) {
    sample(r.image_id).ground_truth.push_back({r.box, r.cls});
  });
  EvalInputs out{{}, std::move(registry)};
  for (auto& [_, s] : by_id) out.images.push_back(std::move(s));
  return out;
}

EvalInputs load_eval_files(const std::string& predictions_path,
                           const std::string& ground_truth_path, ClassRegistry registry) {
  std::ifstream p(predictions_path), g(ground_truth_path);
  if (!p) throw InvalidArgument("cannot open " + predictions_path);
  if (!g) throw InvalidArgument("cannot open " + ground_truth_path);
  return load_eval_inputs(p, g, std::move(registry));
}

void write_predictions(std::span<const metrics::ImageSample> images, std::ostream& out) {
  for (const auto& s : images)
    for (const auto& d : s.detections)
      out << box_fields({{"image_id", s.image_id},
                         {"class_name", d.cls().name},
                         {"confidence", d.confidence()}},
                        d.box())
                 .dump()
          << '\n';
}

void write_ground_truth(std::span<const metrics::ImageSample> images, std::ostream& out) {
  for (const auto& s : images)
    for (const auto& g : s.ground_truth)
      out << box_fields({{"image_id", s.image_id}, {"class_name", g.cls.name}}, g.box).dump()
          << '\n';
}

std::vector<metrics::AtpSample> atp_samples(std::span<const metrics::ImageSample> images,
                                            double threshold) {
  std::vector<metrics::AtpSample> out;
  for (const auto& s : images) {
    metrics::AtpSample a;
    for (const auto& g : s.ground_truth) a.gt.insert(g.cls);
    if (a.gt.empty()) continue;
    for (const auto& d : s.detections)
      if (d.confidence() >= threshold) a.pred.insert(d.cls());
    out.push_back(std::move(a));
  }
  return out;
}

json ap_report_to_json(const metrics::APReport& r) {
  auto row = [](const metrics::ClassEvaluation& e) {
    return json{{"class_name", e.cls.name},
                {"gt_count", e.gt_count},
                {"detection_count", e.detection_count},
                {"tp", e.tp},
                {"fp", e.fp},
                {"fn", e.fn},
                {"ap", e.ap ? json(*e.ap) : json()}};
  };
  json per = json::array(), absent = json::array();
  for (const auto& [_, e] : r.per_class) per.push_back(row(e));
  for (const auto& [_, e] : r.absent) absent.push_back(row(e));
  return {{"per_class", per}, {"absent", absent}, {"map", r.mean_ap}};
}

json atp_report_to_json(const metrics::ATPReport& r) {
  auto row = [](const metrics::AtpRow& a) {
    return json{{"images", a.image_count}, {"points", a.point_sum}, {"atp_percent", a.atp_percent}};
  };
  json per = json::array();
  for (const auto& [cls, a] : r.per_class) {
    json j = row(a);
    j["class_name"] = cls.name;
    per.push_back(j);
  }
  return {{"per_class", per}, {"total", row(r.total)}};
}

std::string format_ap_table(const metrics::APReport& r) {
  char buf[160];
  std::string out = "class         gt   det    tp    fp    fn      AP\n";
  auto line = [&](const metrics::ClassEvaluation& e) {
    std::snprintf(buf, sizeof buf, "%-10s %5d %5d %5d %5d %5d  %s\n", e.cls.name.c_str(),
                  e.gt_count, e.detection_count, e.tp, e.fp, e.fn,
                  e.ap ? fmt("%6.2f%%", 100 * *e.ap).c_str() : "   n/a");
    out += buf;
  };
  for (const auto& [_, e] : r.per_class) line(e);
  for (const auto& [_, e] : r.absent) line(e);
  out += "mAP " + fmt("%.2f%%", 100 * r.mean_ap) + "\n";
  if (!r.absent.empty()) out += "(classes without ground truth are excluded from mAP)\n";
  return out;
}

std::string format_atp_table(const metrics::ATPReport& r) {
  char buf[160];
  std::string out = "class       images    points     ATP\n";
  auto line = [&](const std::string& name, const metrics::AtpRow& a) {
    std::snprintf(buf, sizeof buf, "%-10s %7ld %9.1f %6.2f%%\n", name.c_str(), a.image_count,
                  a.point_sum, a.atp_percent);
    out += buf;
  };
  for (const auto& [cls, a] : r.per_class) line(cls.name, a);
  line("total", r.total);
  return out;
}

std::string ap_key_values(const metrics::APReport& r) {
  std::string out;
  auto put = [&](const metrics::ClassEvaluation& e) {
    const std::string k = e.cls.name;
    out += "gt." + k + "=" + std::to_string(e.gt_count) + "\n";
    out += "tp." + k + "=" + std::to_string(e.tp) + "\n";
    out += "fp." + k + "=" + std::to_string(e.fp) + "\n";
    out += "fn." + k + "=" + std::to_string(e.fn) + "\n";
    out += "ap." + k + "=" + (e.ap ? fmt("%.6f", *e.ap) : std::string("undefined")) + "\n";
  };
  for (const auto& [_, e] : r.per_class) put(e);
  for (const auto& [_, e] : r.absent) put(e);
  out += "map=" + fmt("%.6f", r.mean_ap) + "\n";
  return out;
}

std::string atp_key_values(const metrics::ATPReport& r) {
  std::string out;
  auto put = [&](const std::string& k, const metrics::AtpRow& a) {
    out += "atp." + k + ".images=" + std::to_string(a.image_count) + "\n";
    out += "atp." + k + ".points=" + fmt("%.4f", a.point_sum) + "\n";
    out += "atp." + k + ".percent=" + fmt("%.4f", a.atp_percent) + "\n";
  };
  for (const auto& [cls, a] : r.per_class) put(cls.name, a);
  put("total", r.total);
  return out;
}

}  // namespace ricebot::eval
