// Python bindings for the core operations. Reports come back as plain
// dicts and lists.

#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ricebot/annotate.hpp"
#include "ricebot/dataset.hpp"
#include "ricebot/detector.hpp"
#include "ricebot/eval_io.hpp"
#include "ricebot/gateway.hpp"
#include "ricebot/metrics.hpp"
#include "ricebot/store.hpp"

namespace py = pybind11;
using namespace ricebot;
using nlohmann::json;

namespace {

using Box = std::tuple<double, double, double, double>;

py::object to_py(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

BoundingBox make_box(const Box& b) {
  return BoundingBox(std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b));
}

ClassSet class_set(const std::vector<std::string>& names, const ClassRegistry& reg) {
  ClassSet s;
  for (const auto& n : names) s.insert(reg.at(n));
  return s;
}

metrics::ApMode ap_mode(const std::string& mode) { return metrics::parse_ap_mode(mode); }

py::dict evaluation(const eval::EvalInputs& in, double iou_threshold, const std::string& mode,
                    double atp_threshold) {
  const auto ap = metrics::map_report(in.images, iou_threshold, ap_mode(mode));
  const auto atp = metrics::atp_report(eval::atp_samples(in.images, atp_threshold));
  py::dict d;
  d["ap"] = to_py(eval::ap_report_to_json(ap));
  d["atp"] = to_py(eval::atp_report_to_json(atp));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ricebot core library";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<UnknownClass>(m, "UnknownClass", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", base.ptr());
  py::register_exception<InsufficientData>(m, "InsufficientData", base.ptr());
  py::register_exception<UnknownJob>(m, "UnknownJob", base.ptr());
  py::register_exception<StorageError>(m, "StorageError", base.ptr());

  m.def("known_classes", [] {
    std::vector<std::string> out;
    for (const auto& c : ClassRegistry().classes()) out.push_back(c.name);
    return out;
  });

  // --- metrics
  m.def("iou", [](const Box& a, const Box& b) { return metrics::iou(make_box(a), make_box(b)); },
        py::arg("a"), py::arg("b"), "Intersection over union of two (x0, y0, x1, y1) boxes.");
  m.def(
      "atp_image_point",
      [](const std::vector<std::string>& gt, const std::vector<std::string>& pred) {
        ClassRegistry reg;
        return metrics::atp_image_point(class_set(gt, reg), class_set(pred, reg));
      },
      py::arg("gt"), py::arg("pred"));
  m.def(
      "atp_report",
      [](const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& samples) {
        ClassRegistry reg;
        std::vector<metrics::AtpSample> s;
        for (const auto& [gt, pred] : samples) s.push_back({class_set(gt, reg), class_set(pred, reg)});
        return to_py(eval::atp_report_to_json(metrics::atp_report(s)));
      },
      py::arg("samples"), "samples: [(gt_classes, predicted_classes), ...]");
  m.def(
      "evaluate",
      [](const std::string& predictions, const std::string& ground_truth, double iou_threshold,
         const std::string& mode, double atp_threshold) {
        std::istringstream p(predictions), g(ground_truth);
        return evaluation(eval::load_eval_inputs(p, g), iou_threshold, mode, atp_threshold);
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5,
      py::arg("mode") = "all_points", py::arg("atp_threshold") = 0.25,
      "Evaluate JSON-lines text: mAP report and ATP report.");
  m.def(
      "evaluate_files",
      [](const std::string& predictions, const std::string& ground_truth, double iou_threshold,
         const std::string& mode, double atp_threshold) {
        return evaluation(eval::load_eval_files(predictions, ground_truth), iou_threshold, mode,
                          atp_threshold);
      },
      py::arg("predictions_path"), py::arg("ground_truth_path"), py::arg("iou_threshold") = 0.5,
      py::arg("mode") = "all_points", py::arg("atp_threshold") = 0.25);

  // --- dataset
  m.def("audit_manifest", [](const std::string& path) {
    return to_py(dataset::audit_to_json(dataset::audit(dataset::load_manifest(path))));
  });
  m.def("remove_class", [](const std::string& in, const std::string& out, const std::string& cls) {
    dataset::save_manifest(dataset::remove_class(dataset::load_manifest(in), cls), out);
  }, py::arg("manifest"), py::arg("output"), py::arg("class_name"));
  m.def(
      "merge_manifests",
      [](const std::string& base, const std::string& addition, const std::string& out) {
        const auto r = dataset::merge(dataset::load_manifest(base), dataset::load_manifest(addition));
        dataset::save_manifest(r.manifest, out);
        std::vector<std::tuple<std::string, std::string, std::string>> dups;
        for (const auto& d : r.duplicates) dups.emplace_back(d.addition_id, d.base_id, d.reason);
        return dups;
      },
      py::arg("base"), py::arg("addition"), py::arg("output"),
      "Returns the skipped duplicates as (addition_id, base_id, reason).");
  m.def(
      "split_manifest",
      [](const std::string& in, const std::string& out, double train, double validate,
         std::uint64_t seed) {
        dataset::save_manifest(dataset::split(dataset::load_manifest(in), train, validate, seed), out);
      },
      py::arg("manifest"), py::arg("output"), py::arg("train") = 0.8, py::arg("validate") = 0.2,
      py::arg("seed") = 42);

  // --- images and detection
  m.def(
      "synth_image",
      [](const std::vector<std::pair<std::string, std::tuple<int, int, int, int>>>& rects, int width,
         int height) {
        const auto colors = detector::default_color_map();
        std::vector<image::SynthShape> shapes;
        for (const auto& [name, r] : rects) {
          image::Rgb color{40, 160, 40};  // non-target foliage
          for (const auto& c : colors)
            if (c.class_name == name) color = c.color;
          const auto [x0, y0, x1, y1] = r;
          shapes.push_back({{x0, y0, x1, y1}, color});
        }
        const auto s = image::synth_image(shapes, width, height, {255, 255, 255}, colors);
        std::vector<std::pair<std::string, Box>> gt;
        for (const auto& g : s.ground_truth)
          gt.push_back({g.cls.name, {g.box.x_min(), g.box.y_min(), g.box.x_max(), g.box.y_max()}});
        return py::make_tuple(py::bytes(s.png), gt);
      },
      py::arg("rects"), py::arg("width") = 160, py::arg("height") = 120,
      "PNG of coloured rectangles on white; unknown class names paint non-target shapes.");
  m.def(
      "detect",
      [](const py::bytes& image, const py::object& backend) {
        json cfg = backend.is_none() ? json::object() : from_py(backend);
        // Reuse the gateway's parser for backend settings.
        const auto full = gateway::config_from_json({{"backend", cfg}});
        detector::DetectionRequest req;
        req.image = image;
        req.content_type = image::sniff_content_type(req.image);
        detector::DetectionResponse r;
        {
          py::gil_scoped_release release;
          r = detector::detect(req, full.backend);
        }
        return to_py(detector::response_to_json(r));
      },
      py::arg("image"), py::arg("backend") = py::none(),
      "Runs a detector backend; `backend` takes the config file's backend object.");
  m.def(
      "render_annotation",
      [](const py::bytes& image, const std::vector<std::tuple<std::string, double, Box>>& dets) {
        ClassRegistry reg;
        std::vector<Detection> ds;
        for (const auto& [cls, conf, box] : dets) ds.emplace_back(make_box(box), reg.at(cls), conf);
        return py::bytes(image::render_annotation(std::string(image), ds));
      },
      py::arg("image"), py::arg("detections"), "detections: [(class, confidence, box), ...]");
  m.def("content_hash", [](const py::bytes& b) { return image::content_hash(std::string(b)); });

  // --- gateway helpers
  m.def("compute_signature", [](const std::string& secret, const py::bytes& body) {
    return gateway::compute_signature(secret, std::string(body));
  });
  m.def("verify_signature", [](const std::string& secret, const py::bytes& body,
                               const std::string& sig) {
    return gateway::verify_signature(secret, std::string(body), sig);
  });
  m.def("parse_command", [](const std::string& text) -> py::object {
    const auto c = gateway::parse_command(text);
    if (!c) return py::none();
    py::dict d;
    d["kind"] = c->kind == gateway::Command::Kind::kConfirm ? "confirm" : "correct";
    d["job_ref"] = c->job_ref;
    d["class_name"] = c->class_name ? py::object(py::str(*c->class_name)) : py::none();
    return d;
  });
  m.def("render_reply_text", [](const std::string& tmpl,
                                const std::vector<std::tuple<std::string, double, Box>>& dets,
                                const std::string& job_ref) {
    ClassRegistry reg;
    std::vector<Detection> ds;
    for (const auto& [cls, conf, box] : dets) ds.emplace_back(make_box(box), reg.at(cls), conf);
    return gateway::render_reply_text(tmpl, ds, job_ref);
  }, py::arg("template"), py::arg("detections"), py::arg("job_ref"));

  // --- store
  py::class_<store::Store>(m, "Store")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def("job_count", &store::Store::job_count)
      .def("jobs", [](const store::Store& s) {
        std::ostringstream out;
        s.export_jsonl(out);
        py::list jobs;
        std::istringstream in(out.str());
        for (std::string line; std::getline(in, line);) {
          const json j = json::parse(line);
          if (j.at("record") == "job") jobs.append(to_py(j));
        }
        return jobs;
      })
      .def(
          "deployment_atp",
          [](const store::Store& s, std::optional<std::int64_t> from_ms,
             std::optional<std::int64_t> to_ms, bool verified_only) {
            const auto r = s.deployment_atp({from_ms, to_ms}, verified_only);
            json j = eval::atp_report_to_json(r.report);
            j["jobs_considered"] = r.jobs_considered;
            j["included"] = r.included;
            j["excluded_unverified"] = r.excluded_unverified;
            j["excluded_non_target"] = r.excluded_non_target;
            j["excluded_incomplete"] = r.excluded_incomplete;
            j["excluded_percent"] = r.excluded_percent;
            return to_py(j);
          },
          py::arg("from_ms") = py::none(), py::arg("to_ms") = py::none(),
          py::arg("verified_only") = true)
      .def(
          "latency_report",
          [](const store::Store& s, std::optional<std::int64_t> from_ms,
             std::optional<std::int64_t> to_ms) {
            const auto r = s.latency_report({from_ms, to_ms});
            py::dict d;
            d["count"] = r.count;
            d["min_ms"] = r.min_ms;
            d["median_ms"] = r.median_ms;
            d["p95_ms"] = r.p95_ms;
            d["max_ms"] = r.max_ms;
            return d;
          },
          py::arg("from_ms") = py::none(), py::arg("to_ms") = py::none())
      .def("export_jsonl", [](const store::Store& s) {
        std::ostringstream out;
        s.export_jsonl(out);
        return out.str();
      });

  // --- gateway
  py::class_<gateway::Gateway>(m, "Gateway")
      .def(py::init([](const py::object& config) {
             return std::make_unique<gateway::Gateway>(gateway::config_from_json(from_py(config)));
           }),
           py::arg("config"), "config: dict with the same keys as the JSON config file")
      .def("start_workers", &gateway::Gateway::start_workers,
           py::call_guard<py::gil_scoped_release>())
      .def("stop", &gateway::Gateway::stop, py::call_guard<py::gil_scoped_release>())
      .def(
          "handle_webhook",
          [](gateway::Gateway& g, const py::bytes& body, const std::string& signature) {
            const std::string b(body);
            gateway::HttpResult r;
            {
              py::gil_scoped_release release;
              r = g.handle_webhook(b, signature);
            }
            return py::make_tuple(r.status, r.body);
          },
          py::arg("body"), py::arg("signature"))
      .def(
          "wait_idle",
          [](gateway::Gateway& g, int timeout_ms) {
            py::gil_scoped_release release;
            return g.wait_idle(std::chrono::milliseconds(timeout_ms));
          },
          py::arg("timeout_ms") = 10000)
      .def("queue_depth", &gateway::Gateway::queue_depth)
      .def("start_http", &gateway::Gateway::start_http, py::arg("host") = "127.0.0.1",
           py::arg("port") = 0, py::call_guard<py::gil_scoped_release>())
      .def("stop_http", &gateway::Gateway::stop_http, py::call_guard<py::gil_scoped_release>())
      .def("serve_content",
           [](const gateway::Gateway& g, const std::string& token, bool preview) -> py::object {
             auto c = g.serve_content(token, preview);
             if (!c) return py::none();
             return py::bytes(c->bytes);
           },
           py::arg("token"), py::arg("preview") = false)
      .def("store", &gateway::Gateway::store, py::return_value_policy::reference_internal);
}
