// ricebot: gateway server, evaluation, dataset and report commands.

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ricebot/annotate.hpp"
#include "ricebot/dataset.hpp"
#include "ricebot/eval_io.hpp"
#include "ricebot/gateway.hpp"
#include "ricebot/store.hpp"

using namespace ricebot;
using nlohmann::json;

namespace {

enum class Format { kText, kKv, kJson };

const std::map<std::string, Format> kFormats = {
    {"text", Format::kText}, {"kv", Format::kKv}, {"json", Format::kJson}};

// Epoch milliseconds, or a UTC date YYYY-MM-DD.
std::optional<std::int64_t> parse_time(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s.find('-') == std::string::npos) return std::stoll(s);
  std::tm tm{};
  std::istringstream in(s);
  in >> std::get_time(&tm, "%Y-%m-%d");
  if (in.fail()) throw InvalidArgument("bad date: " + s);
  return static_cast<std::int64_t>(timegm(&tm)) * 1000;
}

std::pair<std::string, int> split_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("expected host:port, got " + s);
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v);
  return buf;
}

void print_audit(const dataset::AuditReport& r, Format f, std::ostream& out) {
  using dataset::Split;
  if (f == Format::kJson) {
    out << dataset::audit_to_json(r).dump(2) << '\n';
    return;
  }
  if (f == Format::kKv) {
    for (const auto& c : r.per_class)
      for (auto s : dataset::kAllSplits) {
        out << "boxes." << c.cls.name << '.' << dataset::to_string(s) << '=' << c.boxes[s] << '\n';
        out << "images." << c.cls.name << '.' << dataset::to_string(s) << '=' << c.images[s]
            << '\n';
      }
    for (auto s : dataset::kAllSplits) {
      out << "boxes.total." << dataset::to_string(s) << '=' << r.total_boxes[s] << '\n';
      out << "images.total." << dataset::to_string(s) << '=' << r.total_images[s] << '\n';
    }
    out << "pending_annotation=" << r.pending_annotation << '\n';
    return;
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-10s %21s %21s\n", "class", "boxes train/val/test",
                "images train/val/test");
  out << buf;
  auto row = [&](const std::string& name, const dataset::SplitCounts& b,
                 const dataset::SplitCounts& i) {
    std::snprintf(buf, sizeof buf, "%-10s %7lld/%6lld/%6lld %7lld/%6lld/%6lld\n", name.c_str(),
                  (long long)b[Split::kTrain], (long long)b[Split::kValidate],
                  (long long)b[Split::kTest], (long long)i[Split::kTrain],
                  (long long)i[Split::kValidate], (long long)i[Split::kTest]);
    out << buf;
  };
  for (const auto& c : r.per_class) row(c.cls.name, c.boxes, c.images);
  row("total", r.total_boxes, r.total_images);
  out << "boxes  " << r.total_boxes.total() << "  train " << pct(r.box_percent(Split::kTrain))
      << "  validate " << pct(r.box_percent(Split::kValidate)) << "  test "
      << pct(r.box_percent(Split::kTest)) << '\n';
  out << "images " << r.total_images.total() << "  train "
      << pct(r.image_percent(Split::kTrain)) << "  validate "
      << pct(r.image_percent(Split::kValidate)) << "  test "
      << pct(r.image_percent(Split::kTest)) << '\n';
  if (r.total_boxes[Split::kUnassigned] || r.total_images[Split::kUnassigned])
    out << "unassigned: " << r.total_boxes[Split::kUnassigned] << " boxes, "
        << r.total_images[Split::kUnassigned] << " images\n";
  if (r.pending_annotation) out << "awaiting annotation: " << r.pending_annotation << '\n';
}

void print_atp(const metrics::ATPReport& r, Format f, std::ostream& out) {
  if (f == Format::kJson)
    out << eval::atp_report_to_json(r).dump(2) << '\n';
  else if (f == Format::kKv)
    out << eval::atp_key_values(r);
  else
    out << eval::format_atp_table(r);
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rice disease chatbot backend and evaluation tools"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the webhook gateway");
  std::string config_path, listen, backend_kind, endpoint, fixture;
  std::optional<double> threshold;
  std::optional<int> workers;
  serve->add_option("-c,--config", config_path, "JSON config file");
  serve->add_option("-l,--listen", listen, "host:port to listen on");
  serve->add_option("-b,--backend", backend_kind, "mock_fixture, mock_synthetic or remote");
  serve->add_option("--endpoint", endpoint, "Remote detector URL");
  serve->add_option("--fixture", fixture, "Fixture file for mock_fixture");
  serve->add_option("-t,--threshold", threshold, "Reply confidence threshold");
  serve->add_option("-w,--workers", workers, "Worker count");

  // serve-detector
  auto* serve_det = app.add_subcommand("serve-detector", "Host a mock backend behind the detector wire protocol");
  std::string det_listen = "127.0.0.1:8500", det_kind = "mock_synthetic", det_fixture;
  serve_det->add_option("-l,--listen", det_listen, "host:port");
  serve_det->add_option("-b,--backend", det_kind, "mock_fixture or mock_synthetic");
  serve_det->add_option("--fixture", det_fixture, "Fixture file");

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  std::string pred_path, gt_path, mode = "all_points", fmt = "text";
  double iou_thr = metrics::kDefaultIouThreshold, atp_thr = 0.25;
  ev->add_option("-p,--predictions", pred_path, "Prediction records")->required()->check(CLI::ExistingFile);
  ev->add_option("-g,--ground-truth", gt_path, "Ground-truth records")->required()->check(CLI::ExistingFile);
  ev->add_option("--iou", iou_thr, "IoU threshold");
  ev->add_option("--mode", mode, "all_points or eleven_point");
  ev->add_option("--atp-threshold", atp_thr, "Confidence needed for a class to count as predicted");
  ev->add_option("-f,--format", fmt, "text, kv or json")->check(CLI::IsMember({"text", "kv", "json"}));

  // dataset
  auto* ds = app.add_subcommand("dataset", "Manifest tools");
  ds->require_subcommand(1);
  std::string ds_fmt = "text", ds_in, ds_out, ds_class, ds_add, ds_db;
  double train = 0.8, validate = 0.2;
  std::uint64_t seed = 1;
  auto* ds_audit = ds->add_subcommand("audit", "Box and image counts per class and split");
  ds_audit->add_option("manifest", ds_in)->required()->check(CLI::ExistingFile);
  ds_audit->add_option("-f,--format", ds_fmt)->check(CLI::IsMember({"text", "kv", "json"}));
  auto* ds_remove = ds->add_subcommand("remove-class", "Drop a class from a manifest");
  ds_remove->add_option("manifest", ds_in)->required()->check(CLI::ExistingFile);
  ds_remove->add_option("class", ds_class)->required();
  ds_remove->add_option("-o,--out", ds_out)->required();
  auto* ds_merge = ds->add_subcommand("merge", "Add new entries to a manifest");
  ds_merge->add_option("base", ds_in)->required()->check(CLI::ExistingFile);
  ds_merge->add_option("addition", ds_add)->required()->check(CLI::ExistingFile);
  ds_merge->add_option("-o,--out", ds_out)->required();
  auto* ds_split = ds->add_subcommand("split", "Stratified train/validate/test assignment");
  ds_split->add_option("manifest", ds_in)->required()->check(CLI::ExistingFile);
  ds_split->add_option("--train", train);
  ds_split->add_option("--validate", validate);
  ds_split->add_option("--seed", seed);
  ds_split->add_option("-o,--out", ds_out)->required();
  auto* ds_export = ds->add_subcommand("export-feedback", "Corrected images as entries awaiting annotation");
  ds_export->add_option("--db", ds_db, "Logs database")->required()->check(CLI::ExistingFile);
  ds_export->add_option("-o,--out", ds_out)->required();
  for (auto* sc : {ds_remove, ds_merge, ds_split, ds_export})
    sc->add_option("-f,--format", ds_fmt)->check(CLI::IsMember({"text", "kv", "json"}));

  // report
  auto* rep = app.add_subcommand("report", "Deployment reports from the logs database");
  rep->require_subcommand(1);
  std::string rep_db, from, to, rep_fmt = "text";
  bool include_unverified = false;
  auto* rep_atp = rep->add_subcommand("atp", "Average true positive point of verified jobs");
  auto* rep_lat = rep->add_subcommand("latency", "Detection time per job");
  for (auto* sc : {rep_atp, rep_lat}) {
    sc->add_option("--db", rep_db, "Logs database")->required()->check(CLI::ExistingFile);
    sc->add_option("--from", from, "Start (epoch ms or YYYY-MM-DD, inclusive)");
    sc->add_option("--to", to, "End (epoch ms or YYYY-MM-DD, exclusive)");
    sc->add_option("-f,--format", rep_fmt)->check(CLI::IsMember({"text", "kv", "json"}));
  }
  rep_atp->add_flag("--include-unverified", include_unverified,
                    "Count jobs without a verdict as confirmed");

  // store
  auto* st = app.add_subcommand("store", "Logs database export and import");
  st->require_subcommand(1);
  std::string st_db, st_file;
  auto* st_export = st->add_subcommand("export", "Write users, jobs and feedback as JSON lines");
  st_export->add_option("--db", st_db)->required()->check(CLI::ExistingFile);
  st_export->add_option("-o,--out", st_file, "Output file (default stdout)");
  auto* st_import = st->add_subcommand("import", "Load an export into a database");
  st_import->add_option("--db", st_db)->required();
  st_import->add_option("file", st_file)->required()->check(CLI::ExistingFile);

  // user
  auto* us = app.add_subcommand("user", "User roles");
  us->require_subcommand(1);
  std::string us_db, us_id, us_role, us_name;
  auto* us_set = us->add_subcommand("set-role", "Make a user farmer, specialist or admin");
  us_set->add_option("--db", us_db)->required();
  us_set->add_option("user", us_id)->required();
  us_set->add_option("role", us_role)->required()->check(CLI::IsMember({"farmer", "specialist", "admin"}));
  us_set->add_option("--name", us_name);

  // synth
  auto* sy = app.add_subcommand("synth", "Paint a synthetic test scene");
  int sy_w = 320, sy_h = 240;
  std::vector<std::string> sy_rects;
  std::string sy_out, sy_gt;
  sy->add_option("--width", sy_w);
  sy->add_option("--height", sy_h);
  sy->add_option("-r,--rect", sy_rects, "class:x0,y0,x1,y1 (class may be 'other')");
  sy->add_option("-o,--out", sy_out, "PNG output")->required();
  sy->add_option("--gt", sy_gt, "Ground-truth records output");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*serve) {
      gateway::GatewayConfig cfg = gateway::load_config(config_path);
      if (!listen.empty()) std::tie(cfg.listen_host, cfg.listen_port) = split_host_port(listen);
      if (!backend_kind.empty()) {
        detector::BackendConfig b;
        b.kind = detector::parse_backend_kind(backend_kind);
        b.max_in_flight = cfg.backend.max_in_flight;
        b.confidence_floor = cfg.backend.confidence_floor;
        if (b.kind == detector::BackendKind::kMockSynthetic)
          b.color_map = detector::default_color_map();
        cfg.backend = b;
      }
      if (!endpoint.empty()) cfg.backend.endpoint = endpoint;
      if (!fixture.empty()) cfg.backend.fixture_path = fixture;
      if (threshold) cfg.threshold = *threshold;
      if (workers) cfg.workers = *workers;
      cfg.validate();
      if (cfg.channel_secret.empty())
        spdlog::warn("channel secret is empty; signatures use an empty key");
      gateway::Gateway g(cfg);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      g.start_workers();
      g.start_http(cfg.listen_host, cfg.listen_port);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      spdlog::info("shutting down");
      g.stop_http();
      g.stop();
      return 0;
    }

    if (*serve_det) {
      detector::BackendConfig b;
      b.kind = detector::parse_backend_kind(det_kind);
      if (b.kind == detector::BackendKind::kMockSynthetic) b.color_map = detector::default_color_map();
      b.fixture_path = det_fixture;
      ClassRegistry reg;
      detector::DetectorServer server(detector::make_backend(b, reg), reg);
      const auto [host, port] = split_host_port(det_listen);
      spdlog::info("detector listening on {}:{}", host, port);
      server.listen(host, port);
      return 0;
    }

    if (*ev) {
      const auto inputs = eval::load_eval_files(pred_path, gt_path);
      const auto ap = metrics::map_report(inputs.images, iou_thr, metrics::parse_ap_mode(mode));
      const auto samples = eval::atp_samples(inputs.images, atp_thr);
      const auto atp = metrics::atp_report(samples);
      switch (kFormats.at(fmt)) {
        case Format::kJson:
          std::cout << json{{"iou_threshold", iou_thr},
                            {"mode", mode},
                            {"ap", eval::ap_report_to_json(ap)},
                            {"atp_threshold", atp_thr},
                            {"atp", eval::atp_report_to_json(atp)}}
                           .dump(2)
                    << '\n';
          break;
        case Format::kKv:
          std::cout << eval::ap_key_values(ap) << eval::atp_key_values(atp);
          break;
        case Format::kText:
          std::cout << "Average precision (IoU > " << iou_thr << ", " << mode << ")\n"
                    << eval::format_ap_table(ap) << "\nAverage true positive point (confidence >= "
                    << atp_thr << ")\n"
                    << eval::format_atp_table(atp);
          break;
      }
      return 0;
    }

    if (*ds) {
      const Format f = kFormats.at(ds_fmt);
      if (*ds_audit) {
        print_audit(dataset::audit(dataset::load_manifest(ds_in)), f, std::cout);
      } else if (*ds_remove) {
        auto m = dataset::remove_class(dataset::load_manifest(ds_in), ds_class);
        dataset::save_manifest(m, ds_out);
        print_audit(dataset::audit(m), f, std::cout);
      } else if (*ds_merge) {
        auto r = dataset::merge(dataset::load_manifest(ds_in), dataset::load_manifest(ds_add));
        dataset::save_manifest(r.manifest, ds_out);
        for (const auto& d : r.duplicates)
          std::cerr << "duplicate: " << d.addition_id << " matches " << d.base_id << " ("
                    << d.reason << ")\n";
        print_audit(dataset::audit(r.manifest), f, std::cout);
      } else if (*ds_split) {
        auto m = dataset::split(dataset::load_manifest(ds_in), train, validate, seed);
        dataset::save_manifest(m, ds_out);
        print_audit(dataset::audit(m), f, std::cout);
      } else if (*ds_export) {
        store::Store db(ds_db);
        const auto feedback = db.list_feedback();
        auto res = dataset::export_feedback(
            feedback,
            [&db](const std::string& job) -> std::optional<ImageRef> {
              try {
                return db.get_job(job).image;
              } catch (const UnknownJob&) {
                return std::nullopt;
              }
            },
            db.registry());
        dataset::save_manifest(res.manifest, ds_out);
        for (const auto& s : res.skipped)
          std::cerr << "skipped " << s.feedback_id << ": " << s.reason << '\n';
        std::cout << "exported " << res.manifest.entries.size() << " image(s), skipped "
                  << res.skipped.size() << '\n';
      }
      return 0;
    }

    if (*rep) {
      store::Store db(rep_db);
      const store::Period period{parse_time(from), parse_time(to)};
      const Format f = kFormats.at(rep_fmt);
      if (*rep_atp) {
        const auto r = db.deployment_atp(period, !include_unverified);
        if (f == Format::kJson) {
          json j = eval::atp_report_to_json(r.report);
          j["jobs_considered"] = r.jobs_considered;
          j["included"] = r.included;
          j["excluded_unverified"] = r.excluded_unverified;
          j["excluded_non_target"] = r.excluded_non_target;
          j["excluded_incomplete"] = r.excluded_incomplete;
          j["excluded_percent"] = r.excluded_percent;
          std::cout << j.dump(2) << '\n';
        } else if (f == Format::kKv) {
          std::cout << eval::atp_key_values(r.report) << "jobs_considered=" << r.jobs_considered
                    << "\nincluded=" << r.included << "\nexcluded_unverified="
                    << r.excluded_unverified << "\nexcluded_non_target="
                    << r.excluded_non_target << "\nexcluded_incomplete="
                    << r.excluded_incomplete << "\nexcluded_percent=" << r.excluded_percent
                    << '\n';
        } else {
          print_atp(r.report, f, std::cout);
          std::cout << r.included << " of " << r.jobs_considered << " jobs included ("
                    << pct(r.excluded_percent) << " excluded: " << r.excluded_unverified
                    << " unverified, " << r.excluded_non_target << " non-target, "
                    << r.excluded_incomplete << " incomplete)\n";
        }
      } else {
        const auto l = db.latency_report(period);
        if (f == Format::kJson)
          std::cout << json{{"count", l.count},         {"min_ms", l.min_ms},
                            {"median_ms", l.median_ms}, {"p95_ms", l.p95_ms},
                            {"max_ms", l.max_ms}}
                           .dump(2)
                    << '\n';
        else if (f == Format::kKv)
          std::cout << "count=" << l.count << "\nmin_ms=" << l.min_ms << "\nmedian_ms="
                    << l.median_ms << "\np95_ms=" << l.p95_ms << "\nmax_ms=" << l.max_ms << '\n';
        else
          std::cout << l.count << " jobs  min " << l.min_ms << " ms  median " << l.median_ms
                    << " ms  p95 " << l.p95_ms << " ms  max " << l.max_ms << " ms\n";
      }
      return 0;
    }

    if (*st) {
      store::Store db(st_db);
      if (*st_export) {
        if (st_file.empty()) {
          db.export_jsonl(std::cout);
        } else {
          std::ofstream out(st_file);
          db.export_jsonl(out);
        }
      } else {
        std::ifstream in(st_file);
        std::cout << "imported " << db.import_jsonl(in) << " record(s)\n";
      }
      return 0;
    }

    if (*us) {
      store::Store db(us_db);
      db.upsert_user({us_id, store::parse_role(us_role), us_name});
      db.append_audit({0, "cli", "set_role", us_id + " " + us_role});
      return 0;
    }

    if (*sy) {
      ClassRegistry reg;
      const auto colors = detector::default_color_map();
      std::vector<image::SynthShape> shapes;
      for (const auto& spec : sy_rects) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) throw InvalidArgument("bad --rect " + spec);
        const std::string name = to_lower(spec.substr(0, colon));
        image::PixelRect r;
        if (std::sscanf(spec.c_str() + colon + 1, "%d,%d,%d,%d", &r.x0, &r.y0, &r.x1, &r.y1) != 4)
          throw InvalidArgument("bad --rect " + spec);
        image::Rgb color{40, 160, 40};  // a leaf-green non-target
        for (const auto& c : colors)
          if (c.class_name == name) color = c.color;
        if (name != "other" && !reg.contains(name)) throw UnknownClass(name);
        shapes.push_back({r, color});
      }
      const auto scene = image::synth_image(shapes, sy_w, sy_h, {255, 255, 255}, colors, reg);
      std::ofstream(sy_out, std::ios::binary) << scene.png;
      if (!sy_gt.empty()) {
        metrics::ImageSample s{image::content_hash(scene.png), {}, scene.ground_truth};
        std::ofstream out(sy_gt);
        eval::write_ground_truth(std::span(&s, 1), out);
      }
      std::cout << image::content_hash(scene.png) << '\n';
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
