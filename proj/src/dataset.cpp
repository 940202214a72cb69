#include "ricebot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace ricebot::dataset {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidate: return "validate";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "validate") return Split::kValidate;
  if (text == "test") return Split::kTest;
  if (text == "unassigned") return Split::kUnassigned;
  throw InvalidArgument("unknown split: " + std::string(text));
}

ClassSet ManifestEntry::label_classes() const {
  ClassSet out;
  for (const auto& l : labels) out.insert(l.cls);
  return out;
}

// --- file format ------------------------------------------------------------

namespace {

json entry_to_json(const ManifestEntry& e) {
  json labels = json::array();
  for (const auto& l : e.labels)
    labels.push_back({{"class", l.cls.name},
                      {"x_min", l.box.x_min()},
                      {"y_min", l.box.y_min()},
                      {"x_max", l.box.x_max()},
                      {"y_max", l.box.y_max()}});
  json j = {{"image_id", e.image.id},
            {"content_hash", e.image.content_hash},
            {"width", e.image.width},
            {"height", e.image.height},
            {"storage_path", e.image.storage_path},
            {"split", to_string(e.split)},
            {"source_tag", e.source_tag},
            {"labels", std::move(labels)}};
  if (!e.pending_classes.empty()) {
    json pending = json::array();
    for (const auto& c : e.pending_classes) pending.push_back(c.name);
    j["pending_classes"] = std::move(pending);
  }
  return j;
}

ManifestEntry entry_from_json(const json& j, ClassRegistry& registry) {
  ManifestEntry e;
  e.image.id = j.at("image_id").get<std::string>();
  e.image.content_hash = j.at("content_hash").get<std::string>();
  e.image.width = j.at("width").get<int>();
  e.image.height = j.at("height").get<int>();
  e.image.storage_path = j.value("storage_path", std::string());
  e.split = parse_split(j.value("split", std::string("unassigned")));
  e.source_tag = j.value("source_tag", std::string());
  if (e.image.id.empty()) throw InvalidArgument("image_id must not be empty");
  if (e.image.width <= 0 || e.image.height <= 0)
    throw InvalidArgument("image dimensions must be positive");
  for (const auto& l : j.value("labels", json::array())) {
    e.labels.push_back({BoundingBox(l.at("x_min").get<double>(),
                                    l.at("y_min").get<double>(),
                                    l.at("x_max").get<double>(),
                                    l.at("y_max").get<double>()),
                        registry.register_class(l.at("class").get<std::string>())});
  }
  for (const auto& c : j.value("pending_classes", json::array()))
    e.pending_classes.push_back(registry.register_class(c.get<std::string>()));
  return e;
}

}  // namespace

void check_unique(const DatasetManifest& m) {
  std::unordered_map<std::string, std::string> ids;
  std::unordered_map<std::string, std::string> hashes;
  for (const auto& e : m.entries) {
    if (auto [it, fresh] = ids.emplace(e.image.id, e.image.id); !fresh)
      throw DuplicateImage(it->second, e.image.id);
    if (auto [it, fresh] = hashes.emplace(e.image.content_hash, e.image.id); !fresh)
      throw DuplicateImage(it->second, e.image.id);
  }
}

DatasetManifest parse_manifest(std::istream& in) {
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  std::unordered_map<std::string, std::string> ids;
  std::unordered_map<std::string, std::string> hashes;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("manifest_version") && !j.contains("image_id")) {
        m.version = j.at("manifest_version").get<std::string>();
        continue;
      }
      ManifestEntry e = entry_from_json(j, m.registry);
      if (auto [it, fresh] = ids.emplace(e.image.id, e.image.id); !fresh)
        throw DuplicateImage(it->second, e.image.id);
      if (auto [it, fresh] = hashes.emplace(e.image.content_hash, e.image.id);
          !fresh)
        throw DuplicateImage(it->second, e.image.id);
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);
  return parse_manifest(in);
}

void write_manifest(const DatasetManifest& m, std::ostream& out) {
  out << json{{"manifest_version", m.version}}.dump() << '\n';
  for (const auto& e : m.entries) out << entry_to_json(e).dump() << '\n';
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest: " + path);
    write_manifest(m, out);
    if (!out.flush()) throw Error("failed writing manifest: " + path);
  }
  std::filesystem::rename(tmp, path);
}

// --- audit -------------------------------------------------------------------

std::int64_t SplitCounts::total() const {
  std::int64_t t = 0;
  for (auto v : by_split) t += v;
  return t;
}

namespace {
double percent(std::int64_t part, std::int64_t whole) {
  return whole == 0 ? 0.0 : 100.0 * double(part) / double(whole);
}
}  // namespace

double AuditReport::box_percent(Split s) const {
  return percent(total_boxes[s], total_boxes.total());
}

double AuditReport::image_percent(Split s) const {
  return percent(total_images[s], total_images.total());
}

const ClassAudit* AuditReport::find(std::string_view class_name) const {
  const std::string key = to_lower(class_name);
  for (const auto& c : per_class)
    if (c.cls.name == key) return &c;
  return nullptr;
}

AuditReport audit(const DatasetManifest& m) {
  AuditReport r;
  for (const auto& c : m.registry.classes()) r.per_class.push_back({c, {}, {}});
  for (const auto& e : m.entries) {
    if (e.labels.empty()) {
      if (e.needs_annotation()) ++r.pending_annotation;
      continue;
    }
    r.total_images[e.split] += 1;
    for (const auto& l : e.labels) {
      r.per_class.at(l.cls.id).boxes[e.split] += 1;
      r.total_boxes[e.split] += 1;
    }
    for (const auto& c : e.label_classes()) r.per_class.at(c.id).images[e.split] += 1;
  }
  return r;
}

// --- transformations -----------------------------------------------------------

DatasetManifest remove_class(const DatasetManifest& m, std::string_view class_name) {
  const DiseaseClass gone = m.registry.at(class_name);
  DatasetManifest out;
  out.registry = m.registry;
  out.version = m.version;
  for (const auto& e : m.entries) {
    ManifestEntry kept = e;
    std::erase_if(kept.labels, [&](const GroundTruthBox& l) { return l.cls == gone; });
    std::erase(kept.pending_classes, gone);
    const bool had_any = !e.labels.empty() || !e.pending_classes.empty();
    const bool has_any = !kept.labels.empty() || !kept.pending_classes.empty();
    if (had_any && !has_any) continue;
    out.entries.push_back(std::move(kept));
  }
  return out;
}

MergeResult merge(const DatasetManifest& base, const DatasetManifest& addition) {
  MergeResult r;
  r.manifest = base;
  std::unordered_map<std::string, std::string> ids;
  std::unordered_map<std::string, std::string> hashes;
  for (const auto& e : base.entries) {
    ids.emplace(e.image.id, e.image.id);
    hashes.emplace(e.image.content_hash, e.image.id);
  }
  auto remap = [&](const DiseaseClass& c) {
    return r.manifest.registry.register_class(c.name);
  };
  for (const auto& e : addition.entries) {
    if (auto it = hashes.find(e.image.content_hash); it != hashes.end()) {
      r.duplicates.push_back({e.image.id, it->second, "content hash"});
      continue;
    }
    if (auto it = ids.find(e.image.id); it != ids.end()) {
      r.duplicates.push_back({e.image.id, it->second, "image id"});
      continue;
    }
    ManifestEntry copy = e;
    copy.split = Split::kUnassigned;
    for (auto& l : copy.labels) l.cls = remap(l.cls);
    for (auto& c : copy.pending_classes) c = remap(c);
    ids.emplace(copy.image.id, copy.image.id);
    hashes.emplace(copy.image.content_hash, copy.image.id);
    r.manifest.entries.push_back(std::move(copy));
  }
  return r;
}

namespace {

// Uniform draw in [0, bound) from a 64-bit engine, without modulo bias. Spelled
// out because std::uniform_int_distribution differs between standard
// libraries and split assignments must be reproducible everywhere.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

std::string stratum_key(const ManifestEntry& e) {
  std::set<int> ids;
  for (const auto& l : e.labels) ids.insert(l.cls.id);
  for (const auto& c : e.pending_classes) ids.insert(c.id);
  std::string key;
  for (int id : ids) key += std::to_string(id) + ",";
  return key;
}

}  // namespace

DatasetManifest split(const DatasetManifest& m, double train_fraction,
                      double validate_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && train_fraction < 1) ||
      !(validate_fraction > 0 && validate_fraction < 1) ||
      train_fraction + validate_fraction > 1 + 1e-9)
    throw InvalidArgument(
        "split fractions must lie in (0,1) and sum to at most 1");
  const double test_fraction =
      std::max(0.0, 1.0 - train_fraction - validate_fraction);
  const std::array<double, 3> fractions = {
      train_fraction, validate_fraction, test_fraction < 1e-9 ? 0.0 : test_fraction};
  const int groups = 2 + (fractions[2] > 0 ? 1 : 0);

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    strata[stratum_key(m.entries[i])].push_back(i);

  DatasetManifest out = m;
  std::mt19937_64 rng(seed);
  for (auto& [key, members] : strata) {
    const auto n = static_cast<std::int64_t>(members.size());
    if (n < groups)
      throw InsufficientData("class group {" + key + "} has " + std::to_string(n) +
                             " images, fewer than the " + std::to_string(groups) +
                             " split groups");
    // Largest-remainder allocation.
    std::array<std::int64_t, 3> count{};
    std::array<double, 3> rest{};
    std::int64_t assigned = 0;
    for (int g = 0; g < 3; ++g) {
      const double ideal = double(n) * fractions[g];
      count[g] = static_cast<std::int64_t>(std::floor(ideal));
      rest[g] = ideal - double(count[g]);
      assigned += count[g];
    }
    while (assigned < n) {
      int best = 0;
      for (int g = 1; g < 3; ++g)
        if (rest[g] > rest[best]) best = g;
      ++count[best];
      rest[best] = -1;
      ++assigned;
    }
    for (int g = 0; g < 3; ++g) {
      if (fractions[g] <= 0 || count[g] > 0) continue;
      const int donor = static_cast<int>(
          std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[g];
    }
    // Fisher-Yates.
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[draw_below(rng, i)]);
    std::size_t next = 0;
    constexpr Split kOrder[] = {Split::kTrain, Split::kValidate, Split::kTest};
    for (int g = 0; g < 3; ++g)
      for (std::int64_t k = 0; k < count[g]; ++k)
        out.entries[members[next++]].split = kOrder[g];
  }
  return out;
}

FeedbackExport export_feedback(std::span<const store::FeedbackRecord> feedback,
                               const ImageResolver& resolve,
                               const ClassRegistry& registry) {
  FeedbackExport out;
  out.manifest.registry = registry;

  std::vector<const store::FeedbackRecord*> ordered;
  for (const auto& f : feedback) ordered.push_back(&f);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) {
    return a->timestamp_ms < b->timestamp_ms;
  });

  // content hash -> (entry index, feedback id that produced it)
  std::unordered_map<std::string, std::pair<std::size_t, std::string>> by_hash;
  for (const auto* f : ordered) {
    if (f->verdict == store::Verdict::kNotDisease) {
      out.skipped.push_back({f->feedback_id, "not a disease image"});
      continue;
    }
    if (f->verdict == store::Verdict::kConfirm) {
      out.skipped.push_back({f->feedback_id, "confirmation, no correction"});
      continue;
    }
    if (!f->corrected_class) {
      out.skipped.push_back({f->feedback_id, "correction without a class"});
      continue;
    }
    const std::optional<ImageRef> img = resolve(f->job_id);
    if (!img || (!img->storage_path.empty() &&
                 !std::filesystem::exists(img->storage_path))) {
      out.skipped.push_back({f->feedback_id, "missing image for job " + f->job_id});
      continue;
    }
    const DiseaseClass cls =
        out.manifest.registry.register_class(f->corrected_class->name);
    ManifestEntry e;
    e.image = *img;
    e.split = Split::kUnassigned;
    e.source_tag = "feedback:" + f->feedback_id;
    e.pending_classes = {cls};
    if (auto it = by_hash.find(img->content_hash); it != by_hash.end()) {
      // A later correction of the same image supersedes the earlier one.
      out.skipped.push_back(
          {it->second.second, "superseded by feedback " + f->feedback_id});
      out.manifest.entries[it->second.first] = std::move(e);
      it->second.second = f->feedback_id;
      continue;
    }
    by_hash.emplace(img->content_hash,
                    std::make_pair(out.manifest.entries.size(), f->feedback_id));
    out.manifest.entries.push_back(std::move(e));
  }
  return out;
}

nlohmann::json audit_to_json(const AuditReport& r) {
  auto counts = [](const SplitCounts& c) {
    json j;
    for (auto s : kAllSplits) j[to_string(s)] = c[s];
    j["total"] = c.total();
    return j;
  };
  json per = json::array();
  for (const auto& c : r.per_class)
    per.push_back({{"class_name", c.cls.name}, {"boxes", counts(c.boxes)}, {"images", counts(c.images)}});
  return {{"per_class", per},
          {"total_boxes", counts(r.total_boxes)},
          {"total_images", counts(r.total_images)},
          {"pending_annotation", r.pending_annotation}};
}

}  // namespace ricebot::dataset
