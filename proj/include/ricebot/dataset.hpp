#pragma once

// Training-manifest management: load/save, audit counts per class and split,
// class removal, merging new data, stratified splitting, and exporting
// specialist corrections as images awaiting annotation.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ricebot/domain.hpp"
#include "ricebot/records.hpp"

namespace ricebot::dataset {

enum class Split { kTrain, kValidate, kTest, kUnassigned };
inline constexpr std::array<Split, 4> kAllSplits = {
    Split::kTrain, Split::kValidate, Split::kTest, Split::kUnassigned};

std::string to_string(Split s);
Split parse_split(std::string_view text);

struct ManifestEntry {
  ImageRef image;
  std::vector<GroundTruthBox> labels;
  Split split = Split::kUnassigned;
  std::string source_tag;
  // Classes known for the image but not yet localised by boxes (for example a
  // specialist correction). Non-empty marks the entry as needs-annotation.
  std::vector<DiseaseClass> pending_classes;

  bool needs_annotation() const { return !pending_classes.empty(); }
  ClassSet label_classes() const;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  ClassRegistry registry;
  std::string version = "1";
};

// Line-delimited JSON, one image per line, optionally preceded by a
// {"manifest_version": ...} header line. Unknown class names are registered.
// Throws ParseError (1-based line) or DuplicateImage.
DatasetManifest load_manifest(const std::string& path);
DatasetManifest parse_manifest(std::istream& in);
// Deterministic output; save(load(save(m))) is byte-identical to save(m).
void save_manifest(const DatasetManifest& m, const std::string& path);
void write_manifest(const DatasetManifest& m, std::ostream& out);

// Throws DuplicateImage when ids or content hashes repeat.
void check_unique(const DatasetManifest& m);

struct SplitCounts {
  std::array<std::int64_t, 4> by_split{};  // indexed by Split

  std::int64_t& operator[](Split s) { return by_split[static_cast<int>(s)]; }
  std::int64_t operator[](Split s) const { return by_split[static_cast<int>(s)]; }
  std::int64_t total() const;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

struct ClassAudit {
  DiseaseClass cls;
  SplitCounts boxes;
  SplitCounts images;
};

struct AuditReport {
  std::vector<ClassAudit> per_class;  // every registered class, by id
  SplitCounts total_boxes;
  // Distinct images; a multi-class image counts once here but once per class
  // in per_class.
  SplitCounts total_images;
  std::int64_t pending_annotation = 0;

  // 100 * split / total, 0 for an empty manifest.
  double box_percent(Split s) const;
  double image_percent(Split s) const;
  const ClassAudit* find(std::string_view class_name) const;
};

AuditReport audit(const DatasetManifest& m);
// {per_class:[{class_name, boxes, images}], total_boxes, total_images,
// pending_annotation}; counts are keyed by split name plus "total".
nlohmann::json audit_to_json(const AuditReport& r);

// Drops every box of the class; entries left without labels or pending
// classes are dropped. Throws UnknownClass.
DatasetManifest remove_class(const DatasetManifest& m, std::string_view class_name);

struct MergeConflict {
  std::string addition_id;
  std::string base_id;
  std::string reason;  // "content hash" or "image id"
};

struct MergeResult {
  DatasetManifest manifest;
  std::vector<MergeConflict> duplicates;
};

// Union of entries. Base splits are kept; additions enter unassigned.
// Additions repeating a base hash or id are reported and skipped. Classes
// are matched by name and missing ones are registered.
MergeResult merge(const DatasetManifest& base, const DatasetManifest& addition);

// Stratified by each entry's class set; deterministic for a given seed.
// Per stratum the train and validate counts are within one image of the
// requested fraction; the remainder becomes test. Throws InvalidArgument for
// bad fractions and InsufficientData when a stratum has fewer images than
// there are non-empty split groups.
DatasetManifest split(const DatasetManifest& m, double train_fraction,
                      double validate_fraction, std::uint64_t seed);

struct ExportSkip {
  std::string feedback_id;
  std::string reason;
};

struct FeedbackExport {
  DatasetManifest manifest;
  std::vector<ExportSkip> skipped;
};

// Resolves the stored image of a job, if any.
using ImageResolver =
    std::function<std::optional<ImageRef>(const std::string& job_id)>;

// One needs-annotation entry per corrected image, tagged with the corrected
// class. not_disease and confirm verdicts are skipped with a reason, as are
// records whose image is missing.
FeedbackExport export_feedback(std::span<const store::FeedbackRecord> feedback,
                               const ImageResolver& resolve,
                               const ClassRegistry& registry = ClassRegistry());

}  // namespace ricebot::dataset
