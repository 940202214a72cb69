#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ricebot/error.hpp"

namespace ricebot {

// A registered disease label. Two classes compare equal when their ids do;
// names are unique within a registry so the id is the identity.
struct DiseaseClass {
  int id = -1;
  std::string name;

  friend bool operator==(const DiseaseClass& a, const DiseaseClass& b) {
    return a.id == b.id;
  }
  friend std::strong_ordering operator<=>(const DiseaseClass& a,
                                          const DiseaseClass& b) {
    return a.id <=> b.id;
  }
};

using ClassSet = std::set<DiseaseClass>;

// Name -> id registry. Lookups are case-insensitive; registered names are
// stored lower-cased. A default-constructed registry already holds the five
// rice leaf diseases with ids 0..4.
class ClassRegistry {
 public:
  ClassRegistry();

  static ClassRegistry empty();

  // Registers `name` or returns the existing class of that name.
  DiseaseClass register_class(std::string_view name);

  std::optional<DiseaseClass> lookup(std::string_view name) const;
  // Throws UnknownClass.
  DiseaseClass at(std::string_view name) const;
  // Throws UnknownClass.
  DiseaseClass by_id(int id) const;

  bool contains(std::string_view name) const {
    return lookup(name).has_value();
  }
  const std::vector<DiseaseClass>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }

 private:
  struct EmptyTag {};
  explicit ClassRegistry(EmptyTag) {}

  std::vector<DiseaseClass> classes_;
};

inline constexpr std::string_view kDefaultClassNames[] = {
    "blast", "blight", "bsp", "nbs", "streak"};

std::string to_lower(std::string_view s);

// Unvalidated corner coordinates, as received from a backend or a file.
struct BoxCoords {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;
};

// Corner-form pixel box, origin top-left. Always finite, non-negative and of
// strictly positive area.
class BoundingBox {
 public:
  // Throws InvalidBox.
  BoundingBox(double x_min, double y_min, double x_max, double y_max);
  explicit BoundingBox(const BoxCoords& c)
      : BoundingBox(c.x_min, c.y_min, c.x_max, c.y_max) {}

  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }
  double width() const { return x_max_ - x_min_; }
  double height() const { return y_max_ - y_min_; }
  double area() const { return width() * height(); }
  BoxCoords coords() const { return {x_min_, y_min_, x_max_, y_max_}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x_min_, y_min_, x_max_, y_max_;
};

// Clamps `b` into [0,w]x[0,h]. Throws InvalidArgument if w or h is not
// positive, DegenerateBox if nothing of the box is left inside the frame.
BoundingBox validate_box(const BoxCoords& b, double w, double h);

class Detection {
 public:
  // Throws InvalidArgument unless 0 <= confidence <= 1.
  Detection(BoundingBox box, DiseaseClass cls, double confidence);

  const BoundingBox& box() const { return box_; }
  const DiseaseClass& cls() const { return cls_; }
  double confidence() const { return confidence_; }

 private:
  BoundingBox box_;
  DiseaseClass cls_;
  double confidence_;
};

struct GroundTruthBox {
  BoundingBox box;
  DiseaseClass cls;
};

struct ImageRef {
  std::string id;
  std::string content_hash;
  int width = 0;
  int height = 0;
  std::string storage_path;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

// Distinct classes among `dets`.
ClassSet classes_of(const std::vector<Detection>& dets);

}  // namespace ricebot
