#include "ricebot/domain.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace ricebot {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

ClassRegistry::ClassRegistry() {
  for (auto name : kDefaultClassNames) register_class(name);
}

ClassRegistry ClassRegistry::empty() { return ClassRegistry(EmptyTag{}); }

DiseaseClass ClassRegistry::register_class(std::string_view name) {
  std::string key = to_lower(name);
  if (key.empty() || key.find_first_of(" \t\r\n") != std::string::npos)
    throw InvalidArgument("class names must be non-empty single words: '" +
                          std::string(name) + "'");
  if (auto existing = lookup(key)) return *existing;
  DiseaseClass cls{static_cast<int>(classes_.size()), std::move(key)};
  classes_.push_back(cls);
  return cls;
}

std::optional<DiseaseClass> ClassRegistry::lookup(std::string_view name) const {
  const std::string key = to_lower(name);
  for (const auto& c : classes_)
    if (c.name == key) return c;
  return std::nullopt;
}

DiseaseClass ClassRegistry::at(std::string_view name) const {
  if (auto c = lookup(name)) return *c;
  throw UnknownClass(std::string(name));
}

DiseaseClass ClassRegistry::by_id(int id) const {
  if (id < 0 || id >= static_cast<int>(classes_.size()))
    throw UnknownClass("#" + std::to_string(id));
  return classes_[id];
}

BoundingBox::BoundingBox(double x_min, double y_min, double x_max, double y_max)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
  if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
      !std::isfinite(y_max))
    throw InvalidBox("box coordinates must be finite");
  if (x_min < 0 || y_min < 0)
    throw InvalidBox("box coordinates must be non-negative");
  if (!(x_min < x_max) || !(y_min < y_max))
    throw InvalidBox("box must have strictly positive area");
}

BoundingBox validate_box(const BoxCoords& b, double w, double h) {
  if (!(w > 0) || !(h > 0))
    throw InvalidArgument("frame dimensions must be positive");
  if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) ||
      !std::isfinite(b.x_max) || !std::isfinite(b.y_max))
    throw InvalidBox("box coordinates must be finite");
  const double x0 = std::clamp(b.x_min, 0.0, w);
  const double y0 = std::clamp(b.y_min, 0.0, h);
  const double x1 = std::clamp(b.x_max, 0.0, w);
  const double y1 = std::clamp(b.y_max, 0.0, h);
  if (!(x0 < x1) || !(y0 < y1))
    throw DegenerateBox("box has zero area inside the image frame");
  return BoundingBox(x0, y0, x1, y1);
}

Detection::Detection(BoundingBox box, DiseaseClass cls, double confidence)
    : box_(box), cls_(std::move(cls)), confidence_(confidence) {
  if (!(confidence >= 0.0 && confidence <= 1.0))
    throw InvalidArgument("confidence must lie in [0,1]");
}

ClassSet classes_of(const std::vector<Detection>& dets) {
  ClassSet out;
  for (const auto& d : dets) out.insert(d.cls());
  return out;
}

}  // namespace ricebot
