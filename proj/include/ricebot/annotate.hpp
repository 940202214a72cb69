#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ricebot/domain.hpp"
#include "ricebot/image.hpp"

namespace ricebot::image {

// Integer pixel rectangle, half-open [x0,x1) x [y0,y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  bool contains(int x, int y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

inline constexpr int kOutlineWidth = 2;

// "<class> <confidence to 2 decimals>"
std::string tag_text(const Detection& d);

// Outline footprint of a box in a w x h frame: the pixels it touches, clipped.
PixelRect outline_rect(const BoundingBox& box, int w, int h);
// Where the tag for `d` is painted in a w x h frame (already clipped).
PixelRect tag_rect(const Detection& d, int w, int h);

Rgb class_color(const DiseaseClass& cls);

// Draws every detection (outline plus tag) onto a copy of the image. The
// outline is kOutlineWidth pixels thick, lying inside the box edges.
Image annotate(const Image& img, const std::vector<Detection>& dets);
// Decode, annotate, encode as PNG. Throws DecodeError.
std::string render_annotation(std::string_view image_bytes,
                              const std::vector<Detection>& dets);

struct SynthShape {
  PixelRect rect;
  Rgb color;
};

struct SynthScene {
  std::string png;
  std::vector<GroundTruthBox> ground_truth;
};

// Paints `shapes` in order over a uniform background. Shapes whose colour
// maps to a class through `color_classes` become ground truth; others act as
// non-target objects. Throws InvalidArgument for shapes outside the frame or
// coloured like the background.
SynthScene synth_image(const std::vector<SynthShape>& shapes, int w, int h,
                       Rgb background,
                       const std::vector<ColorClass>& color_classes,
                       const ClassRegistry& registry = ClassRegistry());

}  // namespace ricebot::image
