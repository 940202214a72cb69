#include "ricebot/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "font5x8.hpp"

namespace ricebot::image {

namespace {

constexpr int kTagPad = 2;
constexpr Rgb kPalette[] = {
    {220, 20, 60},   // blast
    {255, 140, 0},   // blight
    {160, 82, 45},   // bsp
    {218, 165, 32},  // nbs
    {30, 144, 255},  // streak
    {46, 139, 87},   {148, 0, 211}, {0, 139, 139},
};

PixelRect clip(PixelRect r, int w, int h) {
  r.x0 = std::clamp(r.x0, 0, w);
  r.x1 = std::clamp(r.x1, 0, w);
  r.y0 = std::clamp(r.y0, 0, h);
  r.y1 = std::clamp(r.y1, 0, h);
  return r;
}

void draw_text(Image& img, int x, int y, std::string_view text, Rgb color) {
  for (char c : text) {
    const std::uint8_t* cols = font::glyph(c);
    for (int col = 0; col < font::kGlyphWidth; ++col)
      for (int row = 0; row < font::kGlyphHeight; ++row)
        if (cols[col] >> row & 1) {
          const int px = x + col;
          const int py = y + row;
          if (img.contains(px, py)) img.set(px, py, color);
        }
    x += font::kAdvance;
  }
}

}  // namespace

std::string tag_text(const Detection& d) {
  char conf[16];
  std::snprintf(conf, sizeof conf, "%.2f", d.confidence());
  return d.cls().name + " " + conf;
}

Rgb class_color(const DiseaseClass& cls) {
  constexpr int n = sizeof kPalette / sizeof kPalette[0];
  return kPalette[((cls.id % n) + n) % n];
}

PixelRect outline_rect(const BoundingBox& box, int w, int h) {
  return clip({static_cast<int>(std::floor(box.x_min())),
               static_cast<int>(std::floor(box.y_min())),
               static_cast<int>(std::ceil(box.x_max())),
               static_cast<int>(std::ceil(box.y_max()))},
              w, h);
}

PixelRect tag_rect(const Detection& d, int w, int h) {
  const PixelRect box = outline_rect(d.box(), w, h);
  const int text_w =
      static_cast<int>(tag_text(d).size()) * font::kAdvance - 1;
  const int tw = text_w + 2 * kTagPad;
  const int th = font::kGlyphHeight + 2 * kTagPad;
  // Above the box when there is room, otherwise just inside its top edge.
  const int ty = box.y0 >= th ? box.y0 - th : box.y0;
  const int tx = std::clamp(box.x0, 0, std::max(0, w - tw));
  return clip({tx, ty, tx + tw, ty + th}, w, h);
}

Image annotate(const Image& img, const std::vector<Detection>& dets) {
  Image out = img;
  const int w = img.width();
  const int h = img.height();
  for (const auto& d : dets) {
    const PixelRect r = outline_rect(d.box(), w, h);
    const Rgb c = class_color(d.cls());
    const int t = kOutlineWidth;
    out.fill_rect(r.x0, r.y0, r.x1, std::min(r.y0 + t, r.y1), c);
    out.fill_rect(r.x0, std::max(r.y1 - t, r.y0), r.x1, r.y1, c);
    out.fill_rect(r.x0, r.y0, std::min(r.x0 + t, r.x1), r.y1, c);
    out.fill_rect(std::max(r.x1 - t, r.x0), r.y0, r.x1, r.y1, c);
  }
  // Tags after all outlines so a neighbouring box never paints over text.
  for (const auto& d : dets) {
    const PixelRect tr = tag_rect(d, w, h);
    if (tr.empty()) continue;
    const Rgb bg = class_color(d.cls());
    out.fill_rect(tr.x0, tr.y0, tr.x1, tr.y1, bg);
    const int luminance = (299 * bg.r + 587 * bg.g + 114 * bg.b) / 1000;
    const Rgb fg = luminance < 140 ? Rgb{255, 255, 255} : Rgb{0, 0, 0};
    // Draw into a scratch copy of the tag area so glyphs never leave it.
    Image scratch(tr.x1 - tr.x0, tr.y1 - tr.y0, bg);
    draw_text(scratch, kTagPad, kTagPad, tag_text(d), fg);
    for (int y = tr.y0; y < tr.y1; ++y)
      for (int x = tr.x0; x < tr.x1; ++x)
        out.set(x, y, scratch.at(x - tr.x0, y - tr.y0));
  }
  return out;
}

std::string render_annotation(std::string_view image_bytes,
                              const std::vector<Detection>& dets) {
  return encode_png(annotate(decode(image_bytes), dets));
}

SynthScene synth_image(const std::vector<SynthShape>& shapes, int w, int h,
                       Rgb background,
                       const std::vector<ColorClass>& color_classes,
                       const ClassRegistry& registry) {
  if (w <= 0 || h <= 0)
    throw InvalidArgument("synthetic image dimensions must be positive");
  Image img(w, h, background);
  SynthScene scene;
  for (const auto& s : shapes) {
    const PixelRect& r = s.rect;
    if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h)
      throw InvalidArgument("synthetic shape must lie inside the frame");
    if (s.color == background)
      throw InvalidArgument("synthetic shape colour equals the background");
    img.fill_rect(r.x0, r.y0, r.x1, r.y1, s.color);
    for (const auto& cc : color_classes)
      if (cc.color == s.color) {
        scene.ground_truth.push_back(
            {BoundingBox(r.x0, r.y0, r.x1, r.y1), registry.at(cc.class_name)});
        break;
      }
  }
  scene.png = encode_png(img);
  return scene;
}

}  // namespace ricebot::image
