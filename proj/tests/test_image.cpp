#include <cstdio>
#include <random>

#include <doctest.h>
#include <jpeglib.h>

#include "helpers.hpp"
#include "ricebot/annotate.hpp"
#include "ricebot/detector.hpp"

using namespace ricebot;
using namespace ricebot::image;

namespace {

// Baseline JPEG encoder, only for feeding the decoder.
std::string encode_jpeg(const Image& img, int quality = 95) {
  jpeg_compress_struct c{};
  jpeg_error_mgr err{};
  c.err = jpeg_std_error(&err);
  jpeg_create_compress(&c);
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&c, &buf, &size);
  c.image_width = img.width();
  c.image_height = img.height();
  c.input_components = 3;
  c.in_color_space = JCS_RGB;
  jpeg_set_defaults(&c);
  jpeg_set_quality(&c, quality, TRUE);
  jpeg_start_compress(&c, TRUE);
  while (c.next_scanline < c.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.data().data() + c.next_scanline * img.width() * 3);
    jpeg_write_scanlines(&c, &row, 1);
  }
  jpeg_finish_compress(&c);
  std::string out(reinterpret_cast<char*>(buf), size);
  jpeg_destroy_compress(&c);
  std::free(buf);
  return out;
}

Image noise(int w, int h, unsigned seed) {
  std::mt19937 rng(seed);
  Image img(w, h);
  for (auto& b : img.data()) b = static_cast<std::uint8_t>(rng());
  return img;
}

bool in_ring(const PixelRect& r, int x, int y) {
  if (!r.contains(x, y)) return false;
  return x < r.x0 + kOutlineWidth || x >= r.x1 - kOutlineWidth || y < r.y0 + kOutlineWidth ||
         y >= r.y1 - kOutlineWidth;
}

}  // namespace

TEST_CASE("png round trip and determinism") {
  const Image img = noise(37, 23, 1);
  const std::string png = encode_png(img);
  CHECK(sniff_content_type(png) == "image/png");
  CHECK(decode(png) == img);
  CHECK(encode_png(decode(png)) == png);
  CHECK(probe_dimensions(png) == std::pair{37, 23});
}

TEST_CASE("jpeg decode") {
  const Image img(64, 48, Rgb{200, 40, 40});
  const std::string jpg = encode_jpeg(img);
  CHECK(sniff_content_type(jpg) == "image/jpeg");
  CHECK(probe_dimensions(jpg) == std::pair{64, 48});
  const Image back = decode(jpg);
  REQUIRE(back.width() == 64);
  REQUIRE(back.height() == 48);
  // Lossy, but a flat colour survives closely.
  const Rgb p = back.at(30, 20);
  CHECK(std::abs(p.r - 200) <= 3);
  CHECK(std::abs(p.g - 40) <= 3);
  CHECK(std::abs(p.b - 40) <= 3);
}

TEST_CASE("undecodable bytes") {
  CHECK(sniff_content_type("GIF89a....") == "");
  CHECK_THROWS_AS(decode("not an image"), DecodeError);
  CHECK_THROWS_AS(probe_dimensions(""), DecodeError);
  const std::string png = encode_png(noise(20, 20, 2));
  CHECK_THROWS_AS(decode(png.substr(0, png.size() / 2)), DecodeError);
  const std::string jpg = encode_jpeg(noise(20, 20, 3));
  CHECK_THROWS_AS(decode(jpg.substr(0, 40)), DecodeError);
}

TEST_CASE("content hash") {
  CHECK(content_hash("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(content_hash("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("downscale keeps aspect ratio") {
  const Image wide(1000, 500, Rgb{10, 20, 30});
  const Image s = downscale(wide, 240);
  CHECK(s.width() == 240);
  CHECK(s.height() == 120);
  CHECK(s.at(100, 60) == Rgb{10, 20, 30});
  const Image tall = downscale(Image(300, 900), 240);
  CHECK(tall.height() == 240);
  CHECK(tall.width() == 80);
  const Image odd = downscale(Image(641, 479), 240);
  CHECK(odd.width() == 240);
  CHECK(std::abs(odd.height() - 479.0 * 240 / 641) <= 1.0);
  const Image small = noise(100, 50, 4);
  CHECK(downscale(small, 240) == small);
}

TEST_CASE("annotation touches only outlines and tags") {
  ClassRegistry reg;
  const Image base = noise(200, 150, 5);
  const std::vector<Detection> dets{
      Detection(BoundingBox(20.4, 40.6, 90.2, 120.9), reg.at("blast"), 0.87),
      Detection(BoundingBox(110, 2, 199.5, 60), reg.at("streak"), 0.41),
      Detection(BoundingBox(60, 70, 150, 149), reg.at("bsp"), 0.66)};
  const Image out = annotate(base, dets);
  std::vector<PixelRect> rings, tags;
  for (const auto& d : dets) {
    rings.push_back(outline_rect(d.box(), 200, 150));
    tags.push_back(tag_rect(d, 200, 150));
  }
  int changed = 0;
  for (int y = 0; y < 150; ++y)
    for (int x = 0; x < 200; ++x) {
      bool in_tag = false;
      for (const auto& t : tags) in_tag = in_tag || t.contains(x, y);
      bool ringed = false;
      for (const auto& r : rings) ringed = ringed || in_ring(r, x, y);
      if (!in_tag && !ringed) {
        if (!(out.at(x, y) == base.at(x, y))) ++changed;
      } else if (!in_tag) {
        // Some outline's colour must be there.
        bool ok = false;
        for (std::size_t i = 0; i < dets.size(); ++i)
          ok = ok || (in_ring(rings[i], x, y) && out.at(x, y) == class_color(dets[i].cls()));
        CHECK(ok);
      }
    }
  CHECK(changed == 0);
  // Tags carry the text colour somewhere inside.
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& t = tags[i];
    CHECK_FALSE(t.empty());
    const Rgb bg = class_color(dets[i].cls());
    int fg = 0;
    for (int y = t.y0; y < t.y1; ++y)
      for (int x = t.x0; x < t.x1; ++x) fg += !(out.at(x, y) == bg);
    CHECK(fg > 0);
  }
  CHECK(tag_text(dets[0]) == "blast 0.87");
  CHECK(annotate(base, {}) == base);
}

TEST_CASE("render annotation through bytes") {
  ClassRegistry reg;
  const Image base(80, 60, Rgb{255, 255, 255});
  const std::vector<Detection> dets{Detection(BoundingBox(10, 20, 50, 55), reg.at("nbs"), 0.5)};
  const std::string png = render_annotation(encode_png(base), dets);
  CHECK(decode(png) == annotate(base, dets));
  CHECK(decode(render_annotation(encode_jpeg(base), dets)).width() == 80);
  CHECK_THROWS_AS(render_annotation("junk", dets), DecodeError);
}

TEST_CASE("synthetic scenes") {
  const auto map = detector::default_color_map();
  const Rgb white{255, 255, 255};
  const auto s = synth_image({{{10, 10, 40, 30}, map[0].color}, {{50, 50, 70, 80}, Rgb{40, 160, 40}}},
                             100, 100, white, map);
  REQUIRE(s.ground_truth.size() == 1);
  CHECK(s.ground_truth[0].cls.name == map[0].class_name);
  CHECK(s.ground_truth[0].box.x_max() == 40);
  const Image img = decode(s.png);
  CHECK(img.at(10, 10) == map[0].color);
  CHECK(img.at(40, 30) == white);
  CHECK(img.at(60, 60) == Rgb{40, 160, 40});
  CHECK_THROWS_AS(synth_image({{{90, 90, 110, 95}, map[0].color}}, 100, 100, white, map),
                  InvalidArgument);
  CHECK_THROWS_AS(synth_image({{{1, 1, 5, 5}, white}}, 100, 100, white, map), InvalidArgument);
  CHECK_THROWS_AS(synth_image({}, 0, 10, white, map), InvalidArgument);
  CHECK(synth_image({}, 10, 10, white, map).ground_truth.empty());
}
