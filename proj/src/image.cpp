#include "ricebot/image.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include <jpeglib.h>
#include <openssl/evp.h>
#include <png.h>

namespace ricebot::image {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0)
    throw InvalidArgument("image dimensions must be non-negative");
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, width_);
  y1 = std::min(y1, height_);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) set(x, y, c);
}

std::string sniff_content_type(std::string_view bytes) {
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0)
    return "image/png";
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xff &&
      static_cast<unsigned char>(bytes[1]) == 0xd8 &&
      static_cast<unsigned char>(bytes[2]) == 0xff)
    return "image/jpeg";
  return "";
}

namespace {

constexpr int kMaxSide = 1 << 14;

// --- PNG ---------------------------------------------------------------

struct PngReadState {
  std::string_view bytes;
  std::size_t offset = 0;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + n > st->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, st->bytes.data() + st->offset, n);
  st->offset += n;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// libpng and libjpeg report errors through longjmp. The functions that call
// setjmp keep only plain locals; all C++ objects live in a DecodeOut owned by
// the caller, so nothing is left in an indeterminate state after a jump.
struct DecodeOut {
  int width = 0;
  int height = 0;
  Image img;
  std::vector<std::uint8_t*> rows;
  std::string err;
};

bool png_decode_into(const PngReadState* in, bool header_only, DecodeOut* out) {
  PngReadState state = *in;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &out->err,
                                           png_error_fn, png_warning_fn);
  if (!png) {
    out->err = "libpng initialisation failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &state, png_read_fn);
  png_read_info(png, info);
  out->width = static_cast<int>(png_get_image_width(png, info));
  out->height = static_cast<int>(png_get_image_height(png, info));
  if (out->width <= 0 || out->height <= 0 || out->width > kMaxSide ||
      out->height > kMaxSide)
    png_error(png, "PNG dimensions out of range");
  if (!header_only) {
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(out->width) * 3)
      png_error(png, "unsupported PNG pixel layout");
    out->img = Image(out->width, out->height);
    out->rows.resize(out->height);
    for (int y = 0; y < out->height; ++y)
      out->rows[y] =
          out->img.data().data() + static_cast<std::size_t>(y) * out->width * 3;
    png_read_image(png, out->rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

void png_write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_fn(png_structp) {}

struct EncodeOut {
  std::string bytes;
  std::string err;
  std::vector<png_bytep> rows;
};

bool png_encode_into(const Image* img, EncodeOut* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &out->err,
                                            png_error_fn, png_warning_fn);
  if (!png) {
    out->err = "libpng initialisation failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out->bytes, png_write_fn, png_flush_fn);
  png_set_IHDR(png, info, img->width(), img->height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, out->rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

// --- JPEG --------------------------------------------------------------

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr) {}

bool jpeg_decode_into(const std::string_view* bytes, bool header_only,
                      DecodeOut* out) {
  jpeg_decompress_struct cinfo;
  JpegError jerr;
  cinfo.err = jpeg_std_error(&jerr.mgr);
  jerr.mgr.error_exit = jpeg_error_exit;
  jerr.mgr.output_message = jpeg_silent;
  std::strcpy(jerr.message, "invalid JPEG");
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    if (out->err.empty()) out->err = jerr.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes->data()),
               static_cast<unsigned long>(bytes->size()));
  jpeg_read_header(&cinfo, TRUE);
  out->width = static_cast<int>(cinfo.image_width);
  out->height = static_cast<int>(cinfo.image_height);
  if (out->width <= 0 || out->height <= 0 || out->width > kMaxSide ||
      out->height > kMaxSide) {
    out->err = "JPEG dimensions out of range";
    std::longjmp(jerr.jump, 1);
  }
  if (!header_only) {
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out->img = Image(static_cast<int>(cinfo.output_width),
                     static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = out->img.data().data() +
                     static_cast<std::size_t>(cinfo.output_scanline) *
                         cinfo.output_width * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  }
  jpeg_destroy_decompress(&cinfo);
  return true;
}

DecodeOut decode_any(std::string_view bytes, bool header_only) {
  const std::string type = sniff_content_type(bytes);
  DecodeOut out;
  bool ok = false;
  if (type == "image/png") {
    out.err = "invalid PNG";
    PngReadState in{bytes, 0};
    ok = png_decode_into(&in, header_only, &out);
  } else if (type == "image/jpeg") {
    ok = jpeg_decode_into(&bytes, header_only, &out);
  } else {
    throw DecodeError("unrecognised image format");
  }
  if (!ok) throw DecodeError(out.err);
  return out;
}

}  // namespace

Image decode(std::string_view bytes) {
  return std::move(decode_any(bytes, false).img);
}

std::pair<int, int> probe_dimensions(std::string_view bytes) {
  const DecodeOut out = decode_any(bytes, true);
  return {out.width, out.height};
}

std::string encode_png(const Image& img) {
  if (img.empty()) throw InvalidArgument("cannot encode an empty image");
  EncodeOut out;
  out.rows.resize(img.height());
  auto* base = const_cast<std::uint8_t*>(img.data().data());
  for (int y = 0; y < img.height(); ++y)
    out.rows[y] = base + static_cast<std::size_t>(y) * img.width() * 3;
  if (!png_encode_into(&img, &out))
    throw Error("PNG encoding failed: " + out.err);
  return std::move(out.bytes);
}

std::string content_hash(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1)
    throw Error("SHA-256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

Image downscale(const Image& img, int max_side) {
  if (max_side <= 0) throw InvalidArgument("max_side must be positive");
  const int longest = std::max(img.width(), img.height());
  if (longest <= max_side) return img;
  const double scale = double(max_side) / longest;
  const int w = std::max(1, static_cast<int>(img.width() * scale + 0.5));
  const int h = std::max(1, static_cast<int>(img.height() * scale + 0.5));
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy0 = y * img.height() / h;
    const int sy1 = std::max(sy0 + 1, (y + 1) * img.height() / h);
    for (int x = 0; x < w; ++x) {
      const int sx0 = x * img.width() / w;
      const int sx1 = std::max(sx0 + 1, (x + 1) * img.width() / w);
      unsigned long r = 0, g = 0, b = 0, n = 0;
      for (int sy = sy0; sy < sy1; ++sy)
        for (int sx = sx0; sx < sx1; ++sx) {
          const Rgb c = img.at(sx, sy);
          r += c.r;
          g += c.g;
          b += c.b;
          ++n;
        }
      out.set(x, y,
              {static_cast<std::uint8_t>(r / n), static_cast<std::uint8_t>(g / n),
               static_cast<std::uint8_t>(b / n)});
    }
  }
  return out;
}

}  // namespace ricebot::image
