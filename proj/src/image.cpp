#include "perseg/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "perseg/common.hpp"

namespace perseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("failed to decode " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path.string() + ": unsupported channel count " + std::to_string(channels));
  }

  ImageU8 img;
  img.w = static_cast<int>(w);
  img.h = static_cast<int>(h);
  img.ch = channels;
  img.v.resize(static_cast<std::size_t>(w) * h * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.v.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  check(img.ch == 1 || img.ch == 3, "write_png: channels must be 1 or 3");
  check(img.w > 0 && img.h > 0, "write_png: empty image");
  check(img.v.size() == static_cast<std::size_t>(img.w) * img.h * img.ch,
        "write_png: buffer size mismatch");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("failed to encode " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               img.ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<std::size_t>(y)] =
        img.v.data() + static_cast<std::size_t>(y) * img.w * img.ch;
  png_write_rows(png, const_cast<png_bytepp>(rows.data()), static_cast<png_uint_32>(img.h));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Mask read_mask_png(const std::filesystem::path& path) {
  ImageU8 img = read_png(path);
  check(img.ch == 1, path.string() + ": mask must be single-channel");
  Mask m;
  m.h = img.h;
  m.w = img.w;
  m.v = std::move(img.v);
  return m;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  ImageU8 img;
  img.w = mask.w;
  img.h = mask.h;
  img.ch = 1;
  img.v = mask.v;
  write_png(path, img);
}

Tensor<float> image_to_tensor(const ImageU8& img) {
  check(img.ch == 3, "image_to_tensor: expected 3-channel image");
  Tensor<float> t({3, img.h, img.w});
  std::int64_t hw = static_cast<std::int64_t>(img.h) * img.w;
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c)
      t.at(c * hw + i) = static_cast<float>(img.v[static_cast<std::size_t>(i * 3 + c)]) / 255.0f;
  return t;
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
  check(t.rank() == 3 && t.dim(0) == 3, "tensor_to_image: expected [3,H,W]");
  ImageU8 img;
  img.h = static_cast<int>(t.dim(1));
  img.w = static_cast<int>(t.dim(2));
  img.ch = 3;
  std::int64_t hw = t.dim(1) * t.dim(2);
  img.v.resize(static_cast<std::size_t>(hw) * 3);
  for (std::int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      float x = t.at(c * hw + i);
      x = std::min(1.0f, std::max(0.0f, x));
      img.v[static_cast<std::size_t>(i * 3 + c)] =
          static_cast<std::uint8_t>(std::lround(x * 255.0f));
    }
  return img;
}

}  // namespace perseg
