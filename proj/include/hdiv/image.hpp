// SPDX-License-Identifier: Apache-2.0
//
// 8-bit image IO (PNG via libpng, PGM natively) decoded to planar CHW floats
// in [0,1], plus the ImageBuffer <-> Tensor bridges used at the model edge.
#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hdiv/tensor.hpp"

namespace hdiv {

struct ImageBuffer {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;          // 1 (gray) or 3 (RGB)
  std::vector<float> data;       // planar CHW

  float& at(int64_t c, int64_t y, int64_t x) { return data[(c * height + y) * width + x]; }
  const float& at(int64_t c, int64_t y, int64_t x) const {
    return data[(c * height + y) * width + x];
  }
  int64_t numel() const { return channels * height * width; }

  static ImageBuffer make(int64_t channels, int64_t height, int64_t width, float fill = 0.f) {
    if (channels != 1 && channels != 3) throw DataError("images must have 1 or 3 channels");
    if (height < 1 || width < 1) throw DataError("image dimensions must be positive");
    ImageBuffer img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.data.assign(static_cast<size_t>(channels * height * width), fill);
    return img;
  }
};

namespace detail {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

inline ImageBuffer load_png(const std::string& path) {
  PngReadCloser ctx;
  ctx.fp = std::fopen(path.c_str(), "rb");
  if (!ctx.fp) throw DataError("cannot open image: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError("not a PNG file: " + path);
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw DataError("libpng init failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("libpng init failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw DataError("corrupt PNG: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  // Normalize everything to 8-bit gray or RGB.
  png_set_strip_16(ctx.png);
  png_set_packing(ctx.png);
  if (png_get_color_type(ctx.png, ctx.info) == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(ctx.png);
  if (png_get_color_type(ctx.png, ctx.info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(ctx.png, ctx.info) < 8)
    png_set_expand_gray_1_2_4_to_8(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const int64_t h = png_get_image_height(ctx.png, ctx.info);
  const int64_t w = png_get_image_width(ctx.png, ctx.info);
  const int64_t c = png_get_channels(ctx.png, ctx.info);
  if (c != 1 && c != 3) throw DataError("unsupported channel count in " + path);

  std::vector<unsigned char> raw(static_cast<size_t>(h * w * c));
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) rows[y] = raw.data() + y * w * c;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  auto img = ImageBuffer::make(c, h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch)
        img.at(ch, y, x) = static_cast<float>(raw[(y * w + x) * c + ch]) / 255.0f;
  return img;
}

inline ImageBuffer load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw DataError("unsupported PGM magic in " + path);
  auto next_int = [&in, &path]() {
    // Skip whitespace and '#' comment lines between header tokens.
    while (true) {
      const int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    int64_t v = -1;
    in >> v;
    if (!in || v < 0) throw DataError("corrupt PGM header in " + path);
    return v;
  };
  const int64_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval <= 0 || maxval > 255) throw DataError("only 8-bit PGM is supported: " + path);
  auto img = ImageBuffer::make(1, h, w);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(h * w));
    in.read(reinterpret_cast<char*>(raw.data()), raw.size());
    if (!in) throw DataError("truncated PGM data in " + path);
    for (int64_t i = 0; i < h * w; ++i)
      img.data[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  } else {
    for (int64_t i = 0; i < h * w; ++i)
      img.data[i] = static_cast<float>(next_int()) / static_cast<float>(maxval);
  }
  return img;
}

}  // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline ImageBuffer load_image(const std::string& path) {
  if (has_suffix(path, ".pgm")) return detail::load_pgm(path);
  return detail::load_png(path);
}

// Clamp to [0,1], quantize to 8 bits, write PNG. Fixed settings keep outputs
// byte-reproducible.
inline void save_png(const std::string& path, const ImageBuffer& img) {
  detail::PngWriteCloser ctx;
  ctx.fp = std::fopen(path.c_str(), "wb");
  if (!ctx.fp) throw DataError("cannot write image: " + path);
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw DataError("libpng init failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("libpng init failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw DataError("PNG write failed: " + path);
  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(ctx.png, 6);
  png_write_info(ctx.png, ctx.info);

  std::vector<unsigned char> row(static_cast<size_t>(img.width * img.channels));
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x)
      for (int64_t c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[x * img.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    png_write_row(ctx.png, row.data());
  }
  png_write_end(ctx.png, nullptr);
}

// Largest centered window whose sides are multiples of `divisor`.
inline ImageBuffer center_crop_to_multiple(const ImageBuffer& img, int64_t divisor) {
  const int64_t h = (img.height / divisor) * divisor;
  const int64_t w = (img.width / divisor) * divisor;
  if (h < divisor || w < divisor)
    throw DataError("image smaller than one " + std::to_string(divisor) + "-pixel tile");
  if (h == img.height && w == img.width) return img;
  const int64_t y0 = (img.height - h) / 2, x0 = (img.width - w) / 2;
  auto out = ImageBuffer::make(img.channels, h, w);
  for (int64_t c = 0; c < img.channels; ++c)
    for (int64_t y = 0; y < h; ++y)
      std::memcpy(&out.at(c, y, 0), &img.at(c, y0 + y, x0), static_cast<size_t>(w) * sizeof(float));
  return out;
}

template <class S>
Tensor<S> image_to_tensor(const ImageBuffer& img) {
  std::vector<S> data(img.data.begin(), img.data.end());
  return Tensor<S>::from_data({1, img.channels, img.height, img.width}, std::move(data));
}

// Stack equally-shaped images into one [N, C, H, W] batch.
template <class S>
Tensor<S> images_to_batch(const std::vector<ImageBuffer>& imgs) {
  if (imgs.empty()) throw DataError("empty batch");
  const auto& first = imgs.front();
  std::vector<S> data;
  data.reserve(static_cast<size_t>(first.numel()) * imgs.size());
  for (const auto& img : imgs) {
    if (img.channels != first.channels || img.height != first.height ||
        img.width != first.width)
      throw DataError("batch images disagree on shape");
    data.insert(data.end(), img.data.begin(), img.data.end());
  }
  return Tensor<S>::from_data(
      {static_cast<int64_t>(imgs.size()), first.channels, first.height, first.width},
      std::move(data));
}

template <class S>
ImageBuffer tensor_to_image(const Tensor<S>& t, int64_t batch_index = 0) {
  if (t.rank() != 4) throw ShapeError("tensor_to_image: expected NCHW tensor");
  const int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  auto img = ImageBuffer::make(c, h, w);
  const S* src = t.values().data() + batch_index * c * h * w;
  for (int64_t i = 0; i < c * h * w; ++i) img.data[i] = static_cast<float>(src[i]);
  return img;
}

}  // namespace hdiv
