#pragma once
// 8-bit grayscale raster, binary PGM (P5) I/O, patch extraction and the
// [0,255] <-> [0,1] tensor conversions.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lnl/tensor.hpp"

namespace lnl {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> samples;  // row-major, width * height entries

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), samples(size_t(w) * h, 0) {}
  GrayImage(int w, int h, std::vector<uint8_t> s)
      : width(w), height(h), samples(std::move(s)) {}

  uint8_t& at(int row, int col) {
    return samples[static_cast<size_t>(row) * width + col];
  }
  uint8_t at(int row, int col) const {
    return samples[static_cast<size_t>(row) * width + col];
  }

  bool operator==(const GrayImage&) const = default;
};

// Binary PGM ("P5"), maxval 255 only. Throws ParseError on anything else.
GrayImage read_pgm(const std::filesystem::path& path);
GrayImage parse_pgm(const std::vector<uint8_t>& bytes);

// Canonical header: "P5\n<w> <h>\n255\n" followed by the raw samples.
void write_pgm(const GrayImage& img, const std::filesystem::path& path);
std::vector<uint8_t> serialize_pgm(const GrayImage& img);

// All size x size windows whose top-left corner is (r*stride, c*stride) and
// which fit entirely inside the image, in row-major order of origins.
// size larger than a dimension yields an empty list.
std::vector<GrayImage> extract_patches(const GrayImage& img, int size,
                                       int stride);

// (1,1,H,W) tensor with values sample / 255.
Tensor to_normalized(const GrayImage& img);

// round(clamp(v,0,1) * 255), ties away from zero. Requires shape (1,1,H,W).
GrayImage from_normalized(const Tensor& t);

}  // namespace lnl
