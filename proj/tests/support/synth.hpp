#pragma once
// Deterministic synthetic grayscale images with photograph-like statistics:
// smooth shading, a few hard structures, and band-limited texture noise.
// Used as the desk corpus for tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lnl/common.hpp"
#include "lnl/image.hpp"

namespace lnl::testsupport {

inline double gaussian(Rng& rng) {
  const double u1 = std::max(rng.next_double(), 1e-12);
  const double u2 = rng.next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

struct SynthProfile {
  double texture_sigma = 9.0;  // std of the blurred noise component
  int structures = 3;          // hard-edged rectangles/disks
  double shading_amp = 30.0;   // low-frequency cosine shading
};

inline GrayImage synth_image(int width, int height, uint64_t seed,
                             const SynthProfile& profile = {}) {
  Rng rng(seed);
  std::vector<double> field(size_t(width) * height, 128.0);

  // Low-frequency shading.
  for (int k = 0; k < 3; ++k) {
    const double amp = profile.shading_amp * (0.4 + 0.6 * rng.next_double());
    const double fx = (0.3 + 1.2 * rng.next_double()) / width;
    const double fy = (0.3 + 1.2 * rng.next_double()) / height;
    const double phase = 6.283185307179586 * rng.next_double();
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        field[size_t(r) * width + c] +=
            amp * std::cos(6.283185307179586 * (fx * c + fy * r) + phase);
  }

  // Hard structures: rectangles and disks with a constant offset.
  for (int s = 0; s < profile.structures; ++s) {
    const double offset = (rng.next_double() - 0.5) * 90.0;
    const int cx = int(rng.next_below(uint64_t(width)));
    const int cy = int(rng.next_below(uint64_t(height)));
    const int rw = 4 + int(rng.next_below(uint64_t(std::max(width / 3, 5))));
    const int rh = 4 + int(rng.next_below(uint64_t(std::max(height / 3, 5))));
    const bool disk = rng.next_below(2) == 0;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        bool inside;
        if (disk) {
          const double dr = double(r - cy) / rh, dc = double(c - cx) / rw;
          inside = dr * dr + dc * dc <= 1.0;
        } else {
          inside = std::abs(r - cy) <= rh / 2 && std::abs(c - cx) <= rw / 2;
        }
        if (inside) field[size_t(r) * width + c] += offset;
      }
    }
  }

  // Band-limited texture: white noise through two [1 2 1]/4 passes per axis,
  // rescaled to the requested sigma.
  if (profile.texture_sigma > 0) {
    std::vector<double> noise(field.size());
    for (double& v : noise) v = gaussian(rng);
    std::vector<double> tmp(noise.size());
    for (int pass = 0; pass < 2; ++pass) {
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
          const int cl = std::max(c - 1, 0), cr = std::min(c + 1, width - 1);
          tmp[size_t(r) * width + c] =
              0.25 * noise[size_t(r) * width + cl] +
              0.5 * noise[size_t(r) * width + c] +
              0.25 * noise[size_t(r) * width + cr];
        }
      for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
          const int rl = std::max(r - 1, 0), rh2 = std::min(r + 1, height - 1);
          noise[size_t(r) * width + c] = 0.25 * tmp[size_t(rl) * width + c] +
                                         0.5 * tmp[size_t(r) * width + c] +
                                         0.25 * tmp[size_t(rh2) * width + c];
        }
    }
    double mean = 0;
    for (double v : noise) mean += v;
    mean /= double(noise.size());
    double var = 0;
    for (double v : noise) var += (v - mean) * (v - mean);
    var /= double(noise.size());
    const double scale = profile.texture_sigma / std::sqrt(std::max(var, 1e-9));
    for (size_t i = 0; i < field.size(); ++i)
      field[i] += (noise[i] - mean) * scale;
  }

  GrayImage img(width, height);
  for (size_t i = 0; i < field.size(); ++i) {
    const double v = std::round(field[i]);
    img.samples[i] = uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  return img;
}

// Uniformly random samples; stresses the codec rather than modeling images.
inline GrayImage random_image(int width, int height, uint64_t seed) {
  Rng rng(seed);
  GrayImage img(width, height);
  for (auto& s : img.samples) s = uint8_t(rng.next_below(256));
  return img;
}

}  // namespace lnl::testsupport
