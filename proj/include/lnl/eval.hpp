#pragma once
// Fidelity metrics and rate-distortion sweeps over a directory of images,
// emitted as CSV (tau, bpp, psnr_conv, linf_conv, psnr_refined,
// linf_refined).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lnl/image.hpp"
#include "lnl/network.hpp"

namespace lnl {

struct RDPoint {
  int tau = 0;
  double bpp = 0.0;
  double psnr_db = 0.0;
  int linf_bound = 0;
  enum class Decoder { conventional, refined } decoder = Decoder::conventional;

  bool operator==(const RDPoint&) const = default;
};

// 10*log10(255^2 / MSE) over integer samples; +inf for identical images.
double psnr(const GrayImage& a, const GrayImage& b);

// max over pixels of |a_i - b_i|.
int linf_bound(const GrayImage& a, const GrayImage& b);

// Per tau: encode every image, aggregate mean bpp, pooled-MSE PSNR and
// max linf for the conventional decode, plus the refined decode when a
// model is given (at tau 0 refinement is the identity, so the refined
// entry mirrors the conventional one). Values are snapped to the CSV's
// 4-decimal grid so that re-parsing the file reproduces them exactly.
std::vector<RDPoint> rd_sweep(const std::filesystem::path& data_dir,
                              const std::vector<int>& taus, const Model* model,
                              const std::filesystem::path& csv_out);

std::string rd_csv(const std::vector<RDPoint>& points, bool with_refined);
std::vector<RDPoint> parse_rd_csv(const std::string& text);

}  // namespace lnl
