#include "lnl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "lnl/codec.hpp"

namespace lnl {

namespace {

namespace fs = std::filesystem;

double mse_int(const GrayImage& a, const GrayImage& b) {
  double sum = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    const double d = double(a.samples[i]) - double(b.samples[i]);
    sum += d * d;
  }
  return sum / double(a.samples.size());
}

// Formats with 4 decimals and re-parses, so the stored double is exactly
// what a CSV reader will see.
double snap4(double v) {
  if (std::isinf(v)) return v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return std::strtod(buf, nullptr);
}

std::string format4(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::vector<fs::path> list_pgms(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir))
    throw IoError("eval: " + dir.string() + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path());
  if (files.empty()) throw Error("eval: no .pgm images in " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  return files;
}

}  // namespace

double psnr(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("psnr: image dimensions differ");
  const double mse = mse_int(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

int linf_bound(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("linf_bound: image dimensions differ");
  int worst = 0;
  for (size_t i = 0; i < a.samples.size(); ++i)
    worst = std::max(worst, std::abs(int(a.samples[i]) - int(b.samples[i])));
  return worst;
}

std::vector<RDPoint> rd_sweep(const fs::path& data_dir,
                              const std::vector<int>& taus, const Model* model,
                              const fs::path& csv_out) {
  const auto files = list_pgms(data_dir);
  std::vector<GrayImage> originals(files.size());
  parallel_for(files.size(), [&](size_t i) { originals[i] = read_pgm(files[i]); });

  std::vector<RDPoint> points;
  for (int tau : taus) {
    struct PerImage {
      double bpp = 0.0;
      double sq_conv = 0.0, sq_ref = 0.0;
      int linf_conv = 0, linf_ref = 0;
      size_t pixels = 0;
    };
    std::vector<PerImage> rows(originals.size());

    parallel_for(originals.size(), [&](size_t i) {
      const GrayImage& x = originals[i];
      const auto [stream, y] = encode_image(x, tau);
      PerImage& row = rows[i];
      row.pixels = x.samples.size();
      row.bpp = bits_per_pixel(stream, x);
      row.sq_conv = mse_int(x, y) * double(row.pixels);
      row.linf_conv = linf_bound(x, y);
      if (model) {
        const GrayImage refined = tau >= 1 ? forward_refine(*model, y, tau) : y;
        row.sq_ref = mse_int(x, refined) * double(row.pixels);
        row.linf_ref = linf_bound(x, refined);
      }
    });

    double bpp_sum = 0.0, sq_conv = 0.0, sq_ref = 0.0;
    size_t pixels = 0;
    int linf_conv = 0, linf_ref = 0;
    for (const PerImage& row : rows) {
      bpp_sum += row.bpp;
      sq_conv += row.sq_conv;
      sq_ref += row.sq_ref;
      pixels += row.pixels;
      linf_conv = std::max(linf_conv, row.linf_conv);
      linf_ref = std::max(linf_ref, row.linf_ref);
    }
    const double mse_conv = sq_conv / double(pixels);
    const double psnr_conv =
        mse_conv == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(255.0 * 255.0 / mse_conv);

    RDPoint conv;
    conv.tau = tau;
    conv.bpp = snap4(bpp_sum / double(rows.size()));
    conv.psnr_db = snap4(psnr_conv);
    conv.linf_bound = linf_conv;
    conv.decoder = RDPoint::Decoder::conventional;
    points.push_back(conv);

    if (model) {
      const double mse_ref = sq_ref / double(pixels);
      RDPoint ref = conv;
      ref.psnr_db = snap4(mse_ref == 0.0
                              ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(255.0 * 255.0 / mse_ref));
      ref.linf_bound = linf_ref;
      ref.decoder = RDPoint::Decoder::refined;
      points.push_back(ref);
    }
  }

  if (!csv_out.empty()) {
    std::ofstream out(csv_out, std::ios::trunc);
    if (!out) throw IoError("cannot open " + csv_out.string() + " for writing");
    out << rd_csv(points, model != nullptr);
    if (!out) throw IoError("write failed: " + csv_out.string());
  }
  return points;
}

std::string rd_csv(const std::vector<RDPoint>& points, bool with_refined) {
  std::ostringstream out;
  out << "tau,bpp,psnr_conv,linf_conv,psnr_refined,linf_refined\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const RDPoint& conv = points[i];
    if (conv.decoder != RDPoint::Decoder::conventional) continue;
    out << conv.tau << "," << format4(conv.bpp) << "," << format4(conv.psnr_db)
        << "," << conv.linf_bound;
    if (with_refined && i + 1 < points.size() &&
        points[i + 1].decoder == RDPoint::Decoder::refined) {
      const RDPoint& ref = points[i + 1];
      out << "," << format4(ref.psnr_db) << "," << ref.linf_bound;
    } else {
      out << ",,";
    }
    out << "\n";
  }
  return out.str();
}

std::vector<RDPoint> parse_rd_csv(const std::string& text) {
  std::vector<RDPoint> points;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("rd csv: empty file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    while (cells.size() < 6) cells.emplace_back();
    if (cells.size() != 6) throw ParseError("rd csv: bad column count");

    auto num = [](const std::string& s) {
      return s == "inf" ? std::numeric_limits<double>::infinity()
                        : std::strtod(s.c_str(), nullptr);
    };
    RDPoint conv;
    conv.tau = std::atoi(cells[0].c_str());
    conv.bpp = num(cells[1]);
    conv.psnr_db = num(cells[2]);
    conv.linf_bound = std::atoi(cells[3].c_str());
    conv.decoder = RDPoint::Decoder::conventional;
    points.push_back(conv);
    if (!cells[4].empty()) {
      RDPoint ref = conv;
      ref.psnr_db = num(cells[4]);
      ref.linf_bound = std::atoi(cells[5].c_str());
      ref.decoder = RDPoint::Decoder::refined;
      points.push_back(ref);
    }
  }
  return points;
}

}  // namespace lnl
