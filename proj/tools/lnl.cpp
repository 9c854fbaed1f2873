// lnl - near-lossless image compression toolkit.
//
// Subcommands: encode, decode, train, eval, roundtrip, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 data/contract violation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lnl/codec.hpp"
#include "lnl/eval.hpp"
#include "lnl/gradcheck_suite.hpp"
#include "lnl/network.hpp"
#include "lnl/training.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_encode(const std::string& in, const std::string& out, int tau) {
  const lnl::GrayImage img = lnl::read_pgm(in);
  const auto t0 = std::chrono::steady_clock::now();
  const auto [stream, recon] = lnl::encode_image(img, tau);
  const auto t1 = std::chrono::steady_clock::now();
  lnl::write_stream(stream, out);
  const double ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::printf("bpp,%.4f,encode_ms,%.2f\n", lnl::bits_per_pixel(stream, img),
              ms);
  return 0;
}

int cmd_decode(const std::string& in, const std::string& out,
               const std::string& model_path) {
  const lnl::CodeStream stream = lnl::read_stream(in);
  lnl::GrayImage img = lnl::decode_image(stream);
  if (!model_path.empty() && stream.tau >= 1) {
    const lnl::Model model = lnl::load_weights(model_path);
    img = lnl::forward_refine(model, img, stream.tau);
  }
  lnl::write_pgm(img, out);
  return 0;
}

int cmd_eval(const std::string& data, const std::vector<int>& taus,
             const std::string& model_path, const std::string& csv) {
  lnl::Model model;
  const lnl::Model* model_ptr = nullptr;
  if (!model_path.empty()) {
    model = lnl::load_weights(model_path);
    model_ptr = &model;
  }
  lnl::rd_sweep(data, taus, model_ptr, csv);
  std::printf("wrote %s (%zu taus)\n", csv.c_str(), taus.size());
  return 0;
}

int cmd_roundtrip(const std::string& data, const std::vector<int>& taus) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(data))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path());
  if (files.empty()) {
    std::fprintf(stderr, "no .pgm images in %s\n", data.c_str());
    return 1;
  }
  std::sort(files.begin(), files.end());

  bool all_ok = true;
  for (const auto& file : files) {
    const lnl::GrayImage x = lnl::read_pgm(file);
    bool ok = true;
    for (int tau : taus) {
      const auto [stream, recon] = lnl::encode_image(x, tau);
      const lnl::GrayImage y = lnl::decode_image(stream);
      if (!(y == recon)) ok = false;
      if (lnl::linf_bound(x, y) > tau) ok = false;
      if (tau == 0 && !(y == x)) ok = false;
    }
    std::printf("%-40s %s\n", file.filename().string().c_str(),
                ok ? "PASS" : "FAIL");
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"near-lossless (l-infinity bounded) image compression toolkit"};
  app.require_subcommand(1);

  // encode
  auto* enc = app.add_subcommand("encode", "compress a PGM image");
  std::string enc_in, enc_out;
  int enc_tau = 0;
  enc->add_option("--in", enc_in, "input .pgm")->required();
  enc->add_option("--out", enc_out, "output .lnl stream")->required();
  enc->add_option("--tau", enc_tau, "error bound, 0..8")
      ->required()
      ->check(CLI::Range(0, 8));

  // decode
  auto* dec = app.add_subcommand("decode", "decompress a .lnl stream");
  std::string dec_in, dec_out, dec_model;
  dec->add_option("--in", dec_in, "input .lnl stream")->required();
  dec->add_option("--out", dec_out, "output .pgm")->required();
  dec->add_option("--model", dec_model,
                  "weights (.lnw); refines the decode when given");

  // train
  auto* tr = app.add_subcommand("train", "train the refinement network");
  std::string tr_data, tr_out, tr_resume;
  lnl::TrainConfig cfg;
  std::vector<int> tr_taus;
  tr->set_config("--config", "", "key=value config file");
  tr->add_option("--data", tr_data, "directory of .pgm images")->required();
  tr->add_option("--out", tr_out, "output weights (.lnw)")->required();
  tr->add_option("--taus", tr_taus, "bounds to train on (default 1..8)")
      ->delimiter(',');
  tr->add_option("--patch", cfg.patch, "patch size");
  tr->add_option("--stride", cfg.stride, "patch stride");
  tr->add_option("--batch", cfg.batch, "batch size");
  tr->add_option("--epochs-hi", cfg.epochs_hi, "epochs at lr-hi");
  tr->add_option("--epochs-lo", cfg.epochs_lo, "epochs at lr-lo");
  tr->add_option("--lr-hi", cfg.lr_hi, "initial learning rate");
  tr->add_option("--lr-lo", cfg.lr_lo, "final learning rate");
  tr->add_option("--lambda", cfg.lambda, "l-infinity loss weight");
  tr->add_option("--seed", cfg.seed, "RNG seed");
  tr->add_option("--base", cfg.base_channels, "base channel count");
  tr->add_option("--blocks", cfg.num_body_blocks, "body residual blocks");
  tr->add_option("--val-stride", cfg.val_stride,
                 "hold out every n-th sample for validation");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");

  // eval
  auto* ev = app.add_subcommand("eval", "rate-distortion sweep to CSV");
  std::string ev_data, ev_model, ev_csv;
  std::vector<int> ev_taus;
  ev->add_option("--data", ev_data, "directory of .pgm images")->required();
  ev->add_option("--taus", ev_taus, "bounds to sweep")
      ->required()
      ->delimiter(',');
  ev->add_option("--model", ev_model, "weights (.lnw) for the refined column");
  ev->add_option("--csv", ev_csv, "output CSV path")->required();

  // roundtrip
  auto* rt = app.add_subcommand("roundtrip",
                                "verify the codec bound on a directory");
  std::string rt_data;
  std::vector<int> rt_taus;
  rt->add_option("--data", rt_data, "directory of .pgm images")->required();
  rt->add_option("--taus", rt_taus, "bounds to check")
      ->required()
      ->delimiter(',');

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of all operators");
  bool gc_f64 = false;
  gc->add_flag("--f64", gc_f64, "run in double precision (tolerance 1e-6)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (enc->parsed()) return cmd_encode(enc_in, enc_out, enc_tau);
    if (dec->parsed()) return cmd_decode(dec_in, dec_out, dec_model);
    if (tr->parsed()) {
      if (!tr_taus.empty()) cfg.taus = tr_taus;
      lnl::train(tr_data, cfg, tr_out, &std::cout, tr_resume);
      return 0;
    }
    if (ev->parsed()) return cmd_eval(ev_data, ev_taus, ev_model, ev_csv);
    if (rt->parsed()) return cmd_roundtrip(rt_data, rt_taus);
    if (gc->parsed()) {
      const auto results = lnl::run_gradcheck_suite(gc_f64);
      bool ok = true;
      for (const auto& r : results) {
        std::printf("%-24s max_rel_err %.3e (tol %.1e, skipped %zu kinks) %s\n",
                    r.name.c_str(), r.report.max_rel_err, r.tolerance,
                    r.report.skipped_kinks,
                    r.report.ok(r.tolerance) ? "ok" : "FAIL");
        ok = ok && r.report.ok(r.tolerance);
      }
      return ok ? 0 : 2;
    }
  } catch (const lnl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
