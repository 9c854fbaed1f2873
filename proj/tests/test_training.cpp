#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lnl/codec.hpp"
#include "lnl/eval.hpp"
#include "lnl/training.hpp"
#include "support/synth.hpp"
#include "support/tempdir.hpp"

using namespace lnl;
using testsupport::synth_image;
using testsupport::SynthProfile;
using testsupport::TempDir;

namespace {

// Small smooth-ish corpus that trains in seconds.
void write_corpus(const std::filesystem::path& dir, int count, int size,
                  uint64_t seed0) {
  SynthProfile profile;
  profile.texture_sigma = 3.0;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%02d.pgm", i);
    write_pgm(synth_image(size, size, seed0 + uint64_t(i), profile),
              dir / name);
  }
}

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.taus = {2, 5};
  cfg.patch = 32;
  cfg.stride = 32;
  cfg.batch = 4;
  cfg.epochs_hi = 2;
  cfg.epochs_lo = 1;
  cfg.base_channels = 4;
  cfg.num_body_blocks = 1;
  cfg.seed = 77;
  cfg.val_stride = 5;
  return cfg;
}

bool same_file_bytes(const std::filesystem::path& a,
                     const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  return !ba.empty() && ba == bb;
}

}  // namespace

TEST_CASE("build_dataset pairs, ordering and bound") {
  TempDir dir("lnl_ds");
  write_pgm(synth_image(128, 128, 1), dir.file("a.pgm"));

  TrainConfig cfg;
  cfg.patch = 64;
  cfg.stride = 64;
  const auto pairs = build_dataset(dir.path, cfg);
  CHECK(pairs.size() == 4 * 8);  // 4 patches x 8 taus

  // tau-inner ordering: first 4 pairs all tau=1, next 4 tau=2, ...
  for (size_t i = 0; i < pairs.size(); ++i)
    CHECK(pairs[i].tau == int(i / 4) + 1);

  for (const auto& pair : pairs) {
    CHECK(pair.x_patch.width == 64);
    CHECK(pair.y_patch.width == 64);
    CHECK(linf_bound(pair.x_patch, pair.y_patch) <= pair.tau);
  }
}

TEST_CASE("build_dataset error paths") {
  TempDir dir("lnl_ds_err");
  TrainConfig cfg;
  CHECK_THROWS_AS(build_dataset(dir.path, cfg), Error);  // empty dir
  CHECK_THROWS_AS(build_dataset(dir.path / "missing", cfg), IoError);

  write_pgm(synth_image(64, 64, 3), dir.file("a.pgm"));
  TrainConfig odd = cfg;
  odd.patch = 33;
  CHECK_THROWS_AS(build_dataset(dir.path, odd), Error);
  TrainConfig bad_tau = cfg;
  bad_tau.taus = {0};
  CHECK_THROWS_AS(build_dataset(dir.path, bad_tau), Error);

  // unreadable file aborts rather than skipping
  std::ofstream(dir.file("broken.pgm")) << "P5\n9 9\n255\n";
  CHECK_THROWS_AS(build_dataset(dir.path, cfg), ParseError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Model model = build_model({4, 1, 2, 3}, 5);
  AdamState state = make_adam_state(model);
  const auto before = model.params;
  const auto grads = make_param_grads(model.params);  // zeros
  TrainConfig cfg;
  adam_step(model.params, grads, state, 1e-3f, cfg);
  CHECK(model.params == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step moves by about -lr * sign(g)") {
  Model model = build_model({4, 1, 2, 3}, 6);
  AdamState state = make_adam_state(model);
  auto grads = make_param_grads(model.params);
  grads[0].weights.data[0] = 0.37f;   // arbitrary magnitudes
  grads[0].weights.data[1] = -2.1f;
  const float w0 = model.params[0].weights.data[0];
  const float w1 = model.params[0].weights.data[1];
  TrainConfig cfg;
  const float lr = 1e-3f;
  adam_step(model.params, grads, state, lr, cfg);
  // m_hat = g, v_hat = g^2 -> delta ~ -lr * g / (|g| + eps)
  CHECK(model.params[0].weights.data[0] ==
        doctest::Approx(w0 - lr).epsilon(1e-4));
  CHECK(model.params[0].weights.data[1] ==
        doctest::Approx(w1 + lr).epsilon(1e-4));
}

TEST_CASE("training runs, logs, and reduces validation loss") {
  TempDir dir("lnl_train");
  TempDir out("lnl_train_out");
  write_corpus(dir.path, 3, 64, 500);

  std::ostringstream log;
  const TrainConfig cfg = smoke_config();
  const Model model = train(dir.path, cfg, out.file("m.lnw"), &log);

  const std::string text = log.str();
  CHECK(text.find("epoch,0,loss,") != std::string::npos);
  CHECK(text.find("epoch,3,loss,") != std::string::npos);

  // parse epoch 0 and final losses from the machine-readable lines
  double first_loss = -1, last_loss = -1;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    double loss, psnr;
    int epoch;
    if (std::sscanf(line.c_str(), "epoch,%d,loss,%lf,psnr,%lf", &epoch, &loss,
                    &psnr) == 3) {
      if (first_loss < 0) first_loss = loss;
      last_loss = loss;
      CHECK(std::isfinite(loss));
    }
  }
  CHECK(first_loss > 0);
  CHECK(last_loss < first_loss);

  CHECK(std::filesystem::exists(out.file("m.lnw")));
  CHECK(std::filesystem::exists(out.file("m.lnw.ckpt")));
  CHECK(model.config.base_channels == 4);
}

TEST_CASE("epoch-0 validation psnr equals the conventional decode psnr") {
  TempDir dir("lnl_train_id");
  write_corpus(dir.path, 2, 64, 900);
  TrainConfig cfg = smoke_config();

  const auto pairs = build_dataset(dir.path, cfg);
  const Model init = build_model({cfg.base_channels, cfg.num_body_blocks},
                                 cfg.seed);
  const EvalStats stats = evaluate_pairs(init, pairs, cfg.lambda);

  double sq = 0;
  size_t pix = 0;
  for (const auto& p : pairs) {
    for (size_t i = 0; i < p.x_patch.samples.size(); ++i) {
      const double d =
          double(p.x_patch.samples[i]) - double(p.y_patch.samples[i]);
      sq += d * d;
    }
    pix += p.x_patch.samples.size();
  }
  const double conv_psnr = 10.0 * std::log10(255.0 * 255.0 / (sq / pix));
  CHECK(stats.psnr == doctest::Approx(conv_psnr).epsilon(1e-9));
}

TEST_CASE("same seed twice gives bit-identical weights") {
  TempDir dir("lnl_det");
  TempDir out("lnl_det_out");
  write_corpus(dir.path, 2, 64, 1234);
  const TrainConfig cfg = smoke_config();

  train(dir.path, cfg, out.file("a.lnw"));
  train(dir.path, cfg, out.file("b.lnw"));
  CHECK(same_file_bytes(out.file("a.lnw"), out.file("b.lnw")));

  TrainConfig other = cfg;
  other.seed = 78;
  train(dir.path, other, out.file("c.lnw"));
  CHECK(!same_file_bytes(out.file("a.lnw"), out.file("c.lnw")));
}

TEST_CASE("checkpoint resume is bit-exact") {
  TempDir dir("lnl_resume");
  TempDir out("lnl_resume_out");
  write_corpus(dir.path, 2, 64, 4321);

  TrainConfig full = smoke_config();  // 2 + 1 epochs
  train(dir.path, full, out.file("full.lnw"));

  // interrupted run: stop after epoch 2, then resume for the last epoch
  TrainConfig partial = full;
  partial.epochs_hi = 2;
  partial.epochs_lo = 0;
  train(dir.path, partial, out.file("part.lnw"));
  train(dir.path, full, out.file("resumed.lnw"), nullptr,
        out.file("part.lnw.ckpt"));

  CHECK(same_file_bytes(out.file("full.lnw"), out.file("resumed.lnw")));

  // seed mismatch is rejected
  TrainConfig wrong = full;
  wrong.seed = 9999;
  CHECK_THROWS_AS(train(dir.path, wrong, out.file("x.lnw"), nullptr,
                        out.file("part.lnw.ckpt")),
                  Error);
}

TEST_CASE("checkpoint file roundtrip") {
  TempDir dir("lnl_ckpt");
  Model model = build_model({4, 1, 2, 3}, 55);
  Checkpoint ckpt;
  ckpt.model = model;
  ckpt.adam = make_adam_state(model);
  ckpt.adam.step = 17;
  ckpt.adam.m[0][0] = 0.25f;
  ckpt.completed_epochs = 3;
  ckpt.seed = 55;
  Rng rng(8);
  rng.next_u64();
  std::copy(rng.state(), rng.state() + 4, ckpt.rng_state);

  save_checkpoint(ckpt, dir.file("c.ckpt"));
  const Checkpoint back = load_checkpoint(dir.file("c.ckpt"));
  CHECK(back.adam.step == 17);
  CHECK(back.adam.m[0][0] == 0.25f);
  CHECK(back.completed_epochs == 3);
  CHECK(back.seed == 55);
  CHECK(std::equal(back.rng_state, back.rng_state + 4, ckpt.rng_state));
  CHECK(back.model.params == model.params);

  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), IoError);
}

TEST_CASE("train_single_rate") {
  TempDir dir("lnl_single");
  TempDir out("lnl_single_out");
  write_corpus(dir.path, 2, 64, 777);

  TrainConfig cfg = smoke_config();
  cfg.taus = {4};
  cfg.epochs_hi = 1;
  cfg.epochs_lo = 0;
  const Model model = train_single_rate(dir.path, cfg, out.file("s.lnw"));

  // dataset really is tau=4 only
  const auto pairs = build_dataset(dir.path, cfg);
  for (const auto& p : pairs) CHECK(p.tau == 4);

  // file interchangeable with the multi-rate format
  const Model loaded = load_weights(out.file("s.lnw"));
  CHECK(loaded.config == model.config);

  // both models respect the 2-tau bound on held-out data
  const GrayImage x = synth_image(64, 64, 31337);
  const auto [stream, y] = encode_image(x, 4);
  CHECK(linf_bound(forward_refine(loaded, y, 4), x) <= 8);

  TrainConfig multi = cfg;
  multi.taus = {2, 4};
  CHECK_THROWS_AS(train_single_rate(dir.path, multi, out.file("x.lnw")),
                  Error);
}
