#pragma once
// Dataset construction through the codec, Adam, and the multi-rate training
// loop with bit-exact checkpoint/resume.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lnl/network.hpp"

namespace lnl {

struct SamplePair {
  GrayImage y_patch;  // decoded
  GrayImage x_patch;  // original
  int tau = 0;
};

struct TrainConfig {
  std::vector<int> taus = {1, 2, 3, 4, 5, 6, 7, 8};
  int patch = 64;   // paper-scale 128
  int stride = 64;  // paper-scale 32
  int batch = 8;
  int epochs_hi = 20;  // paper-scale 100
  int epochs_lo = 10;  // paper-scale 50
  float lr_hi = 1e-4f;
  float lr_lo = 1e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float lambda = 0.2f;
  uint64_t seed = 1;
  int base_channels = 16;  // paper-scale 64
  int num_body_blocks = 8;
  int val_stride = 8;  // every val_stride-th sample held out for logging
};

struct AdamState {
  // One moment pair per parameter tensor, order w0,b0,w1,b1,...
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  uint64_t step = 0;
};

// For each image (filename-sorted) and each tau (inner loop): full-image
// encode/decode at tau, then aligned patch extraction. Every pair satisfies
// max|x - y| <= tau by the codec bound.
std::vector<SamplePair> build_dataset(const std::filesystem::path& dir,
                                      const TrainConfig& cfg);

AdamState make_adam_state(const Model& model);

// Standard bias-corrected Adam update, in place.
void adam_step(std::vector<ConvParams>& params,
               const std::vector<ConvParams>& grads, AdamState& state,
               float lr, const TrainConfig& cfg);

struct Checkpoint {
  Model model;
  AdamState adam;
  uint32_t completed_epochs = 0;
  uint64_t seed = 0;
  uint64_t rng_state[4] = {0, 0, 0, 0};
};

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Trains on the directory's PGMs and writes final weights to out_path.
// Writes a checkpoint (out_path + ".ckpt") after every epoch; passing that
// file as `resume` continues a run bit-exactly. Per-epoch lines
// "epoch,<n>,loss,<v>,psnr,<v>" go to log when provided (epoch 0 reports
// the untrained network). Aborts on non-finite loss.
Model train(const std::filesystem::path& data_dir, const TrainConfig& cfg,
            const std::filesystem::path& out_path, std::ostream* log = nullptr,
            const std::filesystem::path& resume = {});

// Same loop restricted to a single tau; cfg.taus must hold exactly one
// entry. Output files are interchangeable with multi-rate ones.
Model train_single_rate(const std::filesystem::path& data_dir,
                        const TrainConfig& cfg,
                        const std::filesystem::path& out_path,
                        std::ostream* log = nullptr);

// Mean joint loss and pooled-MSE PSNR (integer domain) of the refined
// output over a set of pairs. Exposed for validation and tests.
struct EvalStats {
  double joint = 0.0;
  double psnr = 0.0;
};
EvalStats evaluate_pairs(const Model& model,
                         const std::vector<SamplePair>& pairs, float lambda);

}  // namespace lnl
