#include "lnl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>

#include "lnl/codec.hpp"

namespace lnl {

namespace {

namespace fs = std::filesystem;

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
uint32_t get_u32le(const std::vector<uint8_t>& in, size_t& pos) {
  if (in.size() - pos < 4) throw ParseError("checkpoint: truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}
uint64_t get_u64le(const std::vector<uint8_t>& in, size_t& pos) {
  if (in.size() - pos < 8) throw ParseError("checkpoint: truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

void put_floats(std::vector<uint8_t>& out, const std::vector<float>& data) {
  put_u64le(out, data.size());
  const size_t base = out.size();
  out.resize(base + data.size() * 4);
  for (size_t i = 0; i < data.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    for (int b = 0; b < 4; ++b)
      out[base + 4 * i + b] = static_cast<uint8_t>(bits >> (8 * b));
  }
}

std::vector<float> get_floats(const std::vector<uint8_t>& in, size_t& pos) {
  const uint64_t count = get_u64le(in, pos);
  if (count > (1u << 28) || in.size() - pos < count * 4)
    throw ParseError("checkpoint: truncated float block");
  std::vector<float> data(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<uint32_t>(in[pos + 4 * i + b]) << (8 * b);
    std::memcpy(&data[i], &bits, 4);
  }
  pos += count * 4;
  return data;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.taus.empty()) throw Error("train config: taus must be non-empty");
  for (int t : cfg.taus)
    if (t < 1 || t > kMaxTau)
      throw Error("train config: tau " + std::to_string(t) +
                  " outside [1, 8]");
  if (cfg.patch < 2 || cfg.patch % 2 != 0)
    throw Error("train config: patch size must be even and >= 2");
  if (cfg.stride < 1) throw Error("train config: stride must be >= 1");
  if (cfg.batch < 1 || cfg.epochs_hi < 0 || cfg.epochs_lo < 0)
    throw Error("train config: counts must be positive");
  if (!(cfg.lr_hi > 0) || !(cfg.lr_lo > 0) || !(cfg.lambda >= 0))
    throw Error("train config: rates must be positive");
}

struct SampleResult {
  std::vector<ConvParams> grads;
  double loss = 0.0;
};

// One forward/backward on a single pair. Pure in everything but `out`.
void sample_grad(const Plan& plan, const std::vector<ConvParams>& params,
                 const SamplePair& pair, float lambda, SampleResult& out) {
  const Tensor y = to_normalized(pair.y_patch);
  const Tensor x = to_normalized(pair.x_patch);
  const float tau_norm = static_cast<float>(pair.tau) / 255.0f;

  Workspace<float> ws;
  const Tensor& x_tilde = net_forward(plan, params, y, ws);
  const TruncationBounds bounds = make_bounds(y, tau_norm);
  const Tensor x_hat = truncate_forward(x_tilde, bounds);

  out.loss = joint_loss(x_hat, x, tau_norm, lambda);

  Tensor grad_hat(x_hat.shape);
  joint_loss_backward(x_hat, x, tau_norm, lambda, grad_hat);
  Tensor grad_tilde(x_tilde.shape);
  truncate_backward(x_tilde, bounds, grad_hat, grad_tilde);

  out.grads = make_param_grads(params);
  net_backward(plan, params, ws, grad_tilde, &out.grads,
               static_cast<Tensor*>(nullptr));
}

}  // namespace

std::vector<SamplePair> build_dataset(const fs::path& dir,
                                      const TrainConfig& cfg) {
  validate_config(cfg);
  std::vector<fs::path> files;
  if (!fs::is_directory(dir))
    throw IoError("dataset: " + dir.string() + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path());
  if (files.empty())
    throw Error("dataset: no .pgm images in " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });

  std::vector<SamplePair> pairs;
  for (const fs::path& file : files) {
    const GrayImage x = read_pgm(file);
    for (int tau : cfg.taus) {
      const auto [stream, y] = encode_image(x, tau);
      auto xs = extract_patches(x, cfg.patch, cfg.stride);
      auto ys = extract_patches(y, cfg.patch, cfg.stride);
      for (size_t i = 0; i < xs.size(); ++i)
        pairs.push_back({std::move(ys[i]), std::move(xs[i]), tau});
    }
  }
  return pairs;
}

AdamState make_adam_state(const Model& model) {
  AdamState state;
  for (const ConvParams& p : model.params) {
    state.m.emplace_back(p.weights.data.size(), 0.0f);
    state.m.emplace_back(p.bias.data.size(), 0.0f);
    state.v.emplace_back(p.weights.data.size(), 0.0f);
    state.v.emplace_back(p.bias.data.size(), 0.0f);
  }
  return state;
}

void adam_step(std::vector<ConvParams>& params,
               const std::vector<ConvParams>& grads, AdamState& state,
               float lr, const TrainConfig& cfg) {
  state.step += 1;
  const float bc1 =
      1.0f - static_cast<float>(std::pow(double(cfg.beta1), double(state.step)));
  const float bc2 =
      1.0f - static_cast<float>(std::pow(double(cfg.beta2), double(state.step)));

  for (size_t p = 0; p < params.size(); ++p) {
    auto update = [&](std::vector<float>& theta, const std::vector<float>& g,
                      std::vector<float>& m, std::vector<float>& v) {
      for (size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
        const float m_hat = m[i] / bc1;
        const float v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      }
    };
    update(params[p].weights.data, grads[p].weights.data, state.m[2 * p],
           state.v[2 * p]);
    update(params[p].bias.data, grads[p].bias.data, state.m[2 * p + 1],
           state.v[2 * p + 1]);
  }
}

EvalStats evaluate_pairs(const Model& model,
                         const std::vector<SamplePair>& pairs, float lambda) {
  const Plan plan = make_plan(model.config);
  EvalStats stats;
  double sq_sum = 0.0;
  size_t pix = 0;
  std::vector<double> joints(pairs.size(), 0.0);
  std::vector<double> sqs(pairs.size(), 0.0);

  parallel_for(pairs.size(), [&](size_t i) {
    const SamplePair& pair = pairs[i];
    const Tensor y = to_normalized(pair.y_patch);
    const Tensor x = to_normalized(pair.x_patch);
    const float tau_norm = static_cast<float>(pair.tau) / 255.0f;
    Workspace<float> ws;
    const Tensor& x_tilde = net_forward(plan, model.params, y, ws);
    const Tensor x_hat =
        truncate_forward(x_tilde, make_bounds(y, tau_norm));
    joints[i] = joint_loss(x_hat, x, tau_norm, lambda);
    const GrayImage rounded = from_normalized(x_hat);
    double sq = 0.0;
    for (size_t j = 0; j < rounded.samples.size(); ++j) {
      const double d = double(rounded.samples[j]) - double(pair.x_patch.samples[j]);
      sq += d * d;
    }
    sqs[i] = sq;
  });

  for (size_t i = 0; i < pairs.size(); ++i) {
    stats.joint += joints[i];
    sq_sum += sqs[i];
    pix += pairs[i].x_patch.samples.size();
  }
  stats.joint /= pairs.empty() ? 1.0 : double(pairs.size());
  const double mse = pix ? sq_sum / double(pix) : 0.0;
  stats.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity()
                          : 10.0 * std::log10(255.0 * 255.0 / mse);
  return stats;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::vector<uint8_t> out = {'L', 'N', 'L', 'K', 1};
  const auto weights = serialize_weights(ckpt.model);
  put_u64le(out, weights.size());
  out.insert(out.end(), weights.begin(), weights.end());
  put_u64le(out, ckpt.adam.step);
  put_u32le(out, static_cast<uint32_t>(ckpt.adam.m.size()));
  for (const auto& m : ckpt.adam.m) put_floats(out, m);
  for (const auto& v : ckpt.adam.v) put_floats(out, v);
  put_u32le(out, ckpt.completed_epochs);
  put_u64le(out, ckpt.seed);
  for (uint64_t s : ckpt.rng_state) put_u64le(out, s);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 5 || bytes[0] != 'L' || bytes[1] != 'N' ||
      bytes[2] != 'L' || bytes[3] != 'K')
    throw ParseError("checkpoint: bad magic");
  if (bytes[4] != 1) throw ParseError("checkpoint: unsupported version");
  size_t pos = 5;

  Checkpoint ckpt;
  const uint64_t wlen = get_u64le(bytes, pos);
  if (bytes.size() - pos < wlen) throw ParseError("checkpoint: truncated");
  std::vector<uint8_t> wbytes(bytes.begin() + pos, bytes.begin() + pos + wlen);
  pos += wlen;
  ckpt.model = parse_weights(wbytes);

  ckpt.adam.step = get_u64le(bytes, pos);
  const uint32_t tensors = get_u32le(bytes, pos);
  ckpt.adam.m.resize(tensors);
  ckpt.adam.v.resize(tensors);
  for (auto& m : ckpt.adam.m) m = get_floats(bytes, pos);
  for (auto& v : ckpt.adam.v) v = get_floats(bytes, pos);
  ckpt.completed_epochs = get_u32le(bytes, pos);
  ckpt.seed = get_u64le(bytes, pos);
  for (uint64_t& s : ckpt.rng_state) s = get_u64le(bytes, pos);
  if (pos != bytes.size()) throw ParseError("checkpoint: trailing bytes");
  return ckpt;
}

Model train(const fs::path& data_dir, const TrainConfig& cfg,
            const fs::path& out_path, std::ostream* log,
            const fs::path& resume) {
  validate_config(cfg);
  const std::vector<SamplePair> dataset = build_dataset(data_dir, cfg);

  std::vector<size_t> train_idx, val_idx;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (cfg.val_stride >= 2 && dataset.size() > size_t(cfg.val_stride) &&
        i % size_t(cfg.val_stride) == 0)
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (train_idx.empty()) throw Error("train: dataset too small");
  std::vector<SamplePair> val_pairs;
  for (size_t i : val_idx) val_pairs.push_back(dataset[i]);
  if (val_pairs.empty())
    for (size_t i : train_idx) val_pairs.push_back(dataset[i]);

  Model model;
  AdamState adam;
  Rng rng(cfg.seed);
  int start_epoch = 1;

  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    if (ckpt.seed != cfg.seed)
      throw Error("resume: checkpoint seed does not match config");
    model = std::move(ckpt.model);
    adam = std::move(ckpt.adam);
    rng.set_state(ckpt.rng_state);
    start_epoch = static_cast<int>(ckpt.completed_epochs) + 1;
  } else {
    model = build_model({cfg.base_channels, cfg.num_body_blocks}, cfg.seed);
    adam = make_adam_state(model);
  }

  const Plan plan = make_plan(model.config);
  const int total_epochs = cfg.epochs_hi + cfg.epochs_lo;
  const fs::path ckpt_path = out_path.string() + ".ckpt";

  if (start_epoch == 1 && log) {
    const EvalStats init = evaluate_pairs(model, val_pairs, cfg.lambda);
    (*log) << "epoch,0,loss," << init.joint << ",psnr," << init.psnr << "\n";
    log->flush();
  }

  std::vector<size_t> order = train_idx;
  for (int epoch = start_epoch; epoch <= total_epochs; ++epoch) {
    const float lr = epoch <= cfg.epochs_hi ? cfg.lr_hi : cfg.lr_lo;

    // Seeded Fisher-Yates; the RNG stream advances across epochs and rides
    // along in the checkpoint.
    order = train_idx;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);

    double epoch_loss = 0.0;
    size_t seen = 0;
    for (size_t b = 0; b < order.size(); b += size_t(cfg.batch)) {
      const size_t count = std::min(size_t(cfg.batch), order.size() - b);
      std::vector<SampleResult> results(count);
      parallel_for(count, [&](size_t i) {
        sample_grad(plan, model.params, dataset[order[b + i]], cfg.lambda,
                    results[i]);
      });

      std::vector<ConvParams> batch_grads = make_param_grads(model.params);
      double batch_loss = 0.0;
      const float inv = 1.0f / static_cast<float>(count);
      for (size_t i = 0; i < count; ++i) {  // fixed accumulation order
        batch_loss += results[i].loss;
        for (size_t p = 0; p < batch_grads.size(); ++p) {
          auto& bw = batch_grads[p].weights.data;
          const auto& sw = results[i].grads[p].weights.data;
          for (size_t j = 0; j < bw.size(); ++j) bw[j] += sw[j];
          auto& bb = batch_grads[p].bias.data;
          const auto& sb = results[i].grads[p].bias.data;
          for (size_t j = 0; j < bb.size(); ++j) bb[j] += sb[j];
        }
      }
      for (auto& g : batch_grads) {
        for (float& w : g.weights.data) w *= inv;
        for (float& w : g.bias.data) w *= inv;
      }
      batch_loss /= double(count);
      if (!std::isfinite(batch_loss))
        throw Error("train: non-finite loss at epoch " +
                    std::to_string(epoch) + ", batch " +
                    std::to_string(b / size_t(cfg.batch)));

      adam_step(model.params, batch_grads, adam, lr, cfg);
      epoch_loss += batch_loss * double(count);
      seen += count;
    }
    epoch_loss /= double(seen);

    if (log) {
      const EvalStats val = evaluate_pairs(model, val_pairs, cfg.lambda);
      (*log) << "epoch," << epoch << ",loss," << epoch_loss << ",psnr,"
             << val.psnr << "\n";
      log->flush();
    }

    Checkpoint ckpt;
    ckpt.model = model;
    ckpt.adam = adam;
    ckpt.completed_epochs = static_cast<uint32_t>(epoch);
    ckpt.seed = cfg.seed;
    const uint64_t* s = rng.state();
    std::copy(s, s + 4, ckpt.rng_state);
    save_checkpoint(ckpt, ckpt_path);
  }

  save_weights(model, out_path);
  return model;
}

Model train_single_rate(const fs::path& data_dir, const TrainConfig& cfg,
                        const fs::path& out_path, std::ostream* log) {
  if (cfg.taus.size() != 1)
    throw Error("train_single_rate: config must hold exactly one tau");
  return train(data_dir, cfg, out_path, log);
}

}  // namespace lnl
