#pragma once
// The refinement CNN: head conv -> downsampling residual block -> dilated
// residual body -> upsampling residual block -> tail conv, with a global
// skip from the input and an interval truncation on the way out. The layer
// sequence is a fixed plan interpreted over float (training/inference) or
// double (gradient verification) tensors.

#include <filesystem>
#include <string>
#include <vector>

#include "lnl/image.hpp"
#include "lnl/ops.hpp"

namespace lnl {

struct ModelConfig {
  int base_channels = 64;  // desk-scale runs use 16
  int num_body_blocks = 8;
  int dilation = 2;
  int kernel = 3;

  bool operator==(const ModelConfig&) const = default;
};

struct Model {
  ModelConfig config;
  std::vector<std::string> names;   // one per conv layer, plan order
  std::vector<ConvParams> params;   // aligned with names
};

enum class StepKind { Conv, Relu, Upsample2x, Add };

struct PlanStep {
  StepKind kind;
  int input0 = -1;  // value id
  int input1 = -1;  // second value id (Add only)
  int param = -1;   // conv layer index (Conv only)
};

// Value 0 is the network input; the final Add with it is the global skip.
struct Plan {
  std::vector<PlanStep> steps;
  std::vector<std::string> conv_names;
  int output_id = -1;
  int num_values = 0;
};

Plan make_plan(const ModelConfig& cfg);

// Kaiming-uniform fan-in weights (zeroed tail layer, so the initial network
// is an exact identity through the global skip), zero biases, deterministic
// from seed.
Model build_model(const ModelConfig& cfg, uint64_t seed);

// Gradient accumulators shaped like the model's parameters.
template <typename T>
std::vector<ConvParamsT<T>> make_param_grads(
    const std::vector<ConvParamsT<T>>& params);

template <typename T>
struct Workspace {
  std::vector<TensorT<T>> values;
};

// Runs the plan; returns the pre-truncation output x_tilde. Intermediate
// activations stay in the workspace for the backward pass.
template <typename T>
const TensorT<T>& net_forward(const Plan& plan,
                              const std::vector<ConvParamsT<T>>& params,
                              const TensorT<T>& input, Workspace<T>& ws);

// Accumulates parameter gradients (and optionally the input gradient) from
// d(loss)/d(x_tilde).
template <typename T>
void net_backward(const Plan& plan, const std::vector<ConvParamsT<T>>& params,
                  Workspace<T>& ws, const TensorT<T>& grad_output,
                  std::vector<ConvParamsT<T>>* param_grads,
                  TensorT<T>* grad_input);

// Full refinement: normalize, run the net (reflect-padding odd inputs to
// even and cropping back), truncate to [y - tau, y + tau] / 255, round to
// integers. Output satisfies |x_hat - y| <= tau for any model state.
GrayImage forward_refine(const Model& model, const GrayImage& y_img, int tau);

// Pre-truncation network output as a (1,1,H,W) tensor; exposed for
// training and tests.
Tensor refine_tilde(const Model& model, const Tensor& y_norm);

// ".lnw": magic "LNLW", version, config, then per-tensor name/rank/dims and
// little-endian float payload. load(save(m)) == m bit-exactly.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path,
                   const ModelConfig& expected);
std::vector<uint8_t> serialize_weights(const Model& model);
Model parse_weights(const std::vector<uint8_t>& bytes);

}  // namespace lnl
