#pragma once
// Differentiable operator set: strided/dilated convolution, ReLU, nearest
// 2x upsampling, residual add, the interval-truncation activation and the
// l2 / truncated-l2 / l-infinity losses. Every forward has a matching
// backward that accumulates into caller-provided gradient buffers, and a
// finite-difference harness verifies all of them.
//
// All operators are instantiated for float (training/inference) and double
// (tight gradient verification).

#include <functional>
#include <span>

#include "lnl/tensor.hpp"

namespace lnl {

template <typename T>
struct ConvParamsT {
  TensorT<T> weights;  // (out_ch, in_ch, k, k), k odd
  TensorT<T> bias;     // (out_ch, 1, 1, 1)
  int stride = 1;      // 1 or 2
  int dilation = 1;    // 1 or 2

  int out_channels() const { return weights.shape.n; }
  int in_channels() const { return weights.shape.c; }
  int kernel() const { return weights.shape.h; }
  int padding() const { return dilation * (kernel() - 1) / 2; }

  bool operator==(const ConvParamsT&) const = default;
};

using ConvParams = ConvParamsT<float>;

// Per-pixel clamp interval [lo, hi] = (y -/+ tau) / 255.
template <typename T>
struct TruncationBoundsT {
  TensorT<T> lo;
  TensorT<T> hi;
};

using TruncationBounds = TruncationBoundsT<float>;

template <typename T>
TruncationBoundsT<T> make_bounds(const TensorT<T>& y_norm, T tau_norm);

// Zero-padded cross-correlation. Stride 1 preserves the spatial size,
// stride 2 halves it (even inputs only).
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const ConvParamsT<T>& p);

// Accumulates into grad_input / grad_weights / grad_bias; any may be null.
template <typename T>
void conv2d_backward(const TensorT<T>& input, const ConvParamsT<T>& p,
                     const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weights, TensorT<T>* grad_bias);

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input);

// Derivative at 0 is defined as 0.
template <typename T>
void relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out,
                   TensorT<T>& grad_input);

template <typename T>
TensorT<T> upsample2x_forward(const TensorT<T>& input);

// Backward = 2x2 block sum of the output gradient.
template <typename T>
void upsample2x_backward(const TensorT<T>& grad_out, TensorT<T>& grad_input);

template <typename T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b);

// Elementwise clamp of x to [lo, hi]. The gradient passes on the closed
// interval (derivative 1 at the boundary itself) and is blocked outside.
template <typename T>
TensorT<T> truncate_forward(const TensorT<T>& x,
                            const TruncationBoundsT<T>& b);

template <typename T>
void truncate_backward(const TensorT<T>& x, const TruncationBoundsT<T>& b,
                       const TensorT<T>& grad_out, TensorT<T>& grad_input);

// Loss values are accumulated in double regardless of T; gradients are
// written in T. Backwards scale their contribution by loss_scale and
// accumulate, so composite losses chain naturally.

// mean((x_hat - x)^2)
template <typename T>
double mse_loss(const TensorT<T>& x_hat, const TensorT<T>& x);

template <typename T>
void mse_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                       T loss_scale, TensorT<T>& grad_x_hat);

// mean(max((x_hat - x)^2 - tau^2, 0))
template <typename T>
double truncated_l2_loss(const TensorT<T>& x_hat, const TensorT<T>& x,
                         T tau_norm);

template <typename T>
void truncated_l2_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                                T tau_norm, T loss_scale,
                                TensorT<T>& grad_x_hat);

// -mean(log(1 - max(|x_hat - x| - tau, 0))); zero inside the tolerance
// tube, steeply increasing outside. Inputs must be normalized to [0,1].
// Throws if any log argument falls to <= 1e-6.
template <typename T>
double linf_loss(const TensorT<T>& x_hat, const TensorT<T>& x, T tau_norm);

template <typename T>
void linf_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                        T tau_norm, T loss_scale, TensorT<T>& grad_x_hat);

// mse + lambda * linf
template <typename T>
double joint_loss(const TensorT<T>& x_hat, const TensorT<T>& x, T tau_norm,
                  T lambda);

template <typename T>
void joint_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                         T tau_norm, T lambda, TensorT<T>& grad_x_hat);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t skipped_kinks = 0;

  bool ok(double tolerance) const { return max_rel_err <= tolerance; }
};

// Central differences (f(x+eps) - f(x-eps)) / 2eps against the supplied
// analytic gradient, coordinate by coordinate. Errors are max-normalized:
// |a - n| / max(|a| + |n|, 1e-2 * ||grad||_inf), so tiny coordinates are
// judged against the gradient's overall scale.
//
// Kink-adjacent coordinates (within 2*eps of a non-differentiable point)
// are skipped and counted, detected two ways: kink_distance(x, i) < 2*eps
// in input space, or mask_signature disagreeing between the x+eps and
// x-eps evaluations (for composed functions, where the piecewise region
// of ReLUs/clamps/loss activity is what matters).
template <typename T>
GradCheckReport grad_check(
    const std::function<double(std::span<const T>)>& f, std::span<T> x,
    std::span<const T> analytic_grad, double eps,
    const std::function<double(std::span<const T>, size_t)>& kink_distance =
        {},
    const std::function<uint64_t(std::span<const T>)>& mask_signature = {});

}  // namespace lnl
