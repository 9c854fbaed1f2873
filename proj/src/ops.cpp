#include "lnl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lnl {

namespace {

int div_floor(int a, int b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}
int div_ceil(int a, int b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

template <typename T>
void validate_conv(const TensorT<T>& input, const ConvParamsT<T>& p) {
  if (p.kernel() % 2 == 0)
    throw ShapeError("conv2d: kernel size must be odd");
  if (p.kernel() != p.weights.shape.w)
    throw ShapeError("conv2d: non-square kernel");
  if (p.stride != 1 && p.stride != 2)
    throw ShapeError("conv2d: stride must be 1 or 2");
  if (p.dilation != 1 && p.dilation != 2)
    throw ShapeError("conv2d: dilation must be 1 or 2");
  if (input.shape.c != p.in_channels())
    throw ShapeError("conv2d: input has " + std::to_string(input.shape.c) +
                     " channels, weights expect " +
                     std::to_string(p.in_channels()));
  if (p.stride == 2 && (input.shape.h % 2 != 0 || input.shape.w % 2 != 0))
    throw ShapeError("conv2d: stride 2 requires even spatial dims, got " +
                     input.shape.str());
  if (p.bias.shape.numel() != static_cast<size_t>(p.out_channels()))
    throw ShapeError("conv2d: bias size does not match output channels");
}

template <typename T>
Shape conv_out_shape(const TensorT<T>& input, const ConvParamsT<T>& p) {
  return Shape{input.shape.n, p.out_channels(), input.shape.h / p.stride,
               input.shape.w / p.stride};
}

}  // namespace

template <typename T>
TruncationBoundsT<T> make_bounds(const TensorT<T>& y_norm, T tau_norm) {
  TruncationBoundsT<T> b{TensorT<T>(y_norm.shape), TensorT<T>(y_norm.shape)};
  for (size_t i = 0; i < y_norm.data.size(); ++i) {
    b.lo.data[i] = y_norm.data[i] - tau_norm;
    b.hi.data[i] = y_norm.data[i] + tau_norm;
  }
  return b;
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const ConvParamsT<T>& p) {
  validate_conv(input, p);
  const int s = p.stride, d = p.dilation, k = p.kernel(), pad = p.padding();
  const int in_h = input.shape.h, in_w = input.shape.w;
  TensorT<T> out(conv_out_shape(input, p));
  const int out_h = out.shape.h, out_w = out.shape.w;

  for (int n = 0; n < input.shape.n; ++n) {
    for (int oc = 0; oc < p.out_channels(); ++oc) {
      T* out_plane = out.plane(n, oc);
      const T bias = p.bias.data[oc];
      std::fill(out_plane, out_plane + size_t(out_h) * out_w, bias);
      for (int ic = 0; ic < p.in_channels(); ++ic) {
        const T* in_plane = input.plane(n, ic);
        for (int kh = 0; kh < k; ++kh) {
          const int oh0 = std::max(0, div_ceil(pad - kh * d, s));
          const int oh1 =
              std::min(out_h - 1, div_floor(in_h - 1 + pad - kh * d, s));
          for (int kw = 0; kw < k; ++kw) {
            const T wv = p.weights.at(oc, ic, kh, kw);
            const int off = kw * d - pad;
            const int ow0 = std::max(0, div_ceil(-off, s));
            const int ow1 = std::min(out_w - 1, div_floor(in_w - 1 - off, s));
            for (int oh = oh0; oh <= oh1; ++oh) {
              const T* in_row = in_plane + size_t(oh * s - pad + kh * d) * in_w;
              T* out_row = out_plane + size_t(oh) * out_w;
              if (s == 1) {
                for (int ow = ow0; ow <= ow1; ++ow)
                  out_row[ow] += wv * in_row[ow + off];
              } else {
                for (int ow = ow0; ow <= ow1; ++ow)
                  out_row[ow] += wv * in_row[ow * 2 + off];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& input, const ConvParamsT<T>& p,
                     const TensorT<T>& grad_out, TensorT<T>* grad_input,
                     TensorT<T>* grad_weights, TensorT<T>* grad_bias) {
  validate_conv(input, p);
  check_same_shape(grad_out.shape, conv_out_shape(input, p),
                   "conv2d_backward");
  const int s = p.stride, d = p.dilation, k = p.kernel(), pad = p.padding();
  const int in_h = input.shape.h, in_w = input.shape.w;
  const int out_h = grad_out.shape.h, out_w = grad_out.shape.w;

  for (int n = 0; n < input.shape.n; ++n) {
    for (int oc = 0; oc < p.out_channels(); ++oc) {
      const T* go_plane = grad_out.plane(n, oc);
      if (grad_bias) {
        T acc = 0;
        for (size_t i = 0; i < size_t(out_h) * out_w; ++i) acc += go_plane[i];
        grad_bias->data[oc] += acc;
      }
      for (int ic = 0; ic < p.in_channels(); ++ic) {
        const T* in_plane = input.plane(n, ic);
        T* gi_plane = grad_input ? grad_input->plane(n, ic) : nullptr;
        for (int kh = 0; kh < k; ++kh) {
          const int oh0 = std::max(0, div_ceil(pad - kh * d, s));
          const int oh1 =
              std::min(out_h - 1, div_floor(in_h - 1 + pad - kh * d, s));
          for (int kw = 0; kw < k; ++kw) {
            const T wv = p.weights.at(oc, ic, kh, kw);
            const int off = kw * d - pad;
            const int ow0 = std::max(0, div_ceil(-off, s));
            const int ow1 = std::min(out_w - 1, div_floor(in_w - 1 - off, s));
            T wacc = 0;
            for (int oh = oh0; oh <= oh1; ++oh) {
              const size_t in_base = size_t(oh * s - pad + kh * d) * in_w;
              const T* go_row = go_plane + size_t(oh) * out_w;
              if (grad_weights) {
                const T* in_row = in_plane + in_base;
                if (s == 1) {
                  for (int ow = ow0; ow <= ow1; ++ow)
                    wacc += go_row[ow] * in_row[ow + off];
                } else {
                  for (int ow = ow0; ow <= ow1; ++ow)
                    wacc += go_row[ow] * in_row[ow * 2 + off];
                }
              }
              if (gi_plane) {
                T* gi_row = gi_plane + in_base;
                if (s == 1) {
                  for (int ow = ow0; ow <= ow1; ++ow)
                    gi_row[ow + off] += wv * go_row[ow];
                } else {
                  for (int ow = ow0; ow <= ow1; ++ow)
                    gi_row[ow * 2 + off] += wv * go_row[ow];
                }
              }
            }
            if (grad_weights) grad_weights->at(oc, ic, kh, kw) += wacc;
          }
        }
      }
    }
  }
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
  TensorT<T> out(input.shape);
  for (size_t i = 0; i < input.data.size(); ++i)
    out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  return out;
}

template <typename T>
void relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out,
                   TensorT<T>& grad_input) {
  check_same_shape(input.shape, grad_out.shape, "relu_backward");
  for (size_t i = 0; i < input.data.size(); ++i)
    if (input.data[i] > T(0)) grad_input.data[i] += grad_out.data[i];
}

template <typename T>
TensorT<T> upsample2x_forward(const TensorT<T>& input) {
  const Shape s = input.shape;
  TensorT<T> out({s.n, s.c, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in_plane = input.plane(n, c);
      T* out_plane = out.plane(n, c);
      for (int h = 0; h < s.h; ++h) {
        const T* in_row = in_plane + size_t(h) * s.w;
        T* r0 = out_plane + size_t(2 * h) * (2 * s.w);
        T* r1 = r0 + 2 * s.w;
        for (int w = 0; w < s.w; ++w) {
          r0[2 * w] = r0[2 * w + 1] = in_row[w];
          r1[2 * w] = r1[2 * w + 1] = in_row[w];
        }
      }
    }
  }
  return out;
}

template <typename T>
void upsample2x_backward(const TensorT<T>& grad_out, TensorT<T>& grad_input) {
  const Shape s = grad_input.shape;
  check_same_shape(grad_out.shape, Shape{s.n, s.c, s.h * 2, s.w * 2},
                   "upsample2x_backward");
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* go_plane = grad_out.plane(n, c);
      T* gi_plane = grad_input.plane(n, c);
      for (int h = 0; h < s.h; ++h) {
        const T* r0 = go_plane + size_t(2 * h) * (2 * s.w);
        const T* r1 = r0 + 2 * s.w;
        T* gi_row = gi_plane + size_t(h) * s.w;
        for (int w = 0; w < s.w; ++w)
          gi_row[w] += r0[2 * w] + r0[2 * w + 1] + r1[2 * w] + r1[2 * w + 1];
      }
    }
  }
}

template <typename T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a.shape, b.shape, "add");
  TensorT<T> out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <typename T>
TensorT<T> truncate_forward(const TensorT<T>& x,
                            const TruncationBoundsT<T>& b) {
  check_same_shape(x.shape, b.lo.shape, "truncate");
  TensorT<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    out.data[i] = v < b.lo.data[i] ? b.lo.data[i]
                                   : (v > b.hi.data[i] ? b.hi.data[i] : v);
  }
  return out;
}

template <typename T>
void truncate_backward(const TensorT<T>& x, const TruncationBoundsT<T>& b,
                       const TensorT<T>& grad_out, TensorT<T>& grad_input) {
  check_same_shape(x.shape, grad_out.shape, "truncate_backward");
  for (size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] >= b.lo.data[i] && x.data[i] <= b.hi.data[i])
      grad_input.data[i] += grad_out.data[i];
}

template <typename T>
double mse_loss(const TensorT<T>& x_hat, const TensorT<T>& x) {
  check_same_shape(x_hat.shape, x.shape, "mse_loss");
  double sum = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = double(x_hat.data[i]) - double(x.data[i]);
    sum += d * d;
  }
  return sum / double(x.data.size());
}

template <typename T>
void mse_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                       T loss_scale, TensorT<T>& grad_x_hat) {
  const T inv = loss_scale * T(2) / T(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i)
    grad_x_hat.data[i] += inv * (x_hat.data[i] - x.data[i]);
}

template <typename T>
double truncated_l2_loss(const TensorT<T>& x_hat, const TensorT<T>& x,
                         T tau_norm) {
  check_same_shape(x_hat.shape, x.shape, "truncated_l2_loss");
  const double t2 = double(tau_norm) * double(tau_norm);
  double sum = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = double(x_hat.data[i]) - double(x.data[i]);
    sum += std::max(d * d - t2, 0.0);
  }
  return sum / double(x.data.size());
}

template <typename T>
void truncated_l2_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                                T tau_norm, T loss_scale,
                                TensorT<T>& grad_x_hat) {
  const T inv = loss_scale * T(2) / T(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    const T d = x_hat.data[i] - x.data[i];
    if (d * d > tau_norm * tau_norm) grad_x_hat.data[i] += inv * d;
  }
}

template <typename T>
double linf_loss(const TensorT<T>& x_hat, const TensorT<T>& x, T tau_norm) {
  check_same_shape(x_hat.shape, x.shape, "linf_loss");
  double sum = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double excess =
        std::abs(double(x_hat.data[i]) - double(x.data[i])) - double(tau_norm);
    if (excess > 0) {
      const double arg = 1.0 - excess;
      if (arg <= 1e-6)
        throw Error("linf_loss: log argument " + std::to_string(arg) +
                    " below guard; |x_hat - x| must stay near the tube");
      sum -= std::log(arg);
    }
  }
  return sum / double(x.data.size());
}

template <typename T>
void linf_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                        T tau_norm, T loss_scale, TensorT<T>& grad_x_hat) {
  const T inv = loss_scale / T(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    const T d = x_hat.data[i] - x.data[i];
    const T excess = (d < T(0) ? -d : d) - tau_norm;
    if (excess > T(0)) {
      const T g = inv / (T(1) - excess);
      grad_x_hat.data[i] += d < T(0) ? -g : g;
    }
  }
}

template <typename T>
double joint_loss(const TensorT<T>& x_hat, const TensorT<T>& x, T tau_norm,
                  T lambda) {
  return mse_loss(x_hat, x) + double(lambda) * linf_loss(x_hat, x, tau_norm);
}

template <typename T>
void joint_loss_backward(const TensorT<T>& x_hat, const TensorT<T>& x,
                         T tau_norm, T lambda, TensorT<T>& grad_x_hat) {
  mse_loss_backward(x_hat, x, T(1), grad_x_hat);
  linf_loss_backward(x_hat, x, tau_norm, lambda, grad_x_hat);
}

template <typename T>
GradCheckReport grad_check(
    const std::function<double(std::span<const T>)>& f, std::span<T> x,
    std::span<const T> analytic_grad, double eps,
    const std::function<double(std::span<const T>, size_t)>& kink_distance,
    const std::function<uint64_t(std::span<const T>)>& mask_signature) {
  GradCheckReport report;
  std::vector<double> numeric(x.size(), 0.0);
  std::vector<char> checked(x.size(), 0);

  for (size_t i = 0; i < x.size(); ++i) {
    if (kink_distance && kink_distance(x, i) < 2 * eps) {
      ++report.skipped_kinks;
      continue;
    }
    const T orig = x[i];
    const T xp = orig + T(eps);
    const T xm = orig - T(eps);
    x[i] = xp;
    const double fp = f(x);
    const uint64_t sig_p = mask_signature ? mask_signature(x) : 0;
    x[i] = xm;
    const double fm = f(x);
    const uint64_t sig_m = mask_signature ? mask_signature(x) : 0;
    x[i] = orig;
    if (sig_p != sig_m) {  // the interval [x-eps, x+eps] straddles a kink
      ++report.skipped_kinks;
      continue;
    }
    numeric[i] = (fp - fm) / (double(xp) - double(xm));
    checked[i] = 1;
    ++report.checked;
  }

  double scale = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    if (checked[i])
      scale = std::max(scale,
                       std::abs(double(analytic_grad[i])) + std::abs(numeric[i]));
  const double floor = std::max(1e-2 * scale, 1e-12);

  for (size_t i = 0; i < x.size(); ++i) {
    if (!checked[i]) continue;
    const double a = double(analytic_grad[i]);
    const double n = numeric[i];
    const double rel =
        std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor);
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  return report;
}

// float for training and inference, double for tight verification
#define LNL_INSTANTIATE_OPS(T)                                                 \
  template TruncationBoundsT<T> make_bounds<T>(const TensorT<T>&, T);          \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&,                     \
                                        const ConvParamsT<T>&);                \
  template void conv2d_backward<T>(const TensorT<T>&, const ConvParamsT<T>&,  \
                                   const TensorT<T>&, TensorT<T>*,            \
                                   TensorT<T>*, TensorT<T>*);                  \
  template TensorT<T> relu_forward<T>(const TensorT<T>&);                      \
  template void relu_backward<T>(const TensorT<T>&, const TensorT<T>&,        \
                                 TensorT<T>&);                                 \
  template TensorT<T> upsample2x_forward<T>(const TensorT<T>&);                \
  template void upsample2x_backward<T>(const TensorT<T>&, TensorT<T>&);        \
  template TensorT<T> add_forward<T>(const TensorT<T>&, const TensorT<T>&);    \
  template TensorT<T> truncate_forward<T>(const TensorT<T>&,                   \
                                          const TruncationBoundsT<T>&);        \
  template void truncate_backward<T>(const TensorT<T>&,                        \
                                     const TruncationBoundsT<T>&,              \
                                     const TensorT<T>&, TensorT<T>&);          \
  template double mse_loss<T>(const TensorT<T>&, const TensorT<T>&);           \
  template void mse_loss_backward<T>(const TensorT<T>&, const TensorT<T>&, T,  \
                                     TensorT<T>&);                             \
  template double truncated_l2_loss<T>(const TensorT<T>&, const TensorT<T>&,   \
                                       T);                                     \
  template void truncated_l2_loss_backward<T>(const TensorT<T>&,               \
                                              const TensorT<T>&, T, T,         \
                                              TensorT<T>&);                    \
  template double linf_loss<T>(const TensorT<T>&, const TensorT<T>&, T);       \
  template void linf_loss_backward<T>(const TensorT<T>&, const TensorT<T>&,    \
                                      T, T, TensorT<T>&);                      \
  template double joint_loss<T>(const TensorT<T>&, const TensorT<T>&, T, T);   \
  template void joint_loss_backward<T>(const TensorT<T>&, const TensorT<T>&,   \
                                       T, T, TensorT<T>&);                     \
  template GradCheckReport grad_check<T>(                                      \
      const std::function<double(std::span<const T>)>&, std::span<T>,          \
      std::span<const T>, double,                                              \
      const std::function<double(std::span<const T>, size_t)>&,                \
      const std::function<uint64_t(std::span<const T>)>&);

LNL_INSTANTIATE_OPS(float)
LNL_INSTANTIATE_OPS(double)

#undef LNL_INSTANTIATE_OPS

}  // namespace lnl
