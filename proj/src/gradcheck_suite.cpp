#include "lnl/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "lnl/network.hpp"

namespace lnl {

namespace {

template <typename T>
struct Suite {
  double eps;
  double tolerance;
  std::vector<GradCheckEntry> entries;

  // conv/upsample/add are exactly linear per coordinate, so central
  // differences have no truncation error and a larger step just divides
  // away float rounding noise.
  double linear_eps() const { return eps * 10; }

  TensorT<T> random_tensor(Shape s, uint64_t seed, T scale) {
    TensorT<T> t(s);
    Rng rng(seed);
    for (T& v : t.data) v = (T(2) * T(rng.next_double()) - T(1)) * scale;
    return t;
  }

  void record(const std::string& name, const GradCheckReport& report) {
    entries.push_back({name, report, tolerance});
  }

  // Projects the op output onto a fixed random direction so every element
  // contributes to the scalar under test.
  TensorT<T> projection(Shape s, uint64_t seed) {
    return random_tensor(s, seed, T(1));
  }

  static double dot(const TensorT<T>& a, const TensorT<T>& b) {
    double sum = 0;
    for (size_t i = 0; i < a.data.size(); ++i)
      sum += double(a.data[i]) * double(b.data[i]);
    return sum;
  }

  void check_conv(const std::string& name, Shape in_shape, int out_ch,
                  int kernel, int stride, int dilation, uint64_t seed) {
    TensorT<T> input = random_tensor(in_shape, seed, T(1));
    ConvParamsT<T> p;
    p.weights = random_tensor({out_ch, in_shape.c, kernel, kernel}, seed + 1,
                              T(0.5));
    p.bias = random_tensor({out_ch, 1, 1, 1}, seed + 2, T(0.2));
    p.stride = stride;
    p.dilation = dilation;
    const TensorT<T> r = projection(conv2d_forward(input, p).shape, seed + 3);

    auto f = [&](std::span<const T>) {
      return dot(conv2d_forward(input, p), r);
    };

    TensorT<T> gi(input.shape), gw(p.weights.shape), gb(p.bias.shape);
    conv2d_backward(input, p, r, &gi, &gw, &gb);

    record(name + ".input",
           grad_check<T>(f, std::span<T>(input.data), gi.data, linear_eps()));
    record(name + ".weights",
           grad_check<T>(f, std::span<T>(p.weights.data), gw.data,
                         linear_eps()));
    record(name + ".bias",
           grad_check<T>(f, std::span<T>(p.bias.data), gb.data,
                         linear_eps()));
  }

  void check_relu(uint64_t seed) {
    TensorT<T> input = random_tensor({1, 2, 6, 6}, seed, T(1));
    const TensorT<T> r = projection(input.shape, seed + 1);
    auto f = [&](std::span<const T>) { return dot(relu_forward(input), r); };
    TensorT<T> gi(input.shape);
    relu_backward(input, r, gi);
    auto kink = [](std::span<const T> x, size_t i) {
      return std::abs(double(x[i]));
    };
    record("relu",
           grad_check<T>(f, std::span<T>(input.data), gi.data, eps, kink));
  }

  void check_upsample(uint64_t seed) {
    TensorT<T> input = random_tensor({1, 2, 4, 5}, seed, T(1));
    const TensorT<T> r = projection({1, 2, 8, 10}, seed + 1);
    auto f = [&](std::span<const T>) {
      return dot(upsample2x_forward(input), r);
    };
    TensorT<T> gi(input.shape);
    upsample2x_backward(r, gi);
    record("upsample2x",
           grad_check<T>(f, std::span<T>(input.data), gi.data,
                         linear_eps()));
  }

  void check_add(uint64_t seed) {
    TensorT<T> a = random_tensor({1, 1, 4, 4}, seed, T(1));
    TensorT<T> b = random_tensor({1, 1, 4, 4}, seed + 1, T(1));
    const TensorT<T> r = projection(a.shape, seed + 2);
    auto f = [&](std::span<const T>) { return dot(add_forward(a, b), r); };
    record("add",
           grad_check<T>(f, std::span<T>(a.data), r.data, linear_eps()));
  }

  void check_truncate(uint64_t seed) {
    const T tau = T(8) / T(255);
    TensorT<T> y = random_tensor({1, 1, 6, 6}, seed, T(0.3));
    for (T& v : y.data) v += T(0.5);
    const TruncationBoundsT<T> bounds = make_bounds(y, tau);
    TensorT<T> x = y;
    Rng rng(seed + 1);
    for (T& v : x.data)
      v += (T(2) * T(rng.next_double()) - T(1)) * tau * T(2);
    const TensorT<T> r = projection(x.shape, seed + 2);
    auto f = [&](std::span<const T>) {
      return dot(truncate_forward(x, bounds), r);
    };
    TensorT<T> gi(x.shape);
    truncate_backward(x, bounds, r, gi);
    auto kink = [&](std::span<const T> xd, size_t i) {
      return std::min(std::abs(double(xd[i]) - double(bounds.lo.data[i])),
                      std::abs(double(xd[i]) - double(bounds.hi.data[i])));
    };
    record("truncate",
           grad_check<T>(f, std::span<T>(x.data), gi.data, eps, kink));
  }

  // Shared fixture for the losses: half the pixels inside the tube, half
  // outside, all at a safe distance from the |diff| == tau kink.
  void check_losses(uint64_t seed) {
    const T tau = T(6) / T(255);
    TensorT<T> x = random_tensor({1, 1, 6, 6}, seed, T(0.2));
    for (T& v : x.data) v += T(0.5);
    TensorT<T> x_hat = x;
    Rng rng(seed + 1);
    for (T& v : x_hat.data) {
      const bool outside = rng.next_below(2) == 0;
      const T mag = outside ? tau * (T(1.5) + T(rng.next_double()))
                            : tau * T(0.5) * T(rng.next_double());
      v += rng.next_below(2) == 0 ? mag : -mag;
    }
    auto kink = [&](std::span<const T> xd, size_t i) {
      return std::abs(std::abs(double(xd[i]) - double(x.data[i])) -
                      double(tau));
    };

    {
      auto f = [&](std::span<const T>) { return mse_loss(x_hat, x); };
      TensorT<T> g(x_hat.shape);
      mse_loss_backward(x_hat, x, T(1), g);
      record("mse_loss",
             grad_check<T>(f, std::span<T>(x_hat.data), g.data, eps));
    }
    {
      auto f = [&](std::span<const T>) {
        return truncated_l2_loss(x_hat, x, tau);
      };
      TensorT<T> g(x_hat.shape);
      truncated_l2_loss_backward(x_hat, x, tau, T(1), g);
      record("truncated_l2_loss",
             grad_check<T>(f, std::span<T>(x_hat.data), g.data, eps, kink));
    }
    {
      auto f = [&](std::span<const T>) { return linf_loss(x_hat, x, tau); };
      TensorT<T> g(x_hat.shape);
      linf_loss_backward(x_hat, x, tau, T(1), g);
      record("linf_loss",
             grad_check<T>(f, std::span<T>(x_hat.data), g.data, eps, kink));
    }
    {
      const T lambda = T(0.2);
      auto f = [&](std::span<const T>) {
        return joint_loss(x_hat, x, tau, lambda);
      };
      TensorT<T> g(x_hat.shape);
      joint_loss_backward(x_hat, x, tau, lambda, g);
      record("joint_loss",
             grad_check<T>(f, std::span<T>(x_hat.data), g.data, eps, kink));
    }
  }

  // Full pipeline on an 8x8 input: net -> truncation -> joint loss,
  // checked against every parameter tensor and the input. Weight scales
  // keep the gradient flow healthy; the tube half-width is derived from
  // the measured output deviation so nothing clamps at the base point;
  // and any coordinate whose ReLU/clamp/loss activity pattern flips
  // between the +/- eps evaluations is excluded as kink-adjacent.
  void check_network(uint64_t seed) {
    const ModelConfig cfg{4, 2, 2, 3};
    const Plan plan = make_plan(cfg);
    Model proto = build_model(cfg, seed);
    std::vector<ConvParamsT<T>> params;
    Rng wrng(seed + 7);
    for (size_t i = 0; i < proto.params.size(); ++i) {
      ConvParamsT<T> p;
      p.weights = TensorT<T>(proto.params[i].weights.shape);
      p.bias = TensorT<T>(proto.params[i].bias.shape);
      p.stride = proto.params[i].stride;
      p.dilation = proto.params[i].dilation;
      const bool tail = i + 1 == proto.params.size();
      const T scale = (tail ? T(0.04) : T(0.6)) *
                      T(std::sqrt(6.0 / double(p.in_channels() * p.kernel() *
                                               p.kernel())));
      for (T& v : p.weights.data)
        v = (T(2) * T(wrng.next_double()) - T(1)) * scale;
      for (T& v : p.bias.data)
        v = tail ? (T(2) * T(wrng.next_double()) - T(1)) * T(0.001)
                 : T(0.4) + (T(2) * T(wrng.next_double()) - T(1)) * T(0.01);
      params.push_back(std::move(p));
    }

    const T lambda = T(0.2);
    TensorT<T> y = random_tensor({1, 1, 8, 8}, seed + 1, T(0.2));
    for (T& v : y.data) v += T(0.5);

    Workspace<T> probe;
    TensorT<T> x = net_forward(plan, params, y, probe);  // x_hat layout
    double max_dev = 0;
    for (size_t i = 0; i < x.data.size(); ++i)
      max_dev = std::max(max_dev,
                         std::abs(double(x.data[i]) - double(y.data[i])));
    const T tau = T(std::max(0.12, 2.5 * max_dev));
    if (double(tau) > 0.45)
      throw Error("gradcheck fixture: network output deviates too far");
    const TruncationBoundsT<T> bounds = make_bounds(y, tau);

    // Target offsets: 0.4 tau inside the tube or 1.5..1.8 tau outside it.
    Rng orng(seed + 2);
    for (T& v : x.data) {
      const bool outside = orng.next_below(4) == 0;
      const T mag = outside ? tau * (T(1.5) + T(0.3) * T(orng.next_double()))
                            : tau * T(0.4) * T(orng.next_double());
      v += orng.next_below(2) == 0 ? mag : -mag;
    }

    // All parameters are checked as one flat vector so that the error
    // normalization sees the network's global gradient scale; f writes the
    // flat view back into the layer tensors before every evaluation.
    auto unflatten = [&](std::span<const T> flat) {
      size_t pos = 0;
      for (auto& p : params) {
        std::copy_n(flat.begin() + pos, p.weights.data.size(),
                    p.weights.data.begin());
        pos += p.weights.data.size();
        std::copy_n(flat.begin() + pos, p.bias.data.size(),
                    p.bias.data.begin());
        pos += p.bias.data.size();
      }
    };
    auto f_params = [&](std::span<const T> flat) {
      unflatten(flat);
      Workspace<T> ws;
      const TensorT<T>& x_tilde = net_forward(plan, params, y, ws);
      return joint_loss(truncate_forward(x_tilde, bounds), x, tau, lambda);
    };
    auto f_input = [&](std::span<const T>) {
      Workspace<T> ws;
      const TensorT<T>& x_tilde = net_forward(plan, params, y, ws);
      return joint_loss(truncate_forward(x_tilde, bounds), x, tau, lambda);
    };
    // FNV-1a over every piecewise-region bit of the composition.
    auto signature = [&](std::span<const T>) {
      Workspace<T> ws;
      const TensorT<T>& x_tilde = net_forward(plan, params, y, ws);
      uint64_t h = 1469598103934665603ULL;
      auto mix = [&h](bool bit) {
        h ^= uint64_t(bit) + 1;
        h *= 1099511628211ULL;
      };
      for (size_t s = 0; s < plan.steps.size(); ++s)
        if (plan.steps[s].kind == StepKind::Relu)
          for (const T v : ws.values[plan.steps[s].input0].data)
            mix(v > T(0));
      for (size_t i = 0; i < x_tilde.data.size(); ++i) {
        mix(x_tilde.data[i] < bounds.lo.data[i]);
        mix(x_tilde.data[i] > bounds.hi.data[i]);
        const T clamped =
            std::clamp(x_tilde.data[i], bounds.lo.data[i], bounds.hi.data[i]);
        mix(std::abs(double(clamped) - double(x.data[i])) > double(tau));
      }
      return h;
    };

    std::vector<ConvParamsT<T>> grads = make_param_grads(params);
    TensorT<T> grad_input(y.shape);
    {
      Workspace<T> ws;
      const TensorT<T>& x_tilde = net_forward(plan, params, y, ws);
      const TensorT<T> x_hat = truncate_forward(x_tilde, bounds);
      TensorT<T> grad_hat(x_hat.shape);
      joint_loss_backward(x_hat, x, tau, lambda, grad_hat);
      TensorT<T> grad_tilde(x_tilde.shape);
      truncate_backward(x_tilde, bounds, grad_hat, grad_tilde);
      net_backward(plan, params, ws, grad_tilde, &grads, &grad_input);
    }

    std::vector<T> flat, flat_grad;
    for (size_t i = 0; i < params.size(); ++i) {
      flat.insert(flat.end(), params[i].weights.data.begin(),
                  params[i].weights.data.end());
      flat.insert(flat.end(), params[i].bias.data.begin(),
                  params[i].bias.data.end());
      flat_grad.insert(flat_grad.end(), grads[i].weights.data.begin(),
                       grads[i].weights.data.end());
      flat_grad.insert(flat_grad.end(), grads[i].bias.data.begin(),
                       grads[i].bias.data.end());
    }
    record("network.joint_loss",
           grad_check<T>(f_params, std::span<T>(flat), flat_grad, eps, {},
                         signature));
    unflatten(flat);  // restore the base point
    record("network.input", grad_check<T>(f_input, std::span<T>(y.data),
                                          grad_input.data, eps, {}, signature));
  }

  void run() {
    check_conv("conv2d", {1, 3, 6, 6}, 2, 3, 1, 1, 11);
    check_conv("conv2d_s2", {1, 2, 6, 6}, 3, 3, 2, 1, 22);
    check_conv("conv2d_d2", {1, 2, 8, 8}, 2, 3, 1, 2, 33);
    check_conv("conv2d_k1s2", {1, 2, 6, 6}, 3, 1, 2, 1, 44);
    check_relu(55);
    check_upsample(66);
    check_add(77);
    check_truncate(88);
    check_losses(99);
    check_network(123);
  }
};

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(bool f64) {
  if (f64) {
    Suite<double> suite{1e-5, 1e-6, {}};
    suite.run();
    return suite.entries;
  }
  Suite<float> suite{3e-3, 1e-3, {}};
  suite.run();
  return suite.entries;
}

}  // namespace lnl
