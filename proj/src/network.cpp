#include "lnl/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "lnl/codec.hpp"

namespace lnl {

namespace {

struct PlanBuilder {
  Plan plan;
  std::vector<ConvParams>* params = nullptr;  // null when only planning
  ModelConfig cfg;

  int value_count = 1;  // value 0 is the input

  int conv(int from, const std::string& name, int in_ch, int out_ch,
           int kernel, int stride, int dilation) {
    const int pidx = static_cast<int>(plan.conv_names.size());
    plan.conv_names.push_back(name);
    if (params) {
      ConvParams p;
      p.weights = Tensor({out_ch, in_ch, kernel, kernel});
      p.bias = Tensor({out_ch, 1, 1, 1});
      p.stride = stride;
      p.dilation = dilation;
      params->push_back(std::move(p));
    }
    plan.steps.push_back({StepKind::Conv, from, -1, pidx});
    return value_count++;
  }
  int relu(int from) {
    plan.steps.push_back({StepKind::Relu, from, -1, -1});
    return value_count++;
  }
  int upsample(int from) {
    plan.steps.push_back({StepKind::Upsample2x, from, -1, -1});
    return value_count++;
  }
  int add(int a, int b) {
    plan.steps.push_back({StepKind::Add, a, b, -1});
    return value_count++;
  }
};

Plan build_plan(const ModelConfig& cfg, std::vector<ConvParams>* params) {
  if (cfg.num_body_blocks < 1)
    throw Error("model config: num_body_blocks must be >= 1");
  if (cfg.dilation != 2 || cfg.kernel != 3)
    throw Error("model config: dilation must be 2 and kernel 3");
  const int base = cfg.base_channels;
  const int wide = 2 * base;
  const int k = cfg.kernel, d = cfg.dilation;

  PlanBuilder b;
  b.params = params;
  b.cfg = cfg;

  const int head = b.relu(b.conv(0, "head", 1, base, k, 1, 1));

  // Downsampling residual block: strided main path, 1x1 strided skip.
  int main_path = b.relu(b.conv(head, "down.conv1", base, wide, k, 2, 1));
  main_path = b.conv(main_path, "down.conv2", wide, wide, k, 1, 1);
  const int down_skip = b.conv(head, "down.skip", base, wide, 1, 2, 1);
  int body = b.add(main_path, down_skip);

  for (int i = 0; i < cfg.num_body_blocks; ++i) {
    const std::string prefix = "body" + std::to_string(i);
    int t = b.relu(b.conv(body, prefix + ".conv1", wide, wide, k, 1, d));
    t = b.conv(t, prefix + ".conv2", wide, wide, k, 1, d);
    body = b.add(t, body);
  }

  // Upsampling residual block: nearest 2x on both paths.
  int up = b.upsample(body);
  up = b.relu(b.conv(up, "up.conv1", wide, base, k, 1, 1));
  up = b.conv(up, "up.conv2", base, base, k, 1, 1);
  int up_skip = b.upsample(body);
  up_skip = b.conv(up_skip, "up.skip", wide, base, 1, 1, 1);
  const int merged = b.add(up, up_skip);

  const int tail = b.conv(merged, "tail", base, 1, k, 1, 1);
  b.plan.output_id = b.add(tail, 0);  // global skip from the input

  b.plan.num_values = b.value_count;
  return std::move(b.plan);
}

// Reflect-pads the right/bottom edge by one pixel when a dimension is odd
// (mirror about the last sample; dimension-1 inputs replicate).
Tensor pad_to_even(const Tensor& t) {
  const int h = t.shape.h, w = t.shape.w;
  const int ph = h + (h % 2), pw = w + (w % 2);
  if (ph == h && pw == w) return t;
  Tensor out({1, 1, ph, pw});
  for (int r = 0; r < ph; ++r) {
    const int sr = r < h ? r : (h > 1 ? h - 2 : 0);
    for (int c = 0; c < pw; ++c) {
      const int sc = c < w ? c : (w > 1 ? w - 2 : 0);
      out.at(0, 0, r, c) = t.at(0, 0, sr, sc);
    }
  }
  return out;
}

Tensor crop(const Tensor& t, int h, int w) {
  if (t.shape.h == h && t.shape.w == w) return t;
  Tensor out({1, 1, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(0, 0, r, c) = t.at(0, 0, r, c);
  return out;
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

uint32_t get_u32le(const std::vector<uint8_t>& in, size_t& pos) {
  if (in.size() - pos < 4) throw ParseError("weights: truncated file");
  const uint32_t v = static_cast<uint32_t>(in[pos]) |
                     (static_cast<uint32_t>(in[pos + 1]) << 8) |
                     (static_cast<uint32_t>(in[pos + 2]) << 16) |
                     (static_cast<uint32_t>(in[pos + 3]) << 24);
  pos += 4;
  return v;
}

void put_tensor(std::vector<uint8_t>& out, const std::string& name,
                const std::vector<uint32_t>& dims,
                const std::vector<float>& data) {
  put_u32le(out, static_cast<uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32le(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) put_u32le(out, d);
  size_t expect = 1;
  for (uint32_t d : dims) expect *= d;
  if (expect != data.size())
    throw Error("weights: dims/payload mismatch for " + name);
  const size_t base = out.size();
  out.resize(base + data.size() * 4);
  for (size_t i = 0; i < data.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    out[base + 4 * i] = static_cast<uint8_t>(bits);
    out[base + 4 * i + 1] = static_cast<uint8_t>(bits >> 8);
    out[base + 4 * i + 2] = static_cast<uint8_t>(bits >> 16);
    out[base + 4 * i + 3] = static_cast<uint8_t>(bits >> 24);
  }
}

void get_tensor(const std::vector<uint8_t>& in, size_t& pos,
                std::string& name, std::vector<uint32_t>& dims,
                std::vector<float>& data) {
  const uint32_t name_len = get_u32le(in, pos);
  if (name_len > 1024 || in.size() - pos < name_len)
    throw ParseError("weights: bad tensor name length");
  name.assign(in.begin() + pos, in.begin() + pos + name_len);
  pos += name_len;
  const uint32_t rank = get_u32le(in, pos);
  if (rank > 4) throw ParseError("weights: rank > 4");
  dims.resize(rank);
  size_t count = 1;
  for (uint32_t& d : dims) {
    d = get_u32le(in, pos);
    count *= d;
  }
  if (count > (1u << 28) || in.size() - pos < count * 4)
    throw ParseError("weights: truncated tensor payload");
  data.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = static_cast<uint32_t>(in[pos]) |
                          (static_cast<uint32_t>(in[pos + 1]) << 8) |
                          (static_cast<uint32_t>(in[pos + 2]) << 16) |
                          (static_cast<uint32_t>(in[pos + 3]) << 24);
    std::memcpy(&data[i], &bits, 4);
    pos += 4;
  }
}

}  // namespace

Plan make_plan(const ModelConfig& cfg) { return build_plan(cfg, nullptr); }

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  Model model;
  model.config = cfg;
  Plan plan = build_plan(cfg, &model.params);
  model.names = plan.conv_names;

  Rng rng(seed);
  for (size_t i = 0; i < model.params.size(); ++i) {
    ConvParams& p = model.params[i];
    // The tail and every residual branch's closing conv start at zero, so
    // the whole network is an exact identity at initialization and the
    // un-normalized residual cascade cannot amplify gradients. Without
    // this the backward gain through 8 additive blocks reaches the
    // hundreds and the first optimizer steps throw the output out of the
    // truncation tube, where the clamp's zero derivative strands it.
    const std::string& name = model.names[i];
    if (name == "tail" || name.ends_with(".conv2")) continue;
    const int fan_in =
        p.in_channels() * p.kernel() * p.kernel();
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (float& w : p.weights.data)
      w = (2.0f * rng.next_float() - 1.0f) * bound;
  }
  return model;
}

template <typename T>
std::vector<ConvParamsT<T>> make_param_grads(
    const std::vector<ConvParamsT<T>>& params) {
  std::vector<ConvParamsT<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    ConvParamsT<T> g;
    g.weights = TensorT<T>(p.weights.shape);
    g.bias = TensorT<T>(p.bias.shape);
    g.stride = p.stride;
    g.dilation = p.dilation;
    grads.push_back(std::move(g));
  }
  return grads;
}

template <typename T>
const TensorT<T>& net_forward(const Plan& plan,
                              const std::vector<ConvParamsT<T>>& params,
                              const TensorT<T>& input, Workspace<T>& ws) {
  if (input.shape.h % 2 != 0 || input.shape.w % 2 != 0)
    throw ShapeError("net_forward: spatial dims must be even, got " +
                     input.shape.str());
  ws.values.assign(plan.num_values, TensorT<T>{});
  ws.values[0] = input;
  int vid = 1;
  for (const PlanStep& step : plan.steps) {
    switch (step.kind) {
      case StepKind::Conv:
        ws.values[vid] =
            conv2d_forward(ws.values[step.input0], params[step.param]);
        break;
      case StepKind::Relu:
        ws.values[vid] = relu_forward(ws.values[step.input0]);
        break;
      case StepKind::Upsample2x:
        ws.values[vid] = upsample2x_forward(ws.values[step.input0]);
        break;
      case StepKind::Add:
        ws.values[vid] =
            add_forward(ws.values[step.input0], ws.values[step.input1]);
        break;
    }
    ++vid;
  }
  return ws.values[plan.output_id];
}

template <typename T>
void net_backward(const Plan& plan, const std::vector<ConvParamsT<T>>& params,
                  Workspace<T>& ws, const TensorT<T>& grad_output,
                  std::vector<ConvParamsT<T>>* param_grads,
                  TensorT<T>* grad_input) {
  for (auto& v : ws.values) {
    v.ensure_grad();
    v.zero_grad();
  }
  TensorT<T>& out = ws.values[plan.output_id];
  check_same_shape(out.shape, grad_output.shape, "net_backward");
  out.grad = grad_output.data;

  // Grad buffers live inside the workspace values; ops accumulate, so fan-out
  // (the skip connections) sums correctly.
  auto as_grad_tensor = [](TensorT<T>& v) {
    TensorT<T> g;
    g.shape = v.shape;
    g.data = std::move(v.grad);
    return g;
  };

  for (int i = static_cast<int>(plan.steps.size()) - 1; i >= 0; --i) {
    const PlanStep& step = plan.steps[i];
    const int vid = i + 1;
    TensorT<T> gout = as_grad_tensor(ws.values[vid]);
    TensorT<T>& in0 = ws.values[step.input0];
    switch (step.kind) {
      case StepKind::Conv: {
        TensorT<T> gin;
        gin.shape = in0.shape;
        gin.data = std::move(in0.grad);
        ConvParamsT<T>* pg =
            param_grads ? &(*param_grads)[step.param] : nullptr;
        conv2d_backward(in0, params[step.param], gout,
                        step.input0 == 0 && !grad_input ? nullptr : &gin,
                        pg ? &pg->weights : nullptr, pg ? &pg->bias : nullptr);
        in0.grad = std::move(gin.data);
        break;
      }
      case StepKind::Relu: {
        TensorT<T> gin;
        gin.shape = in0.shape;
        gin.data = std::move(in0.grad);
        relu_backward(in0, gout, gin);
        in0.grad = std::move(gin.data);
        break;
      }
      case StepKind::Upsample2x: {
        TensorT<T> gin;
        gin.shape = in0.shape;
        gin.data = std::move(in0.grad);
        upsample2x_backward(gout, gin);
        in0.grad = std::move(gin.data);
        break;
      }
      case StepKind::Add: {
        for (size_t j = 0; j < gout.data.size(); ++j) {
          in0.grad[j] += gout.data[j];
          ws.values[step.input1].grad[j] += gout.data[j];
        }
        break;
      }
    }
    ws.values[vid].grad = std::move(gout.data);
  }

  if (grad_input) {
    grad_input->ensure_grad();
    for (size_t j = 0; j < ws.values[0].grad.size(); ++j)
      grad_input->data[j] += ws.values[0].grad[j];
  }
}

Tensor refine_tilde(const Model& model, const Tensor& y_norm) {
  const Plan plan = make_plan(model.config);
  Workspace<float> ws;
  return net_forward(plan, model.params, y_norm, ws);
}

GrayImage forward_refine(const Model& model, const GrayImage& y_img,
                         int tau) {
  if (tau < 1 || tau > kMaxTau)
    throw Error("forward_refine: tau " + std::to_string(tau) +
                " outside [1, 8]");
  const Tensor y = to_normalized(y_img);
  const Tensor padded = pad_to_even(y);
  const Plan plan = make_plan(model.config);
  Workspace<float> ws;
  const Tensor& x_tilde = net_forward(plan, model.params, padded, ws);
  const Tensor cropped = crop(x_tilde, y.shape.h, y.shape.w);
  const TruncationBounds bounds =
      make_bounds(y, static_cast<float>(tau) / 255.0f);
  return from_normalized(truncate_forward(cropped, bounds));
}

std::vector<uint8_t> serialize_weights(const Model& model) {
  std::vector<uint8_t> out = {'L', 'N', 'L', 'W', 1};
  put_u32le(out, static_cast<uint32_t>(model.config.base_channels));
  put_u32le(out, static_cast<uint32_t>(model.config.num_body_blocks));
  put_u32le(out, static_cast<uint32_t>(model.config.dilation));
  put_u32le(out, static_cast<uint32_t>(model.config.kernel));
  put_u32le(out, static_cast<uint32_t>(model.params.size() * 2));
  for (size_t i = 0; i < model.params.size(); ++i) {
    const ConvParams& p = model.params[i];
    const Shape ws = p.weights.shape;
    put_tensor(out, model.names[i] + ".w",
               {static_cast<uint32_t>(ws.n), static_cast<uint32_t>(ws.c),
                static_cast<uint32_t>(ws.h), static_cast<uint32_t>(ws.w)},
               p.weights.data);
    put_tensor(out, model.names[i] + ".b",
               {static_cast<uint32_t>(p.out_channels())}, p.bias.data);
  }
  return out;
}

Model parse_weights(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 25) throw ParseError("weights: truncated file");
  if (bytes[0] != 'L' || bytes[1] != 'N' || bytes[2] != 'L' ||
      bytes[3] != 'W')
    throw ParseError("weights: bad magic");
  if (bytes[4] != 1)
    throw ParseError("weights: unsupported version " +
                     std::to_string(bytes[4]));
  size_t pos = 5;
  ModelConfig cfg;
  cfg.base_channels = static_cast<int>(get_u32le(bytes, pos));
  cfg.num_body_blocks = static_cast<int>(get_u32le(bytes, pos));
  cfg.dilation = static_cast<int>(get_u32le(bytes, pos));
  cfg.kernel = static_cast<int>(get_u32le(bytes, pos));
  const uint32_t tensor_count = get_u32le(bytes, pos);

  Model model;
  model.config = cfg;
  Plan plan = build_plan(cfg, &model.params);
  model.names = plan.conv_names;
  if (tensor_count != model.params.size() * 2)
    throw ParseError("weights: tensor count does not match config");

  for (size_t i = 0; i < model.params.size(); ++i) {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;

    get_tensor(bytes, pos, name, dims, data);
    const Shape want = model.params[i].weights.shape;
    if (name != model.names[i] + ".w" || dims.size() != 4 ||
        dims[0] != static_cast<uint32_t>(want.n) ||
        dims[1] != static_cast<uint32_t>(want.c) ||
        dims[2] != static_cast<uint32_t>(want.h) ||
        dims[3] != static_cast<uint32_t>(want.w))
      throw ParseError("weights: tensor " + name +
                       " does not match config layout");
    model.params[i].weights.data = std::move(data);

    get_tensor(bytes, pos, name, dims, data);
    if (name != model.names[i] + ".b" || dims.size() != 1 ||
        dims[0] != static_cast<uint32_t>(model.params[i].out_channels()))
      throw ParseError("weights: tensor " + name +
                       " does not match config layout");
    model.params[i].bias.data = std::move(data);
  }
  if (pos != bytes.size())
    throw ParseError("weights: trailing bytes after last tensor");
  return model;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_weights(bytes);
}

Model load_weights(const std::filesystem::path& path,
                   const ModelConfig& expected) {
  Model model = load_weights(path);
  if (!(model.config == expected))
    throw ParseError("weights: file config (base " +
                     std::to_string(model.config.base_channels) + ", blocks " +
                     std::to_string(model.config.num_body_blocks) +
                     ") does not match expectation");
  return model;
}

template std::vector<ConvParamsT<float>> make_param_grads<float>(
    const std::vector<ConvParamsT<float>>&);
template std::vector<ConvParamsT<double>> make_param_grads<double>(
    const std::vector<ConvParamsT<double>>&);
template const TensorT<float>& net_forward<float>(
    const Plan&, const std::vector<ConvParamsT<float>>&,
    const TensorT<float>&, Workspace<float>&);
template const TensorT<double>& net_forward<double>(
    const Plan&, const std::vector<ConvParamsT<double>>&,
    const TensorT<double>&, Workspace<double>&);
template void net_backward<float>(const Plan&,
                                  const std::vector<ConvParamsT<float>>&,
                                  Workspace<float>&, const TensorT<float>&,
                                  std::vector<ConvParamsT<float>>*,
                                  TensorT<float>*);
template void net_backward<double>(const Plan&,
                                   const std::vector<ConvParamsT<double>>&,
                                   Workspace<double>&, const TensorT<double>&,
                                   std::vector<ConvParamsT<double>>*,
                                   TensorT<double>*);

}  // namespace lnl
