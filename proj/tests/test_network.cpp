#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lnl/codec.hpp"
#include "lnl/eval.hpp"
#include "lnl/network.hpp"
#include "support/synth.hpp"
#include "support/tempdir.hpp"

using namespace lnl;
using testsupport::synth_image;
using testsupport::TempDir;

namespace {

// Independent shape walk of the layer stack; mirrors the architecture
// description rather than the plan builder.
size_t expected_param_count(int base, int blocks) {
  auto conv = [](int out, int in, int k) { return size_t(out) * in * k * k + out; };
  size_t total = conv(base, 1, 3);                   // head
  total += conv(2 * base, base, 3);                  // down main 1
  total += conv(2 * base, 2 * base, 3);              // down main 2
  total += conv(2 * base, base, 1);                  // down skip
  total += size_t(blocks) * 2 * conv(2 * base, 2 * base, 3);  // body
  total += conv(base, 2 * base, 3);                  // up main 1
  total += conv(base, base, 3);                      // up main 2
  total += conv(base, 2 * base, 1);                  // up skip
  total += conv(1, base, 3);                         // tail
  return total;
}

size_t count_params(const Model& m) {
  size_t total = 0;
  for (const auto& p : m.params)
    total += p.weights.data.size() + p.bias.data.size();
  return total;
}

}  // namespace

TEST_CASE("desk config forward preserves shape") {
  const ModelConfig cfg{16, 8, 2, 3};
  const Model model = build_model(cfg, 1);
  const Plan plan = make_plan(cfg);
  Tensor in({1, 1, 64, 64});
  Rng rng(2);
  for (auto& v : in.data) v = rng.next_float();
  Workspace<float> ws;
  CHECK(net_forward(plan, model.params, in, ws).shape == Shape{1, 1, 64, 64});
}

TEST_CASE("parameter count matches the shape-walking oracle") {
  const Model desk = build_model({16, 8, 2, 3}, 7);
  CHECK(count_params(desk) == expected_param_count(16, 8));
  CHECK(count_params(desk) == 170177);  // pinned

  const Model tiny = build_model({4, 2, 2, 3}, 7);
  CHECK(count_params(tiny) == expected_param_count(4, 2));
}

TEST_CASE("zero-initialized tail makes the initial network an identity") {
  const ModelConfig cfg{8, 3, 2, 3};
  const Model model = build_model(cfg, 99);
  const Plan plan = make_plan(cfg);
  Tensor in({1, 1, 32, 32});
  Rng rng(3);
  for (auto& v : in.data) v = rng.next_float();
  Workspace<float> ws;
  const Tensor& out = net_forward(plan, model.params, in, ws);
  CHECK(out.data == in.data);  // exact: tail weights and bias start at zero
}

TEST_CASE("build_model is deterministic in the seed") {
  const Model a = build_model({8, 2, 2, 3}, 5);
  const Model b = build_model({8, 2, 2, 3}, 5);
  const Model c = build_model({8, 2, 2, 3}, 6);
  CHECK(a.params.size() == b.params.size());
  bool same = true, differs = false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    same = same && a.params[i].weights.data == b.params[i].weights.data;
    differs = differs || a.params[i].weights.data != c.params[i].weights.data;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(build_model({16, 0, 2, 3}, 1), Error);
  CHECK_THROWS_AS(build_model({16, 8, 1, 3}, 1), Error);
  CHECK_THROWS_AS(build_model({16, 8, 2, 5}, 1), Error);
}

TEST_CASE("forward_refine stays within tau of the decoded input") {
  const Model model = build_model({8, 2, 2, 3}, 11);
  const GrayImage x = synth_image(48, 48, 13);
  for (int tau : {1, 4, 8}) {
    const auto [stream, y] = encode_image(x, tau);
    const GrayImage refined = forward_refine(model, y, tau);
    CHECK(refined.width == y.width);
    CHECK(refined.height == y.height);
    CHECK(linf_bound(refined, y) <= tau);
    CHECK(linf_bound(refined, x) <= 2 * tau);
  }
  CHECK_THROWS_AS(forward_refine(model, x, 0), Error);
  CHECK_THROWS_AS(forward_refine(model, x, 9), Error);
}

TEST_CASE("forward_refine handles odd dimensions by reflect padding") {
  const Model model = build_model({8, 2, 2, 3}, 17);
  for (auto [w, h] : {std::pair{47, 33}, {48, 33}, {47, 34}, {1, 1}}) {
    const GrayImage x = synth_image(w, h, uint64_t(w * 100 + h));
    const auto [stream, y] = encode_image(x, 3);
    const GrayImage refined = forward_refine(model, y, 3);
    CHECK(refined.width == w);
    CHECK(refined.height == h);
    CHECK(linf_bound(refined, y) <= 3);
  }
}

TEST_CASE("refinement bound holds under a hostile model") {
  // Giant weights drive the raw network far outside the tube; truncation
  // must still enforce the bound.
  Model model = build_model({4, 1, 2, 3}, 3);
  for (auto& p : model.params)
    for (auto& w : p.weights.data) w = w == 0.0f ? 5.0f : w * 50.0f;
  const GrayImage x = synth_image(32, 32, 5);
  for (int tau = 1; tau <= 8; ++tau) {
    const auto [stream, y] = encode_image(x, tau);
    const GrayImage refined = forward_refine(model, y, tau);
    CHECK(linf_bound(refined, y) <= tau);
    CHECK(linf_bound(refined, x) <= 2 * tau);
  }
}

TEST_CASE("weight save/load roundtrip is bit-exact") {
  TempDir dir("lnl_weights");
  const Model model = build_model({8, 2, 2, 3}, 23);
  const auto path = dir.file("m.lnw");
  save_weights(model, path);
  const Model loaded = load_weights(path);
  CHECK(loaded.config == model.config);
  REQUIRE(loaded.params.size() == model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i) {
    CHECK(loaded.names[i] == model.names[i]);
    CHECK(loaded.params[i] == model.params[i]);
  }
}

TEST_CASE("weight file errors") {
  TempDir dir("lnl_weights_err");
  const Model model = build_model({8, 2, 2, 3}, 29);
  const auto path = dir.file("m.lnw");
  save_weights(model, path);

  auto bytes = serialize_weights(model);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_WITH_AS(parse_weights(bytes), doctest::Contains("truncated"),
                       ParseError);

  auto bad_magic = serialize_weights(model);
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(parse_weights(bad_magic), doctest::Contains("magic"),
                       ParseError);

  // config mismatch: an 8-channel file where 16 channels are expected
  CHECK_THROWS_AS(load_weights(path, ModelConfig{16, 8, 2, 3}), ParseError);
  CHECK_NOTHROW(load_weights(path, ModelConfig{8, 2, 2, 3}));
}

TEST_CASE("refinement is deterministic") {
  const Model model = build_model({8, 2, 2, 3}, 31);
  const GrayImage x = synth_image(40, 40, 37);
  const auto [stream, y] = encode_image(x, 4);
  const GrayImage a = forward_refine(model, y, 4);
  const GrayImage b = forward_refine(model, y, 4);
  CHECK(a == b);
}
