#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "vidrep/gradcheck.hpp"
#include "vidrep/ops.hpp"

using namespace vidrep;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kConfigs = 20;

// Values kept away from the kinks of abs/relu/max/min so central differences
// see a smooth function.
Tensor randn_away(const Shape& shape, Rng& rng, double kink = 0.0, double margin = 0.1) {
  Tensor t = Tensor::randn(shape, rng);
  for (double& v : t.vec()) {
    if (std::fabs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin) * 1.5;
  }
  return t;
}

// Reduce an op output to a scalar through a fixed random cotangent so every
// output coordinate participates in the check. The cotangent depends only on
// the output shape, so repeated evaluations inside the finite-difference loop
// see the same function.
Tensor weighted(const Tensor& y) {
  Rng rng(4242, 97);
  Tensor r = Tensor::randn(y.shape(), rng, 1.0, false);
  return sum(mul(y, r));
}

void sweep(const char* name, const std::function<GradCheckResult(Rng&)>& one_config) {
  GradCheckResult worst;
  for (int cfg = 0; cfg < kConfigs; ++cfg) {
    Rng rng(1000 + cfg, 0);
    GradCheckResult r = one_config(rng);
    INFO(name << " config " << cfg << " err " << r.max_rel_err << " nan " << r.has_nan);
    REQUIRE(r.ok(kTol));
    if (r.max_rel_err > worst.max_rel_err) worst = r;
  }
  INFO(name << " worst " << worst.max_rel_err);
  REQUIRE(worst.max_rel_err < kTol);
}

}  // namespace

TEST_CASE("trivial op values") {
  Tensor x = Tensor::scalar(-1.0, true);
  Tensor y = relu(x);
  REQUIRE(y.value() == 0.0);
  backward(y);
  REQUIRE(x.grad()[0] == 0.0);

  Tensor v = Tensor::from_data({4}, {1, 2, 3, 4}, true);
  Tensor m = mean(v);
  REQUIRE(m.value() == 2.5);
  backward(m);
  for (int i = 0; i < 4; ++i) REQUIRE(v.grad()[i] == 0.25);

  Rng rng(7, 0);
  Tensor a = Tensor::randn({3, 3}, rng, 1.0, false);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor p = matmul(eye, a);
  for (int i = 0; i < 9; ++i) REQUIRE(p.data()[i] == Catch::Approx(a.data()[i]).margin(1e-15));
}

TEST_CASE("gradcheck: elementwise binary ops") {
  sweep("add", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 5}, rng);
    Tensor b = Tensor::randn({5}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return weighted(add(t, b)); }, x, kEps);
  });
  sweep("add-broadcast-side", [](Rng& rng) {
    Tensor big = Tensor::randn({3, 4}, rng, 1.0, false);
    Tensor b = Tensor::randn({4}, rng);
    return grad_check([&](const Tensor& t) { return weighted(add(big, t)); }, b, kEps);
  });
  sweep("sub", [](Rng& rng) {
    Tensor x = Tensor::randn({7}, rng);
    Tensor b = Tensor::randn({7}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return weighted(sub(b, t)); }, x, kEps);
  });
  sweep("mul", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({3}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return weighted(mul(t, b)); }, x, kEps);
  });
  sweep("div", [](Rng& rng) {
    Tensor x = Tensor::randn({5}, rng);
    Tensor d = randn_away({5}, rng, 0.0, 0.4);
    return grad_check([&](const Tensor& t) { return weighted(div(t, d)); }, x, kEps);
  });
  sweep("div-denominator", [](Rng& rng) {
    Tensor n = Tensor::randn({5}, rng, 1.0, false);
    Tensor d = randn_away({5}, rng, 0.0, 0.4);
    return grad_check([&](const Tensor& t) { return weighted(div(n, t)); }, d, kEps);
  });
}

TEST_CASE("gradcheck: scalar and unary ops") {
  sweep("scalar_mul", [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([&](const Tensor& t) { return weighted(scalar_mul(t, -2.5)); }, x, kEps);
  });
  sweep("relu", [](Rng& rng) {
    Tensor x = randn_away({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(relu(t)); }, x, kEps);
  });
  sweep("sigmoid", [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(sigmoid(t)); }, x, kEps);
  });
  sweep("tanh", [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(tanh_(t)); }, x, kEps);
  });
  sweep("square", [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(square(t)); }, x, kEps);
  });
  sweep("abs", [](Rng& rng) {
    Tensor x = randn_away({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(abs_(t)); }, x, kEps);
  });
  sweep("exp", [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return weighted(exp_(t)); }, x, kEps);
  });
  sweep("log", [](Rng& rng) {
    Tensor x = Tensor::zeros({8}, true);
    for (double& v : x.vec()) v = 0.5 + rng.uniform();
    return grad_check([&](const Tensor& t) { return weighted(log_(t)); }, x, kEps);
  });
  sweep("max_const", [](Rng& rng) {
    Tensor x = randn_away({8}, rng, 0.2);
    return grad_check([&](const Tensor& t) { return weighted(max_const(t, 0.2)); }, x, kEps);
  });
  sweep("min_const", [](Rng& rng) {
    Tensor x = randn_away({8}, rng, -0.3);
    return grad_check([&](const Tensor& t) { return weighted(min_const(t, -0.3)); }, x, kEps);
  });
}

TEST_CASE("gradcheck: reductions and vector ops") {
  sweep("sum", [](Rng& rng) {
    Tensor x = Tensor::randn({3, 4}, rng);
    return grad_check([&](const Tensor& t) { return sum(t); }, x, kEps);
  });
  sweep("mean", [](Rng& rng) {
    Tensor x = Tensor::randn({3, 4}, rng);
    return grad_check([&](const Tensor& t) { return mean(t); }, x, kEps);
  });
  sweep("dot", [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    Tensor v = Tensor::randn({6}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return dot(t, v); }, x, kEps);
  });
  sweep("l2norm", [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([&](const Tensor& t) { return l2norm(t); }, x, kEps);
  });
  sweep("cosine_sim-lhs", [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    Tensor v = Tensor::randn({6}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return cosine_sim(t, v); }, x, kEps);
  });
  sweep("cosine_sim-rhs", [](Rng& rng) {
    Tensor v = Tensor::randn({6}, rng, 1.0, false);
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([&](const Tensor& t) { return cosine_sim(v, t); }, x, kEps);
  });
}

TEST_CASE("gradcheck: shape ops") {
  sweep("reshape", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 6}, rng);
    return grad_check([&](const Tensor& t) { return weighted(reshape(t, {3, 4})); }, x, kEps);
  });
  sweep("concat", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor o = Tensor::randn({2, 2}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return weighted(concat({t, o}, 1)); }, x, kEps);
  });
  sweep("narrow", [](Rng& rng) {
    Tensor x = Tensor::randn({3, 5}, rng);
    return grad_check([&](const Tensor& t) { return weighted(narrow(t, 1, 1, 3)); }, x, kEps);
  });
  sweep("permute_rows", [](Rng& rng) {
    Tensor x = Tensor::randn({4, 3}, rng);
    std::vector<int> perm = {2, 0, 3, 1};
    return grad_check([&](const Tensor& t) { return weighted(permute_rows(t, perm)); }, x, kEps);
  });
}

TEST_CASE("gradcheck: matmul and linear") {
  sweep("matmul-lhs", [](Rng& rng) {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return weighted(matmul(t, b)); }, a, kEps);
  });
  sweep("matmul-rhs", [](Rng& rng) {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, false);
    Tensor b = Tensor::randn({4, 2}, rng);
    return grad_check([&](const Tensor& t) { return weighted(matmul(a, t)); }, b, kEps);
  });
  sweep("linear-bias", [](Rng& rng) {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, false);
    Tensor w = Tensor::randn({4, 2}, rng, 1.0, false);
    Tensor b = Tensor::randn({2}, rng);
    return grad_check([&](const Tensor& t) { return weighted(linear(a, w, t)); }, b, kEps);
  });
}

TEST_CASE("gradcheck: conv2d stride 1 and 2") {
  sweep("conv2d-input-s1", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 3, 6, 5}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.5, false);
    Tensor b = Tensor::randn({4}, rng, 0.5, false);
    return grad_check([&](const Tensor& t) { return weighted(conv2d(t, w, b, 1, 1)); }, x, kEps);
  });
  sweep("conv2d-weight-s1", [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 5, 5}, rng, 1.0, false);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5);
    return grad_check([&](const Tensor& t) { return weighted(conv2d(x, t, 1, 1)); }, w, kEps);
  });
  sweep("conv2d-input-s2", [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 8, 7}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, false);
    return grad_check([&](const Tensor& t) { return weighted(conv2d(t, w, 2, 1)); }, x, kEps);
  });
  sweep("conv2d-weight-s2", [](Rng& rng) {
    Tensor x = Tensor::randn({2, 2, 6, 6}, rng, 1.0, false);
    Tensor w = Tensor::randn({2, 2, 3, 3}, rng, 0.5);
    return grad_check([&](const Tensor& t) { return weighted(conv2d(x, t, 2, 1)); }, w, kEps);
  });
  sweep("conv2d-bias", [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 5, 5}, rng, 1.0, false);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, false);
    Tensor b = Tensor::randn({3}, rng);
    return grad_check([&](const Tensor& t) { return weighted(conv2d(x, w, t, 1, 0)); }, b, kEps);
  });
}

TEST_CASE("gradcheck: upsampling") {
  sweep("upsample2_nearest", [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 3, 4}, rng);
    return grad_check([&](const Tensor& t) { return weighted(upsample2_nearest(t)); }, x, kEps);
  });
  sweep("upsample2_bilinear", [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 4, 3}, rng);
    return grad_check([&](const Tensor& t) { return weighted(upsample2_bilinear(t)); }, x, kEps);
  });
}

TEST_CASE("cosine-sim values and zero-norm rejection") {
  Tensor e1 = Tensor::from_data({2}, {1, 0});
  Tensor e2 = Tensor::from_data({2}, {0, 1});
  Tensor anti = Tensor::from_data({2}, {-2, 0});
  REQUIRE(cosine_sim(e1, e1).value() == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(cosine_sim(e1, e2).value() == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(cosine_sim(e1, anti).value() == Catch::Approx(-1.0).margin(1e-15));
  Tensor z = Tensor::zeros({2});
  REQUIRE_THROWS_AS(cosine_sim(e1, z), std::invalid_argument);
}

TEST_CASE("grad-check flags NaN with its index") {
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  auto f = [](const Tensor& t) { return sum(log_(t)); };  // log(-2) -> NaN
  GradCheckResult r = grad_check(f, x, 1e-5);
  REQUIRE(r.has_nan);
  // the NaN poisons the scalar loss, so the first probed coordinate reports it
  REQUIRE(r.nan_index == 0);
}

TEST_CASE("grad-check on sum of squares is tight") {
  Rng rng(99, 0);
  Tensor x = Tensor::randn({10}, rng);
  GradCheckResult r = grad_check([](const Tensor& t) { return sum(square(t)); }, x, 1e-5);
  REQUIRE(r.max_rel_err < 1e-6);
}

TEST_CASE("grad-check on cosine-sim against a fixed vector") {
  Rng rng(100, 0);
  Tensor v = Tensor::randn({8}, rng, 1.0, false);
  Tensor x = Tensor::randn({8}, rng);
  GradCheckResult r = grad_check([&](const Tensor& t) { return cosine_sim(t, v); }, x, 1e-5);
  REQUIRE(r.max_rel_err < 1e-4);
}
