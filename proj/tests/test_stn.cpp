#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vidrep/gradcheck.hpp"
#include "vidrep/stn.hpp"
#include "vidrep/synth.hpp"

using namespace vidrep;

namespace {

Tensor random_frames(int n, int c, int h, int w, Rng& rng, bool rg = false) {
  Tensor t = Tensor::zeros({n, c, h, w}, rg);
  for (double& v : t.vec()) v = rng.uniform();
  return t;
}

// Band-limited frames (the domain content): bilinear round trips are only
// meaningful up to curvature * spacing^2, which white noise does not bound.
Tensor smooth_frames(int n, int h, int w, Rng& rng, bool rg = false) {
  PuppetConfig cfg;
  cfg.height = h;
  cfg.width = w;
  Tensor t = Tensor::zeros({n, 3, h, w}, rg);
  for (int i = 0; i < n; ++i) {
    auto bg = detail::render_background(cfg, rng);
    std::copy(bg.begin(), bg.end(), t.data() + static_cast<int64_t>(i) * 3 * h * w);
  }
  return t;
}

}  // namespace

TEST_CASE("squashed boxes always satisfy the range invariants") {
  Rng rng(1, 0);
  Tensor raw = Tensor::randn({32, 4}, rng, 4.0, false);
  Tensor boxes = squash_boxes(raw);
  for (int n = 0; n < 32; ++n) {
    BoxParams b = box_at(boxes, n);
    REQUIRE(b.s_x > kBoxScaleMin);
    REQUIRE(b.s_x <= 1.0);
    REQUIRE(b.s_y > kBoxScaleMin);
    REQUIRE(b.s_y <= 1.0);
    REQUIRE(b.u_x >= -1.0);
    REQUIRE(b.u_x <= 1.0);
    REQUIRE(b.u_y >= -1.0);
    REQUIRE(b.u_y <= 1.0);
  }
}

TEST_CASE("zero-weight head with midpoint biases yields the centered half-frame box") {
  Rng rng(2, 0);
  BoxPredictor det(64, 4, {8, 16, 32, 64}, rng);
  for (double& v : det.head_weight().vec()) v = 0.0;
  Tensor frames = random_frames(3, 3, 64, 64, rng);
  Tensor boxes = det.boxes(frames);
  for (int n = 0; n < 3; ++n) {
    BoxParams b = box_at(boxes, n);
    REQUIRE(b.s_x == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(b.s_y == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(b.u_x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(b.u_y == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("identity crop reproduces the frame exactly") {
  Rng rng(3, 0);
  Tensor frames = random_frames(2, 3, 9, 7, rng);
  Tensor boxes = boxes_tensor({BoxParams{}, BoxParams{}});
  Tensor crop = stn_crop(frames, boxes, 9, 7);
  double max_err = 0.0;
  for (int64_t i = 0; i < frames.size(); ++i)
    max_err = std::max(max_err, std::fabs(crop.data()[i] - frames.data()[i]));
  REQUIRE(max_err < 1e-9);
}

TEST_CASE("grid point midway between pixels interpolates to the midpoint") {
  Tensor frame = Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0});
  Tensor boxes = boxes_tensor({BoxParams{0.5, 0.5, 0.0, 0.0}});
  Tensor crop = stn_crop(frame, boxes, 1, 1);  // single sample at the frame center
  REQUIRE(crop.value() == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("box fully outside the frame samples zeros") {
  Rng rng(4, 0);
  Tensor frames = random_frames(1, 3, 8, 8, rng);
  Tensor boxes = boxes_tensor({BoxParams{0.2, 0.2, 3.5, 3.5}});
  Tensor crop = stn_crop(frames, boxes, 4, 4);
  for (int64_t i = 0; i < crop.size(); ++i) REQUIRE(crop.data()[i] == 0.0);
}

TEST_CASE("paste of an identity crop recovers the frame") {
  Rng rng(5, 0);
  Tensor frames = random_frames(1, 3, 8, 8, rng);
  Tensor boxes = boxes_tensor({BoxParams{}});
  Tensor crop = stn_crop(frames, boxes, 8, 8);
  Tensor back = stn_paste(crop, boxes, 8, 8);
  double max_err = 0.0;
  for (int64_t i = 0; i < frames.size(); ++i)
    max_err = std::max(max_err, std::fabs(back.data()[i] - frames.data()[i]));
  REQUIRE(max_err < 1e-6);
}

TEST_CASE("zero mask pastes to zero everywhere") {
  Tensor mask = Tensor::zeros({1, 1, 6, 6});
  Tensor boxes = boxes_tensor({BoxParams{0.4, 0.4, 0.1, -0.2}});
  Tensor pasted = stn_paste(mask, boxes, 12, 12);
  for (int64_t i = 0; i < pasted.size(); ++i) REQUIRE(pasted.data()[i] == 0.0);
}

TEST_CASE("paste zero-fills strictly outside the box footprint") {
  Tensor crop = Tensor::full({1, 1, 8, 8}, 1.0);
  BoxParams b{0.3, 0.25, 0.1, -0.2};
  Tensor pasted = stn_paste(crop, boxes_tensor({b}), 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double ax = -1.0 + 2.0 * x / 31.0;
      const double ay = -1.0 + 2.0 * y / 31.0;
      // one crop texel of slack for the bilinear support
      const double pad_x = b.s_x * 2.0 / 7.0;
      const double pad_y = b.s_y * 2.0 / 7.0;
      if (std::fabs(ax - b.u_x) > b.s_x + pad_x || std::fabs(ay - b.u_y) > b.s_y + pad_y)
        REQUIRE(pasted.data()[static_cast<int64_t>(y) * 32 + x] == 0.0);
    }
}

TEST_CASE("crop/paste round trip preserves interior content") {
  Rng rng(6, 0);
  for (int it = 0; it < 5; ++it) {
    Tensor frames = smooth_frames(1, 32, 32, rng);
    BoxParams b{rng.uniform(0.35, 0.6), rng.uniform(0.35, 0.6), rng.uniform(-0.25, 0.25),
                rng.uniform(-0.25, 0.25)};
    Tensor boxes = boxes_tensor({b});
    Tensor crop1 = stn_crop(frames, boxes, 32, 32);
    Tensor pasted = stn_paste(crop1, boxes, 32, 32);
    Tensor crop2 = stn_crop(pasted, boxes, 32, 32);
    // interior of the crop grid only: the outer ring touches paste zero-padding
    double max_err = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int i = 3; i < 29; ++i)
        for (int j = 3; j < 29; ++j) {
          const int64_t idx = (static_cast<int64_t>(c) * 32 + i) * 32 + j;
          max_err = std::max(max_err, std::fabs(crop1.data()[idx] - crop2.data()[idx]));
        }
    REQUIRE(max_err < 2e-2);
  }
}

TEST_CASE("composite limits") {
  Rng rng(7, 0);
  Tensor D = random_frames(2, 3, 5, 5, rng);
  Tensor B = random_frames(2, 3, 5, 5, rng);
  Tensor M0 = Tensor::zeros({2, 1, 5, 5});
  Tensor M1 = Tensor::full({2, 1, 5, 5}, 1.0);
  Tensor out0 = composite(M0, D, B);
  Tensor out1 = composite(M1, D, B);
  for (int64_t i = 0; i < D.size(); ++i) {
    REQUIRE(out0.data()[i] == B.data()[i]);
    REQUIRE(out1.data()[i] == D.data()[i]);
  }
  Tensor half = composite(Tensor::full({1, 1, 2, 2}, 0.5), Tensor::full({1, 3, 2, 2}, 1.0),
                          Tensor::zeros({1, 3, 2, 2}));
  for (int64_t i = 0; i < half.size(); ++i) REQUIRE(half.data()[i] == 0.5);
}

TEST_CASE("composite gradient w.r.t. background is (1 - M) in closed form") {
  Rng rng(8, 0);
  Tensor M = Tensor::zeros({1, 1, 4, 4});
  for (double& v : M.vec()) v = rng.uniform();
  Tensor D = random_frames(1, 3, 4, 4, rng);
  Tensor B = random_frames(1, 3, 4, 4, rng, true);
  backward(sum(composite(M, D, B)));
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 16; ++i)
      REQUIRE(B.grad()[static_cast<int64_t>(c) * 16 + i] ==
              Catch::Approx(1.0 - M.data()[i]).margin(1e-12));
}

TEST_CASE("composite is linear in each input") {
  Rng rng(9, 0);
  Tensor M = Tensor::zeros({1, 1, 3, 3});
  for (double& v : M.vec()) v = rng.uniform();
  Tensor D1 = random_frames(1, 3, 3, 3, rng);
  Tensor D2 = random_frames(1, 3, 3, 3, rng);
  Tensor B = random_frames(1, 3, 3, 3, rng);
  Tensor lhs = composite(M, add(D1, D2), B);
  Tensor rhs = add(composite(M, D1, B), composite(M, D2, Tensor::zeros({1, 3, 3, 3})));
  for (int64_t i = 0; i < lhs.size(); ++i)
    REQUIRE(lhs.data()[i] == Catch::Approx(rhs.data()[i]).margin(1e-12));
}

TEST_CASE("box prior loss penalizes batch means only") {
  Tensor on_target = boxes_tensor({{0.5, 0.5, 0, 0}, {0.5, 0.5, 0, 0}});
  REQUIRE(box_prior_loss(on_target).value() == 0.0);

  Tensor symmetric = boxes_tensor({{0.3, 0.6, -0.2, 0.1}, {0.7, 0.4, 0.2, -0.1}});
  REQUIRE(box_prior_loss(symmetric).value() == Catch::Approx(0.0).margin(1e-15));

  Tensor off = boxes_tensor({{0.6, 0.5, 0, 0}, {0.8, 0.5, 0, 0}});  // mean s_x = 0.7
  REQUIRE(box_prior_loss(off).value() == Catch::Approx(0.04).margin(1e-12));

  REQUIRE_THROWS_AS(box_prior_loss(boxes_tensor({{0.5, 0.5, 0, 0}})), std::invalid_argument);
}

TEST_CASE("gradcheck: crop, paste, composite, prior at random interior boxes") {
  constexpr double eps = 1e-5;
  constexpr double tol = 1e-4;
  for (int cfg = 0; cfg < 20; ++cfg) {
    Rng rng(900 + cfg, 0);
    BoxParams b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2)};
    Rng wrng(4242, 5);
    Tensor cot_crop = Tensor::randn({1, 2, 6, 6}, wrng, 1.0, false);
    Tensor cot_frame = Tensor::randn({1, 2, 10, 10}, wrng, 1.0, false);

    {
      Tensor frames = random_frames(1, 2, 10, 10, rng, true);
      Tensor boxes = boxes_tensor({b});
      auto r = grad_check(
          [&](const Tensor& t) { return sum(mul(stn_crop(t, boxes, 6, 6), cot_crop)); }, frames,
          eps);
      REQUIRE(r.ok(tol));
    }
    {
      Tensor frames = random_frames(1, 2, 10, 10, rng);
      Tensor boxes = boxes_tensor({b}, true);
      auto r = grad_check(
          [&](const Tensor& t) { return sum(mul(stn_crop(frames, t, 6, 6), cot_crop)); }, boxes,
          eps);
      REQUIRE(r.ok(tol));
    }
    {
      Tensor crop = random_frames(1, 2, 6, 6, rng, true);
      Tensor boxes = boxes_tensor({b});
      auto r = grad_check(
          [&](const Tensor& t) { return sum(mul(stn_paste(t, boxes, 10, 10), cot_frame)); }, crop,
          eps);
      REQUIRE(r.ok(tol));
    }
    {
      Tensor crop = random_frames(1, 2, 6, 6, rng);
      Tensor boxes = boxes_tensor({b}, true);
      auto r = grad_check(
          [&](const Tensor& t) { return sum(mul(stn_paste(crop, t, 10, 10), cot_frame)); }, boxes,
          eps);
      REQUIRE(r.ok(tol));
    }
    {
      Tensor M = Tensor::zeros({1, 1, 5, 5}, true);
      for (double& v : M.vec()) v = rng.uniform();
      Tensor D = random_frames(1, 3, 5, 5, rng);
      Tensor B = random_frames(1, 3, 5, 5, rng);
      auto rM = grad_check([&](const Tensor& t) { return mean(square(composite(t, D, B))); }, M, eps);
      REQUIRE(rM.ok(tol));
      Tensor M2 = Tensor::zeros({1, 1, 5, 5});
      for (double& v : M2.vec()) v = rng.uniform();
      Tensor D2 = random_frames(1, 3, 5, 5, rng, true);
      auto rD = grad_check([&](const Tensor& t) { return mean(square(composite(M2, t, B))); }, D2, eps);
      REQUIRE(rD.ok(tol));
      Tensor B2 = random_frames(1, 3, 5, 5, rng, true);
      auto rB = grad_check([&](const Tensor& t) { return mean(square(composite(M2, D, t))); }, B2, eps);
      REQUIRE(rB.ok(tol));
    }
    {
      Tensor boxes = Tensor::zeros({4, 4}, true);
      for (double& v : boxes.vec()) v = rng.uniform(0.2, 0.8);
      auto r = grad_check([&](const Tensor& t) { return box_prior_loss(t); }, boxes, eps);
      REQUIRE(r.ok(tol));
    }
  }
}

TEST_CASE("gradient reaches the frame through the whole detector") {
  Rng rng(77, 0);
  BoxPredictor det(32, 2, {4, 8}, rng);
  Tensor frames = random_frames(1, 3, 32, 32, rng, true);
  Tensor boxes = det.boxes(frames);
  backward(sum(boxes));
  double norm = 0.0;
  for (const double g : frames.grad_vec()) norm += std::fabs(g);
  REQUIRE(norm > 0.0);
}
