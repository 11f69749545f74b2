#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vidrep/evalkit.hpp"
#include "vidrep/gradcheck.hpp"
#include "vidrep/losses.hpp"
#include "vidrep/sampling.hpp"
#include "vidrep/stn.hpp"
#include "vidrep/trainer.hpp"

namespace vidrep {

struct GradSuiteEntry {
  std::string name;
  double worst_rel_err = 0.0;
  bool has_nan = false;
  double tol = 1e-4;
  bool pass = true;
};

namespace detail {

inline Tensor gc_weighted(const Tensor& y) {
  Rng rng(4242, 97);
  Tensor r = Tensor::randn(y.shape(), rng, 1.0, false);
  return sum(mul(y, r));
}

inline void gc_sweep(std::vector<GradSuiteEntry>& out, const std::string& name, int configs,
                     double tol, const std::function<GradCheckResult(Rng&)>& one) {
  GradSuiteEntry e;
  e.name = name;
  e.tol = tol;
  for (int cfg = 0; cfg < configs; ++cfg) {
    Rng rng(3000 + cfg, 0);
    GradCheckResult r = one(rng);
    e.worst_rel_err = std::max(e.worst_rel_err, r.max_rel_err);
    e.has_nan = e.has_nan || r.has_nan;
  }
  e.pass = !e.has_nan && e.worst_rel_err < tol;
  out.push_back(e);
}

}  // namespace detail

// End-to-end check: the gradient of the full training objective (crop ->
// encode -> swap -> decode -> paste -> composite -> reconstruction +
// contrastive + prior) against central differences on a tiny model.
inline GradCheckResult end_to_end_total_loss_gradcheck(uint64_t seed, int coords_per_param = 4,
                                                       double eps = 1e-5) {
  TrainConfig cfg = make_train_config(ModelVariant::dsl_stn);
  cfg.seed = seed;
  cfg.codec.crop = 8;
  cfg.codec.n_tv = 3;
  cfg.codec.n_ti = 2;
  cfg.codec.trunk_channels = {2, 2};
  cfg.codec.dec_maps = 2;
  cfg.codec.dec_channels = {2};
  cfg.detector_downsample = 1;
  cfg.detector_channels = {2, 2};
  cfg.pyramid_channels = {2, 2, 2};
  cfg.sampler.d_near = 1;
  cfg.sampler.d_max = 3;
  cfg.loss.d_max = 3.0;
  Model model(cfg, 8);

  Rng drng(seed, 0xda7a);
  Tensor frames = Tensor::zeros({4, 3, 8, 8});
  Tensor bg = Tensor::zeros({4, 3, 8, 8});
  for (double& v : frames.vec()) v = drng.uniform();
  for (double& v : bg.vec()) v = drng.uniform();
  std::vector<JitterParams> jp;
  SamplerConfig scfg = cfg.sampler;
  for (int i = 0; i < 4; ++i) jp.push_back(draw_jitter(scfg, drng));
  const std::vector<int> swap_perm = {1, 2, 3, 0};

  auto total = [&]() {
    Tensor boxes = model.detector.boxes(frames);
    Tensor crops = stn_crop(frames, boxes, 8, 8);
    Tensor ti = model.codec.encode(crops, LatentHead::ti);
    Tensor tv = model.codec.encode(apply_jitter(crops, jp), LatentHead::tv);
    auto [rgb, mask] = model.codec.decode(tv, permute_rows(ti, swap_perm));
    Tensor recon = composite(stn_paste(mask, boxes, 8, 8), stn_paste(rgb, boxes, 8, 8), bg);
    LossComponents comps;
    comps.reconstruction = reconstruction_loss(frames, recon, cfg.loss, &model.pyramid);
    comps.contrastive = dsl_quadruple_loss(row(tv, 0), row(tv, 1), row(tv, 2), row(tv, 3), 1.0,
                                           2.0, 3.0, cfg.loss.d_max);
    comps.box_prior = box_prior_loss(boxes);
    return total_loss(comps, cfg.loss);
  };

  // Hand-rolled central differences with a kink filter: the graph is full of
  // relu/clip corners, and a coordinate evaluated next to one reports the
  // average of the two slopes rather than the subgradient. Such artifacts are
  // point-local, so a mismatch is only counted if it reproduces at a shifted
  // base point; a genuine gradient bug follows the coordinate everywhere.
  GradCheckResult worst;
  Rng pick(seed, 0xc001);
  for (Tensor& p : model.params()) {
    auto analytic_at = [&](int64_t i) {
      p.zero_grad();
      backward(total());
      return p.grad_vec()[static_cast<size_t>(i)];
    };
    auto fd_at = [&](int64_t i, double h) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double fp = total().value();
      p.data()[i] = saved - h;
      const double fm = total().value();
      p.data()[i] = saved;
      return (fp - fm) / (2.0 * h);
    };
    for (int c = 0; c < coords_per_param; ++c) {
      const int64_t i = pick.uniform_int(p.size());
      GradCheckResult local;
      detail::gc_compare(analytic_at(i), fd_at(i, eps), i, local);
      if (local.has_nan) {
        worst.has_nan = true;
        worst.nan_index = i;
        continue;
      }
      if (local.max_rel_err > 1e-3) {
        const double saved = p.data()[i];
        p.data()[i] = saved + 16.0 * eps;
        GradCheckResult shifted;
        detail::gc_compare(analytic_at(i), fd_at(i, eps), i, shifted);
        p.data()[i] = saved;
        if (shifted.max_rel_err < local.max_rel_err) local = shifted;
      }
      if (local.max_rel_err > worst.max_rel_err) {
        worst.max_rel_err = local.max_rel_err;
        worst.worst_index = i;
      }
    }
  }
  return worst;
}

// The oracle sweep behind the `gradcheck` command: every differentiable
// operation and loss, 20 seeded configurations each, against central
// differences.
inline std::vector<GradSuiteEntry> run_gradcheck_suite(int configs = 20) {
  using detail::gc_weighted;
  std::vector<GradSuiteEntry> out;
  constexpr double eps = 1e-5;

  auto away = [](const Shape& shape, Rng& rng, double kink, double margin) {
    Tensor t = Tensor::randn(shape, rng);
    for (double& v : t.vec())
      if (std::fabs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin) * 1.5;
    return t;
  };

  detail::gc_sweep(out, "add", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({2, 5}, rng);
    Tensor b = Tensor::randn({5}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(add(t, b)); }, x, eps);
  });
  detail::gc_sweep(out, "subtract", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({7}, rng);
    Tensor b = Tensor::randn({7}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(sub(b, t)); }, x, eps);
  });
  detail::gc_sweep(out, "multiply", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({3}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(mul(t, b)); }, x, eps);
  });
  detail::gc_sweep(out, "scalar-multiply", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(scalar_mul(t, -1.7)); }, x, eps);
  });
  detail::gc_sweep(out, "matmul", configs, 1e-4, [](Rng& rng) {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(matmul(t, b)); }, a, eps);
  });
  detail::gc_sweep(out, "conv2d-s1", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(conv2d(t, w, 1, 1)); }, x, eps);
  });
  detail::gc_sweep(out, "conv2d-s2", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 7, 7}, rng, 1.0, false);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5);
    return grad_check([&](const Tensor& t) { return gc_weighted(conv2d(x, t, 2, 1)); }, w, eps);
  });
  detail::gc_sweep(out, "upsample-nearest", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 3, 4}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(upsample2_nearest(t)); }, x, eps);
  });
  detail::gc_sweep(out, "upsample-bilinear", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({1, 2, 4, 3}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(upsample2_bilinear(t)); }, x, eps);
  });
  detail::gc_sweep(out, "relu", configs, 1e-4, [&](Rng& rng) {
    Tensor x = away({8}, rng, 0.0, 0.1);
    return grad_check([&](const Tensor& t) { return gc_weighted(relu(t)); }, x, eps);
  });
  detail::gc_sweep(out, "sigmoid", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(sigmoid(t)); }, x, eps);
  });
  detail::gc_sweep(out, "tanh", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(tanh_(t)); }, x, eps);
  });
  detail::gc_sweep(out, "sum", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({3, 4}, rng);
    return grad_check([](const Tensor& t) { return sum(t); }, x, eps);
  });
  detail::gc_sweep(out, "mean", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({3, 4}, rng);
    return grad_check([](const Tensor& t) { return mean(t); }, x, eps);
  });
  detail::gc_sweep(out, "square", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({8}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(square(t)); }, x, eps);
  });
  detail::gc_sweep(out, "absolute", configs, 1e-4, [&](Rng& rng) {
    Tensor x = away({8}, rng, 0.0, 0.1);
    return grad_check([&](const Tensor& t) { return gc_weighted(abs_(t)); }, x, eps);
  });
  detail::gc_sweep(out, "max-const", configs, 1e-4, [&](Rng& rng) {
    Tensor x = away({8}, rng, 0.2, 0.1);
    return grad_check([&](const Tensor& t) { return gc_weighted(max_const(t, 0.2)); }, x, eps);
  });
  detail::gc_sweep(out, "min-const", configs, 1e-4, [&](Rng& rng) {
    Tensor x = away({8}, rng, -0.3, 0.1);
    return grad_check([&](const Tensor& t) { return gc_weighted(min_const(t, -0.3)); }, x, eps);
  });
  detail::gc_sweep(out, "concatenate", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({2, 3}, rng);
    Tensor o = Tensor::randn({2, 2}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return gc_weighted(concat({t, o}, 1)); }, x, eps);
  });
  detail::gc_sweep(out, "reshape", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({2, 6}, rng);
    return grad_check([&](const Tensor& t) { return gc_weighted(reshape(t, {3, 4})); }, x, eps);
  });
  detail::gc_sweep(out, "l2norm", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([](const Tensor& t) { return l2norm(t); }, x, eps);
  });
  detail::gc_sweep(out, "dot", configs, 1e-4, [](Rng& rng) {
    Tensor x = Tensor::randn({6}, rng);
    Tensor v = Tensor::randn({6}, rng, 1.0, false);
    return grad_check([&](const Tensor& t) { return dot(t, v); }, x, eps);
  });
  detail::gc_sweep(out, "cosine-sim", configs, 1e-4, [](Rng& rng) {
    Tensor v = Tensor::randn({6}, rng, 1.0, false);
    Tensor x = Tensor::randn({6}, rng);
    return grad_check([&](const Tensor& t) { return cosine_sim(t, v); }, x, eps);
  });
  detail::gc_sweep(out, "css-loss", configs, 1e-4, [](Rng& rng) {
    Tensor pos = Tensor::randn({5}, rng, 1.0, false);
    Tensor n1 = Tensor::randn({5}, rng, 1.0, false);
    Tensor n2 = Tensor::randn({5}, rng, 1.0, false);
    Tensor ref = Tensor::randn({5}, rng);
    return grad_check([&](const Tensor& t) { return css_loss(t, pos, {n1, n2}, 0.1); }, ref, eps);
  });
  detail::gc_sweep(out, "triplet-loss", configs, 1e-4, [](Rng& rng) {
    Tensor ref = Tensor::randn({4}, rng, 1.0, false);
    Tensor pos = Tensor::randn({4}, rng, 1.0, false);
    Tensor neg = Tensor::randn({4}, rng);
    const double dp = sum(square(sub(ref, pos))).value();
    const double dn = sum(square(sub(ref, neg))).value();
    return grad_check(
        [&, beta = dn - dp + 0.5](const Tensor& t) { return triplet_loss(ref, pos, t, beta); }, neg,
        eps);
  });
  detail::gc_sweep(out, "dsl-loss", configs, 1e-4, [](Rng& rng) {
    Tensor n = Tensor::randn({5}, rng, 1.0, false);
    Tensor m = Tensor::randn({5}, rng);
    const double d = rng.uniform_int(2) == 0 ? 4.0 : 16.0;
    return grad_check([&](const Tensor& t) { return dsl_loss(t, n, d, 20.0); }, m, eps);
  });
  detail::gc_sweep(out, "dsl-quadruple", configs, 1e-4, [](Rng& rng) {
    Tensor n = Tensor::randn({5}, rng, 1.0, false);
    Tensor i = Tensor::randn({5}, rng, 1.0, false);
    Tensor a = Tensor::randn({5}, rng, 1.0, false);
    Tensor r0 = Tensor::randn({5}, rng);
    return grad_check(
        [&](const Tensor& t) { return dsl_quadruple_loss(t, n, i, a, 2, 11, 25, 20.0); }, r0, eps);
  });
  detail::gc_sweep(out, "reconstruction-loss", configs, 1e-4, [](Rng& rng) {
    FeaturePyramid pyr(3, {2, 3, 4}, rng.next_u64());
    LossWeights w;
    Tensor target = Tensor::zeros({1, 3, 8, 8});
    for (double& v : target.vec()) v = rng.uniform();
    Tensor rec = Tensor::zeros({1, 3, 8, 8}, true);
    for (double& v : rec.vec()) v = rng.uniform();
    return grad_check([&](const Tensor& t) { return reconstruction_loss(target, t, w, &pyr); }, rec,
                      eps);
  });
  detail::gc_sweep(out, "track-loss", configs, 1e-4, [](Rng& rng) {
    Tensor u = Tensor::zeros({4}, true);
    double base = rng.uniform(-10.0, 10.0);
    for (int t = 0; t < 4; ++t) {
      base += rng.uniform(5.0, 12.0);
      u.data()[t] = base;
    }
    Tensor s = Tensor::from_data({4, 2}, {.4, .5, .45, .5, .5, .55, .5, .6});
    return grad_check([&](const Tensor& t) { return track_loss(t, s, 20.0); }, u, eps);
  });
  detail::gc_sweep(out, "pose-loss", configs, 1e-4, [](Rng& rng) {
    Tensor label = Tensor::randn({3, 4}, rng, 1.0, false);
    Tensor pred = Tensor::randn({3, 4}, rng);
    return grad_check([&](const Tensor& t) { return pose_loss(t, label); }, pred, eps);
  });
  detail::gc_sweep(out, "stn-crop", configs, 1e-4, [](Rng& rng) {
    BoxParams b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2)};
    Tensor frames = Tensor::zeros({1, 2, 10, 10}, true);
    for (double& v : frames.vec()) v = rng.uniform();
    Tensor boxes = boxes_tensor({b});
    return grad_check(
        [&](const Tensor& t) { return gc_weighted(stn_crop(t, boxes, 6, 6)); }, frames, eps);
  });
  detail::gc_sweep(out, "stn-crop-box", configs, 1e-4, [](Rng& rng) {
    BoxParams b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2)};
    Tensor frames = Tensor::zeros({1, 2, 10, 10});
    for (double& v : frames.vec()) v = rng.uniform();
    Tensor boxes = boxes_tensor({b}, true);
    return grad_check(
        [&](const Tensor& t) { return gc_weighted(stn_crop(frames, t, 6, 6)); }, boxes, eps);
  });
  detail::gc_sweep(out, "stn-paste", configs, 1e-4, [](Rng& rng) {
    BoxParams b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2)};
    Tensor crop = Tensor::zeros({1, 2, 6, 6}, true);
    for (double& v : crop.vec()) v = rng.uniform();
    Tensor boxes = boxes_tensor({b});
    return grad_check(
        [&](const Tensor& t) { return gc_weighted(stn_paste(t, boxes, 10, 10)); }, crop, eps);
  });
  detail::gc_sweep(out, "stn-paste-box", configs, 1e-4, [](Rng& rng) {
    BoxParams b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2)};
    Tensor crop = Tensor::zeros({1, 2, 6, 6});
    for (double& v : crop.vec()) v = rng.uniform();
    Tensor boxes = boxes_tensor({b}, true);
    return grad_check(
        [&](const Tensor& t) { return gc_weighted(stn_paste(crop, t, 10, 10)); }, boxes, eps);
  });
  detail::gc_sweep(out, "composite", configs, 1e-4, [](Rng& rng) {
    Tensor M = Tensor::zeros({1, 1, 5, 5}, true);
    for (double& v : M.vec()) v = rng.uniform();
    Tensor D = Tensor::zeros({1, 3, 5, 5});
    Tensor B = Tensor::zeros({1, 3, 5, 5});
    for (double& v : D.vec()) v = rng.uniform();
    for (double& v : B.vec()) v = rng.uniform();
    return grad_check([&](const Tensor& t) { return mean(square(composite(t, D, B))); }, M, eps);
  });
  detail::gc_sweep(out, "box-prior-loss", configs, 1e-4, [](Rng& rng) {
    Tensor boxes = Tensor::zeros({4, 4}, true);
    for (double& v : boxes.vec()) v = rng.uniform(0.2, 0.8);
    return grad_check([](const Tensor& t) { return box_prior_loss(t); }, boxes, eps);
  });
  detail::gc_sweep(out, "encode", configs, 1e-4, [](Rng& rng) {
    CodecConfig ccfg;
    ccfg.crop = 8;
    ccfg.n_tv = 3;
    ccfg.n_ti = 2;
    ccfg.trunk_channels = {2, 2};
    ccfg.dec_maps = 2;
    ccfg.dec_channels = {2};
    Codec codec(ccfg, rng);
    Tensor crops = Tensor::zeros({1, 3, 8, 8}, true);
    for (double& v : crops.vec()) v = rng.uniform();
    return grad_check(
        [&](const Tensor& t) { return gc_weighted(codec.encode(t, LatentHead::tv)); }, crops, eps);
  });
  detail::gc_sweep(out, "decode", configs, 1e-4, [](Rng& rng) {
    CodecConfig ccfg;
    ccfg.crop = 8;
    ccfg.n_tv = 3;
    ccfg.n_ti = 2;
    ccfg.trunk_channels = {2, 2};
    ccfg.dec_maps = 2;
    ccfg.dec_channels = {2};
    Codec codec(ccfg, rng);
    Tensor ti = Tensor::randn({1, 2}, rng, 1.0, false);
    Tensor tv = Tensor::randn({1, 3}, rng);
    return grad_check(
        [&](const Tensor& t) {
          auto [rgb, mask] = codec.decode(t, ti);
          return add(gc_weighted(rgb), gc_weighted(mask));
        },
        tv, eps);
  });

  GradSuiteEntry e2e;
  e2e.name = "end-to-end-total-loss";
  e2e.tol = 1e-3;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    GradCheckResult r = end_to_end_total_loss_gradcheck(100 + seed);
    e2e.worst_rel_err = std::max(e2e.worst_rel_err, r.max_rel_err);
    e2e.has_nan = e2e.has_nan || r.has_nan;
  }
  e2e.pass = !e2e.has_nan && e2e.worst_rel_err < e2e.tol;
  out.push_back(e2e);

  return out;
}

}  // namespace vidrep
