#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidrep/trainer.hpp"

namespace vidrep {

// ---------------------------------------------------------------------------
// Pose metrics
// ---------------------------------------------------------------------------

// Normalized mean per-joint position error. Per sample the prediction is
// rescaled by the least-squares scalar s* = <pred, label> / <pred, pred> over
// all joint coordinates before the mean per-joint distance is taken. An
// all-zero prediction has no defined scale: s* = 0 and the error equals the
// mean label norm.
inline double n_mpjpe(const Tensor& pred, const Tensor& label) {
  if (pred.shape() != label.shape() || pred.rank() != 3)
    throw std::invalid_argument("n_mpjpe: need matching [N,K,D], got " + shape_str(pred.shape()) +
                                " vs " + shape_str(label.shape()));
  const int N = pred.dim(0), K = pred.dim(1), D = pred.dim(2);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* p = pred.data() + static_cast<int64_t>(n) * K * D;
    const double* l = label.data() + static_cast<int64_t>(n) * K * D;
    double pl = 0.0, pp = 0.0;
    bool label_zero = true;
    for (int i = 0; i < K * D; ++i) {
      pl += p[i] * l[i];
      pp += p[i] * p[i];
      label_zero = label_zero && l[i] == 0.0;
    }
    if (label_zero) throw std::invalid_argument("n_mpjpe: all-zero label in sample " + std::to_string(n));
    const double s = pp > 0.0 ? pl / pp : 0.0;
    double err = 0.0;
    for (int k = 0; k < K; ++k) {
      double d2 = 0.0;
      for (int d = 0; d < D; ++d) {
        const double diff = s * p[(static_cast<int64_t>(k)) * D + d] - l[(static_cast<int64_t>(k)) * D + d];
        d2 += diff * diff;
      }
      err += std::sqrt(d2);
    }
    total += err / K;
  }
  return total / N;
}

inline double n_mpjpe_flat(const Tensor& pred, const Tensor& label, int K, int D) {
  if (pred.rank() != 2) throw std::invalid_argument("n_mpjpe_flat: need [N, K*D]");
  const int N = pred.dim(0);
  return n_mpjpe(reshape(pred, {N, K, D}), reshape(label, {N, K, D}));
}

// Mean squared keypoint distance normalized by the image size, in percent.
inline double mse_2d_percent(const Tensor& pred, const Tensor& label, double image_size) {
  if (pred.shape() != label.shape() || pred.rank() != 3 || pred.dim(2) != 2)
    throw std::invalid_argument("mse_2d_percent: need matching [N,K,2]");
  if (image_size <= 0) throw std::invalid_argument("mse_2d_percent: image size must be positive");
  const int N = pred.dim(0), K = pred.dim(1);
  double acc = 0.0;
  for (int64_t i = 0; i < static_cast<int64_t>(N) * K; ++i) {
    const double dx = pred.data()[2 * i] - label.data()[2 * i];
    const double dy = pred.data()[2 * i + 1] - label.data()[2 * i + 1];
    acc += dx * dx + dy * dy;
  }
  return acc / (static_cast<double>(N) * K) / image_size * 100.0;
}

// ---------------------------------------------------------------------------
// Disentanglement: swap-transfer scoring
// ---------------------------------------------------------------------------

namespace detail {

struct SilhouetteStats {
  std::array<double, 3> mean_color = {0, 0, 0};
  double cx = 0, cy = 0;          // centroid, normalized by W and H
  double m20 = 0, m02 = 0, m11 = 0;  // central second moments, normalized
  double mass = 0;
};

// Statistics of a weighted silhouette over a full-resolution mask and rgb.
inline SilhouetteStats weighted_stats(const double* mask, const double* rgb, int H, int W) {
  SilhouetteStats s;
  double sx = 0, sy = 0, mass = 0;
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double m = mask[static_cast<int64_t>(y) * W + x];
      if (m <= 1e-6) continue;
      mass += m;
      sx += m * x;
      sy += m * y;
      if (rgb)
        for (int c = 0; c < 3; ++c) s.mean_color[static_cast<size_t>(c)] += m * rgb[c * plane + y * static_cast<int64_t>(W) + x];
    }
  if (mass <= 0) return s;
  s.mass = mass;
  const double mx = sx / mass, my = sy / mass;
  s.cx = mx / W;
  s.cy = my / H;
  for (double& c : s.mean_color) c /= mass;
  double m20 = 0, m02 = 0, m11 = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double m = mask[static_cast<int64_t>(y) * W + x];
      if (m <= 1e-6) continue;
      m20 += m * (x - mx) * (x - mx);
      m02 += m * (y - my) * (y - my);
      m11 += m * (x - mx) * (y - my);
    }
  s.m20 = m20 / mass / (static_cast<double>(W) * W);
  s.m02 = m02 / mass / (static_cast<double>(H) * H);
  s.m11 = m11 / mass / (static_cast<double>(W) * H);
  return s;
}

// Ground-truth silhouette from the known background: any channel deviating
// beyond the threshold counts as foreground.
inline std::vector<double> gt_silhouette(const VideoClip& clip, int t, double thresh = 0.08) {
  const int64_t plane = static_cast<int64_t>(clip.H) * clip.W;
  std::vector<double> mask(static_cast<size_t>(plane), 0.0);
  const double* f = clip.frame(t);
  for (int64_t i = 0; i < plane; ++i) {
    double dev = 0.0;
    for (int c = 0; c < 3; ++c)
      dev = std::max(dev, std::fabs(f[c * plane + i] - clip.background[static_cast<size_t>(c * plane + i)]));
    if (dev > thresh) mask[static_cast<size_t>(i)] = 1.0;
  }
  return mask;
}

inline double color_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double d = 0;
  for (int c = 0; c < 3; ++c) d += (a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)]) *
                                   (a[static_cast<size_t>(c)] - b[static_cast<size_t>(c)]);
  return std::sqrt(d);
}

inline double shape_dist(const SilhouetteStats& a, const SilhouetteStats& b) {
  const double dc = std::hypot(a.cx - b.cx, a.cy - b.cy);
  const double dm = std::sqrt((a.m20 - b.m20) * (a.m20 - b.m20) + (a.m02 - b.m02) * (a.m02 - b.m02) +
                              2.0 * (a.m11 - b.m11) * (a.m11 - b.m11));
  return dc + std::sqrt(std::max(dm, 0.0));
}

}  // namespace detail

struct SwapScores {
  double appearance_follows_ti = 0.0;
  double pose_follows_tv = 0.0;
  int pairs = 0;
};

struct SwapPairOutcome {
  bool appearance_follows_ti = false;
  bool pose_follows_tv = false;
};

// Decode (tv from A at ta, ti from B at tb): appearance should land closer to
// the ti donor B and pose closer to the tv donor A. Ties break toward pass,
// so identity pairs succeed on both axes.
inline SwapPairOutcome swap_pair_outcome(const Model& model, const VideoClip& A, int ta,
                                         const VideoClip& B, int tb) {
  auto encode_frame = [&](const VideoClip& c, int t, Tensor* boxes_out) {
    Tensor frames = Tensor::from_data(
        {1, 3, c.H, c.W},
        std::vector<double>(c.frame(t), c.frame(t) + static_cast<int64_t>(3) * c.H * c.W));
    Tensor boxes = model.boxes_for(frames);
    Tensor crops = model.crops_for(frames, boxes);
    if (boxes_out) *boxes_out = boxes;
    return std::pair{model.codec.encode(crops, LatentHead::tv),
                     model.codec.encode(crops, LatentHead::ti)};
  };

  Tensor boxes_a;
  auto [tv_a, ti_a] = encode_frame(A, ta, &boxes_a);
  auto [tv_b, ti_b] = encode_frame(B, tb, nullptr);
  auto [rgb, mask] = model.codec.decode(tv_a, ti_b);

  // full-frame statistics through the tv donor's box
  Tensor M, D;
  if (model.traits().stn) {
    D = stn_paste(rgb, boxes_a, A.H, A.W);
    M = stn_paste(mask, boxes_a, A.H, A.W);
  } else {
    D = rgb;
    M = mask;
  }
  const auto decoded = detail::weighted_stats(M.data(), D.data(), A.H, A.W);

  auto a_sil = detail::gt_silhouette(A, ta);
  auto b_sil = detail::gt_silhouette(B, tb);
  const auto stats_a = detail::weighted_stats(a_sil.data(), A.frame(ta), A.H, A.W);
  const auto stats_b = detail::weighted_stats(b_sil.data(), B.frame(tb), B.H, B.W);

  SwapPairOutcome out;
  const double app_to_a = detail::color_dist(decoded.mean_color, stats_a.mean_color);
  const double app_to_b = detail::color_dist(decoded.mean_color, stats_b.mean_color);
  out.appearance_follows_ti = app_to_b <= app_to_a;

  const double pose_to_a = detail::shape_dist(decoded, stats_a);
  const double pose_to_b = detail::shape_dist(decoded, stats_b);
  out.pose_follows_tv = pose_to_a <= pose_to_b;
  return out;
}

inline SwapScores swap_transfer_score(const Model& model, const std::vector<VideoClip>& clips,
                                      int num_pairs, Rng rng) {
  if (clips.size() < 2) throw std::invalid_argument("swap_transfer_score: need >= 2 clips");
  SwapScores scores;
  int app_pass = 0, pose_pass = 0;
  for (int it = 0; it < num_pairs; ++it) {
    const int ca = static_cast<int>(rng.uniform_int(static_cast<int64_t>(clips.size())));
    int cb = static_cast<int>(rng.uniform_int(static_cast<int64_t>(clips.size() - 1)));
    if (cb >= ca) ++cb;
    const VideoClip& A = clips[static_cast<size_t>(ca)];
    const VideoClip& B = clips[static_cast<size_t>(cb)];
    const int ta = static_cast<int>(rng.uniform_int(A.T));
    const int tb = static_cast<int>(rng.uniform_int(B.T));
    const SwapPairOutcome o = swap_pair_outcome(model, A, ta, B, tb);
    app_pass += o.appearance_follows_ti ? 1 : 0;
    pose_pass += o.pose_follows_tv ? 1 : 0;
    ++scores.pairs;
  }
  scores.appearance_follows_ti = static_cast<double>(app_pass) / scores.pairs;
  scores.pose_follows_tv = static_cast<double>(pose_pass) / scores.pairs;
  return scores;
}

// ---------------------------------------------------------------------------
// Probe vs. baselines
// ---------------------------------------------------------------------------

struct ProbeReportRow {
  std::string probe_input;  // "tv" | "ti" | "random"
  double fraction = 1.0;
  uint64_t seed = 0;
  double n_mpjpe = 0.0;
  int labeled_samples = 0;
};

// Trains identical probes from (a) the tv code, (b) the ti code, (c) a random
// frozen encoder, and reports N-MPJPE per labeled fraction and seed.
inline std::vector<ProbeReportRow> probe_baseline_comparison(
    const Model& trained, const Dataset& data, const std::vector<double>& fractions,
    const std::vector<uint64_t>& seeds, const ProbeConfig& base_cfg) {
  const int K = data.train.at(0).K;
  std::vector<ProbeReportRow> rows;

  // random frozen encoder: same architecture, fresh seed, never trained
  TrainConfig rnd_cfg = trained.cfg;
  rnd_cfg.seed = trained.cfg.seed ^ 0x5eed0f00ull;
  Model random_model(rnd_cfg, trained.canvas);

  for (double fraction : fractions) {
    for (uint64_t seed : seeds) {
      ProbeConfig pcfg = base_cfg;
      pcfg.seed = seed;

      ProbeResult tv_res = train_probe(trained, data, fraction, pcfg);
      rows.push_back({"tv", fraction, seed, n_mpjpe_flat(tv_res.test_pred, tv_res.test_label, K, 2),
                      tv_res.labeled_samples});

      ProbeResult ti_res = train_probe(trained, data, fraction, pcfg, /*use_ti_head=*/true);
      rows.push_back({"ti", fraction, seed, n_mpjpe_flat(ti_res.test_pred, ti_res.test_label, K, 2),
                      ti_res.labeled_samples});

      ProbeResult rnd_res = train_probe(random_model, data, fraction, pcfg);
      rows.push_back({"random", fraction, seed,
                      n_mpjpe_flat(rnd_res.test_pred, rnd_res.test_label, K, 2),
                      rnd_res.labeled_samples});
    }
  }
  return rows;
}

}  // namespace vidrep
