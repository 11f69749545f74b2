#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "vidrep/ops.hpp"
#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

struct SamplerConfig {
  int d_near = 2;          // max distance of the positive frame
  int d_max = 20;          // min distance of the away frame
  int gravity_spacing = 10;  // equidistant quadruple spacing
  double jitter_gain_lo = 0.6;
  double jitter_gain_hi = 1.4;
  double jitter_offset = 0.2;

  void validate() const {
    if (d_near < 1) throw std::invalid_argument("SamplerConfig: d_near must be >= 1");
    if (2 * d_near >= d_max)
      throw std::invalid_argument("SamplerConfig: d_near " + std::to_string(d_near) +
                                  " must be < d_max/2 = " + std::to_string(d_max / 2.0));
    if (gravity_spacing < 1) throw std::invalid_argument("SamplerConfig: gravity spacing must be >= 1");
  }
};

// (reference, nearby, intermediate, away) frame indices from one clip with
// their temporal distances: 0 < d_n <= d_near, d_n < d_in < d_a, d_a >= d_max.
struct QuadrupleSample {
  int clip_id = 0;
  int r = 0, n = 0, in = 0, a = 0;
  double d_n = 0, d_in = 0, d_a = 0;
};

namespace detail {

// Offset at distance delta from r, on a side chosen uniformly among the
// feasible ones.
inline int place_offset(int r, int delta, int T, Rng& rng) {
  const bool left_ok = r - delta >= 0;
  const bool right_ok = r + delta <= T - 1;
  if (left_ok && right_ok) return rng.uniform_int(2) == 0 ? r - delta : r + delta;
  if (left_ok) return r - delta;
  if (right_ok) return r + delta;
  throw std::logic_error("place_offset: no feasible side");  // guarded by caller preconditions
}

}  // namespace detail

inline QuadrupleSample sample_quadruple(int T, const SamplerConfig& cfg, Rng& rng,
                                        int clip_id = 0) {
  cfg.validate();
  const int min_T = 2 * cfg.d_max + 1;
  if (T < min_T)
    throw std::invalid_argument("sample_quadruple: clip length " + std::to_string(T) +
                                " below required minimum " + std::to_string(min_T));
  QuadrupleSample q;
  q.clip_id = clip_id;
  q.r = static_cast<int>(rng.uniform_int(T));

  const int dn = 1 + static_cast<int>(rng.uniform_int(cfg.d_near));
  q.n = detail::place_offset(q.r, dn, T, rng);

  // Away side must leave room for d_max; at least one side always qualifies
  // because T >= 2 d_max + 1.
  const int left_max = q.r;
  const int right_max = T - 1 - q.r;
  const bool left_ok = left_max >= cfg.d_max;
  const bool right_ok = right_max >= cfg.d_max;
  const bool go_left = left_ok && (!right_ok || rng.uniform_int(2) == 0);
  const int side_max = go_left ? left_max : right_max;
  const int da = cfg.d_max + static_cast<int>(rng.uniform_int(side_max - cfg.d_max + 1));
  q.a = go_left ? q.r - da : q.r + da;

  // Intermediate strictly between the near and away distances; d_max > 2 d_near
  // guarantees the range is non-empty, and the side that fit the away frame
  // also fits any shorter offset.
  const int din = dn + 1 + static_cast<int>(rng.uniform_int(da - dn - 1));
  q.in = detail::place_offset(q.r, din, T, rng);

  q.d_n = dn;
  q.d_in = din;
  q.d_a = da;
  return q;
}

// Contrastive-baseline tuple: one positive within d_near and two independent
// negatives at distance >= d_max, stored in the in/a slots.
inline QuadrupleSample sample_css_tuple(int T, const SamplerConfig& cfg, Rng& rng,
                                        int clip_id = 0) {
  cfg.validate();
  const int min_T = 2 * cfg.d_max + 1;
  if (T < min_T)
    throw std::invalid_argument("sample_css_tuple: clip length " + std::to_string(T) +
                                " below required minimum " + std::to_string(min_T));
  QuadrupleSample q;
  q.clip_id = clip_id;
  q.r = static_cast<int>(rng.uniform_int(T));
  const int dn = 1 + static_cast<int>(rng.uniform_int(cfg.d_near));
  q.n = detail::place_offset(q.r, dn, T, rng);
  q.d_n = dn;

  auto away = [&](int& idx, double& dist) {
    const int left_max = q.r;
    const int right_max = T - 1 - q.r;
    const bool left_ok = left_max >= cfg.d_max;
    const bool right_ok = right_max >= cfg.d_max;
    const bool go_left = left_ok && (!right_ok || rng.uniform_int(2) == 0);
    const int side_max = go_left ? left_max : right_max;
    const int d = cfg.d_max + static_cast<int>(rng.uniform_int(side_max - cfg.d_max + 1));
    idx = go_left ? q.r - d : q.r + d;
    dist = d;
  };
  away(q.in, q.d_in);
  away(q.a, q.d_a);
  return q;
}

// Four frames at exact spacing delta: (t1, t1+delta, t1+2delta, t1+3delta).
inline std::array<int, 4> sample_equidistant(int T, int delta, Rng& rng) {
  if (delta < 1) throw std::invalid_argument("sample_equidistant: delta must be >= 1");
  if (T < 3 * delta + 1)
    throw std::invalid_argument("sample_equidistant: clip length " + std::to_string(T) +
                                " below required minimum " + std::to_string(3 * delta + 1));
  const int t1 = static_cast<int>(rng.uniform_int(T - 3 * delta));
  return {t1, t1 + delta, t1 + 2 * delta, t1 + 3 * delta};
}

// Per-channel gain plus a global brightness offset, clipped to [0,1].
struct JitterParams {
  std::array<double, 3> gain = {1.0, 1.0, 1.0};
  double offset = 0.0;
};

inline JitterParams draw_jitter(const SamplerConfig& cfg, Rng& rng) {
  JitterParams j;
  for (double& g : j.gain) g = rng.uniform(cfg.jitter_gain_lo, cfg.jitter_gain_hi);
  j.offset = rng.uniform(-cfg.jitter_offset, cfg.jitter_offset);
  return j;
}

// In-graph jitter over a batch of crops [N,3,h,w]; gradients pass through the
// unclipped region scaled by the gain.
inline Tensor apply_jitter(const Tensor& crops, const std::vector<JitterParams>& params) {
  if (crops.rank() != 4 || crops.dim(1) != 3)
    throw std::invalid_argument("apply_jitter: need [N,3,h,w], got " + shape_str(crops.shape()));
  if (crops.dim(0) != static_cast<int>(params.size()))
    throw std::invalid_argument("apply_jitter: " + std::to_string(params.size()) + " params for " +
                                shape_str(crops.shape()));
  const int N = crops.dim(0);
  const int64_t plane = static_cast<int64_t>(crops.dim(2)) * crops.dim(3);
  Tensor gain = Tensor::zeros(crops.shape());
  Tensor offset = Tensor::zeros(crops.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < 3; ++c) {
      double* g = gain.data() + (static_cast<int64_t>(n) * 3 + c) * plane;
      double* o = offset.data() + (static_cast<int64_t>(n) * 3 + c) * plane;
      std::fill(g, g + plane, params[static_cast<size_t>(n)].gain[static_cast<size_t>(c)]);
      std::fill(o, o + plane, params[static_cast<size_t>(n)].offset);
    }
  return min_const(max_const(add(mul(crops, gain), offset), 0.0), 1.0);
}

// Value-level variant matching the sampler contract: draws its own params.
inline Tensor jitter(const Tensor& crop, const SamplerConfig& cfg, Rng& rng) {
  Tensor batched = crop.rank() == 3
                       ? reshape(crop, {1, crop.dim(0), crop.dim(1), crop.dim(2)})
                       : crop;
  std::vector<JitterParams> params;
  for (int n = 0; n < batched.dim(0); ++n) params.push_back(draw_jitter(cfg, rng));
  Tensor out = apply_jitter(batched, params);
  return crop.rank() == 3 ? reshape(out, crop.shape()) : out;
}

}  // namespace vidrep
