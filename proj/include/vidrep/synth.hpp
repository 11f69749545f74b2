#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

// Joint order of the desk puppet.
enum PuppetJoint { kHead = 0, kPelvis = 1, kHandL = 2, kHandR = 3, kFootL = 4, kFootR = 5 };
constexpr int kPuppetJoints = 6;

// Rendered body parts, each a colored capsule (plus a head disc).
enum PuppetPart { kPartTorso = 0, kPartHead, kPartArmL, kPartArmR, kPartLegL, kPartLegR };
constexpr int kPuppetParts = 6;

struct FallSpec {
  enum class Mode { off, orthographic, perspective };
  Mode mode = Mode::off;
  double camera_distance = 640.0;  // Z in pixels, perspective only
  double depth_rate = 0.0;         // pixels/frame of motion away from the camera
};

struct PuppetConfig {
  int height = 64;
  int width = 64;
  int joints = kPuppetJoints;
  double torso_len = 14.0;
  double arm_len = 10.0;
  double leg_len = 11.0;
  double shoulder_frac = 0.7;   // shoulder position along the torso
  double limb_radius = 2.2;
  double head_radius = 3.2;
  // Mean-reverting joint-angle walk.
  double revert_rate = 0.15;
  double noise_scale = 0.12;
  double max_angle_step = 0.35;
  FallSpec fall;
  std::array<std::array<double, 3>, kPuppetParts> part_colors = {{{0.9, 0.3, 0.3},
                                                                  {1.0, 0.8, 0.6},
                                                                  {0.3, 0.8, 0.3},
                                                                  {0.3, 0.3, 0.9},
                                                                  {0.9, 0.8, 0.2},
                                                                  {0.7, 0.3, 0.8}}};

  // Farthest pixel the puppet can reach from the pelvis.
  double reach() const {
    const double arm_reach = shoulder_frac * torso_len + arm_len + limb_radius;
    const double head_reach = torso_len + head_radius;
    const double leg_reach = leg_len + limb_radius;
    return std::max({arm_reach, head_reach, leg_reach});
  }

  void validate() const {
    if (height < 32 || width < 32)
      throw std::invalid_argument("PuppetConfig: canvas " + std::to_string(height) + "x" +
                                  std::to_string(width) + " below 32x32");
    if (joints < 2) throw std::invalid_argument("PuppetConfig: need at least pelvis and one joint");
    if (joints != kPuppetJoints)
      throw std::invalid_argument("PuppetConfig: desk puppet has exactly " +
                                  std::to_string(kPuppetJoints) + " joints");
    if (torso_len <= 0 || arm_len <= 0 || leg_len <= 0 || limb_radius <= 0)
      throw std::invalid_argument("PuppetConfig: limb lengths must be positive");
    for (const auto& c : part_colors)
      for (double v : c)
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("PuppetConfig: hues must be in [0,1]");
    if (2.0 * reach() >= std::min(height, width))
      throw std::invalid_argument("PuppetConfig: puppet with reach " + std::to_string(reach()) +
                                  " larger than canvas");
  }
};

// Largest possible per-frame keypoint displacement produced by the angle walk
// (longest lever arm times the clamped angle step).
inline double pose_step_bound(const PuppetConfig& cfg) {
  const double lever = std::max({cfg.torso_len, cfg.shoulder_frac * cfg.torso_len + cfg.arm_len,
                                 cfg.leg_len});
  return cfg.max_angle_step * lever;
}

struct VideoClip {
  int T = 0, H = 0, W = 0, K = kPuppetJoints;
  std::vector<double> frames;              // T*3*H*W in [0,1]
  std::vector<int> timestamps;             // 0..T-1
  std::vector<double> keypoints;           // T*K*2, (x, y) pixels
  std::vector<double> keypoints_centered;  // pelvis at the origin
  int appearance_label = 0;
  std::vector<double> background;  // 3*H*W
  std::vector<double> fg_fraction;  // per frame, [0,1]
  PuppetConfig config;
  uint64_t seed = 0;
  uint64_t stream = 0;

  const double* frame(int t) const { return frames.data() + static_cast<int64_t>(t) * 3 * H * W; }
  const double* frame_keypoints(int t) const {
    return keypoints.data() + static_cast<int64_t>(t) * K * 2;
  }
  Tensor frame_tensor(int t) const {
    return Tensor::from_data({3, H, W},
                             std::vector<double>(frame(t), frame(t) + static_cast<int64_t>(3) * H * W));
  }
  Tensor background_tensor() const { return Tensor::from_data({3, H, W}, background); }
};

namespace detail {

struct Pose {
  // x right, y down; angles are segment directions from the parent joint
  std::array<double, 5> angles;  // torso, armL, armR, legL, legR
};

inline std::array<double, 5> rest_angles() {
  constexpr double pi = 3.14159265358979323846;
  return {-pi / 2, 3 * pi / 4, pi / 4, pi / 2 + 0.35, pi / 2 - 0.35};
}

inline Pose initial_pose(const PuppetConfig& cfg, Rng& rng) {
  Pose p{rest_angles()};
  for (double& a : p.angles) a += 2.0 * cfg.noise_scale * rng.normal();
  return p;
}

inline void step_pose(Pose& p, const PuppetConfig& cfg, Rng& rng) {
  const auto rest = rest_angles();
  for (size_t i = 0; i < p.angles.size(); ++i) {
    double delta = cfg.revert_rate * (rest[i] - p.angles[i]) + cfg.noise_scale * rng.normal();
    delta = std::clamp(delta, -cfg.max_angle_step, cfg.max_angle_step);
    p.angles[i] += delta;
  }
}

// Joint positions for a pelvis location and a limb scale factor.
inline std::array<std::array<double, 2>, kPuppetJoints> joint_positions(const PuppetConfig& cfg,
                                                                        const Pose& p, double px,
                                                                        double py, double scale) {
  auto dir = [](double a) { return std::array<double, 2>{std::cos(a), std::sin(a)}; };
  std::array<std::array<double, 2>, kPuppetJoints> j{};
  const auto dt = dir(p.angles[0]);
  j[kPelvis] = {px, py};
  j[kHead] = {px + scale * cfg.torso_len * dt[0], py + scale * cfg.torso_len * dt[1]};
  const double sx = px + scale * cfg.shoulder_frac * cfg.torso_len * dt[0];
  const double sy = py + scale * cfg.shoulder_frac * cfg.torso_len * dt[1];
  const auto dal = dir(p.angles[1]);
  const auto dar = dir(p.angles[2]);
  j[kHandL] = {sx + scale * cfg.arm_len * dal[0], sy + scale * cfg.arm_len * dal[1]};
  j[kHandR] = {sx + scale * cfg.arm_len * dar[0], sy + scale * cfg.arm_len * dar[1]};
  const auto dll = dir(p.angles[3]);
  const auto dlr = dir(p.angles[4]);
  j[kFootL] = {px + scale * cfg.leg_len * dll[0], py + scale * cfg.leg_len * dll[1]};
  j[kFootR] = {px + scale * cfg.leg_len * dlr[0], py + scale * cfg.leg_len * dlr[1]};
  return j;
}

inline double dist_to_segment(double x, double y, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = x - (ax + t * vx), dy = y - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Capsule {
  double ax, ay, bx, by, radius;
  std::array<double, 3> color;
};

// Anti-aliased capsule compositing over the frame; alpha accumulates so the
// foreground fraction can be measured.
inline void render_capsules(const std::vector<Capsule>& caps, int H, int W, double* rgb,
                            double* alpha_acc) {
  constexpr double aa = 1.0;
  for (const Capsule& cap : caps) {
    const double pad = cap.radius + aa;
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(cap.ay, cap.by) - pad)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(cap.ay, cap.by) + pad)));
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(cap.ax, cap.bx) - pad)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(cap.ax, cap.bx) + pad)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = dist_to_segment(x, y, cap.ax, cap.ay, cap.bx, cap.by);
        const double a = std::clamp(0.5 + (cap.radius - d) / aa, 0.0, 1.0);
        if (a <= 0.0) continue;
        const int64_t idx = static_cast<int64_t>(y) * W + x;
        for (int c = 0; c < 3; ++c) {
          double& px = rgb[static_cast<int64_t>(c) * H * W + idx];
          px = a * cap.color[static_cast<size_t>(c)] + (1.0 - a) * px;
        }
        alpha_acc[idx] = 1.0 - (1.0 - alpha_acc[idx]) * (1.0 - a);
      }
  }
}

inline std::vector<Capsule> puppet_capsules(const PuppetConfig& cfg,
                                            const std::array<std::array<double, 2>, kPuppetJoints>& j,
                                            double scale) {
  const double r = cfg.limb_radius * scale;
  return {
      {j[kPelvis][0], j[kPelvis][1], j[kHead][0], j[kHead][1], r, cfg.part_colors[kPartTorso]},
      {j[kPelvis][0], j[kPelvis][1], j[kFootL][0], j[kFootL][1], r, cfg.part_colors[kPartLegL]},
      {j[kPelvis][0], j[kPelvis][1], j[kFootR][0], j[kFootR][1], r, cfg.part_colors[kPartLegR]},
      {(j[kPelvis][0] + cfg.shoulder_frac * (j[kHead][0] - j[kPelvis][0])),
       (j[kPelvis][1] + cfg.shoulder_frac * (j[kHead][1] - j[kPelvis][1])), j[kHandL][0],
       j[kHandL][1], r, cfg.part_colors[kPartArmL]},
      {(j[kPelvis][0] + cfg.shoulder_frac * (j[kHead][0] - j[kPelvis][0])),
       (j[kPelvis][1] + cfg.shoulder_frac * (j[kHead][1] - j[kPelvis][1])), j[kHandR][0],
       j[kHandR][1], r, cfg.part_colors[kPartArmR]},
      {j[kHead][0], j[kHead][1], j[kHead][0], j[kHead][1], cfg.head_radius * scale,
       cfg.part_colors[kPartHead]},
  };
}

// Smooth low-contrast background: corner-interpolated gradient plus two soft
// blobs, all drawn from the clip stream.
inline std::vector<double> render_background(const PuppetConfig& cfg, Rng& rng) {
  const int H = cfg.height, W = cfg.width;
  std::vector<double> bg(static_cast<size_t>(3) * H * W);
  std::array<std::array<double, 3>, 4> corners;
  for (auto& c : corners)
    for (double& v : c) v = 0.35 + 0.3 * rng.uniform() - 0.04 + 0.08 * rng.uniform();
  struct Blob {
    double cx, cy, r;
    std::array<double, 3> tint;
  };
  std::array<Blob, 2> blobs;
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, W - 1.0);
    b.cy = rng.uniform(0.0, H - 1.0);
    b.r = rng.uniform(0.2, 0.45) * std::min(H, W);
    for (double& v : b.tint) v = rng.uniform(-0.06, 0.06);
  }
  for (int y = 0; y < H; ++y) {
    const double fy = H > 1 ? static_cast<double>(y) / (H - 1) : 0.0;
    for (int x = 0; x < W; ++x) {
      const double fx = W > 1 ? static_cast<double>(x) / (W - 1) : 0.0;
      for (int c = 0; c < 3; ++c) {
        double v = (1 - fy) * ((1 - fx) * corners[0][c] + fx * corners[1][c]) +
                   fy * ((1 - fx) * corners[2][c] + fx * corners[3][c]);
        for (const Blob& b : blobs) {
          const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
          v += b.tint[static_cast<size_t>(c)] * std::exp(-d2 / (2.0 * b.r * b.r));
        }
        bg[(static_cast<int64_t>(c) * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return bg;
}

struct Trajectory {
  std::vector<double> px, py;     // pelvis pixels per frame
  std::vector<double> scale;     // limb scale per frame (perspective shrink)
};

inline Trajectory make_trajectory(const PuppetConfig& cfg, int T, const std::array<double, 2>& g,
                                  const std::array<double, 2>& v0, const std::array<double, 2>& p0) {
  Trajectory tr;
  tr.px.resize(static_cast<size_t>(T));
  tr.py.resize(static_cast<size_t>(T));
  tr.scale.assign(static_cast<size_t>(T), 1.0);
  const double cx = (cfg.width - 1) / 2.0;
  const double cy = (cfg.height - 1) / 2.0;
  for (int t = 0; t < T; ++t) {
    const double wx = p0[0] + v0[0] * t + 0.5 * g[0] * t * t;
    const double wy = p0[1] + v0[1] * t + 0.5 * g[1] * t * t;
    if (cfg.fall.mode == FallSpec::Mode::perspective) {
      const double z = cfg.fall.depth_rate * t;
      const double s = cfg.fall.camera_distance / (cfg.fall.camera_distance + z);
      tr.px[static_cast<size_t>(t)] = cx + (wx - cx) * s;
      tr.py[static_cast<size_t>(t)] = cy + (wy - cy) * s;
      tr.scale[static_cast<size_t>(t)] = s;
    } else {
      tr.px[static_cast<size_t>(t)] = wx;
      tr.py[static_cast<size_t>(t)] = wy;
    }
  }
  return tr;
}

inline VideoClip render_clip(const PuppetConfig& cfg, int T, const Trajectory& tr, Rng& rng,
                             uint64_t stream_tag) {
  VideoClip clip;
  clip.T = T;
  clip.H = cfg.height;
  clip.W = cfg.width;
  clip.K = kPuppetJoints;
  clip.config = cfg;
  clip.seed = rng.seed();
  clip.stream = stream_tag;
  clip.background = render_background(cfg, rng);
  clip.frames.resize(static_cast<size_t>(T) * 3 * cfg.height * cfg.width);
  clip.keypoints.resize(static_cast<size_t>(T) * kPuppetJoints * 2);
  clip.keypoints_centered.resize(clip.keypoints.size());
  clip.fg_fraction.resize(static_cast<size_t>(T));
  clip.timestamps.resize(static_cast<size_t>(T));

  Pose pose = initial_pose(cfg, rng);
  std::vector<double> alpha(static_cast<size_t>(cfg.height) * cfg.width);
  for (int t = 0; t < T; ++t) {
    clip.timestamps[static_cast<size_t>(t)] = t;
    if (t > 0) step_pose(pose, cfg, rng);
    const double scale = tr.scale[static_cast<size_t>(t)];
    const auto joints = joint_positions(cfg, pose, tr.px[static_cast<size_t>(t)],
                                        tr.py[static_cast<size_t>(t)], scale);
    double* frame = clip.frames.data() + static_cast<int64_t>(t) * 3 * cfg.height * cfg.width;
    std::copy(clip.background.begin(), clip.background.end(), frame);
    std::fill(alpha.begin(), alpha.end(), 0.0);
    render_capsules(puppet_capsules(cfg, joints, scale), cfg.height, cfg.width, frame,
                    alpha.data());
    int covered = 0;
    for (double a : alpha)
      if (a > 0.5) ++covered;
    clip.fg_fraction[static_cast<size_t>(t)] =
        static_cast<double>(covered) / (static_cast<double>(cfg.height) * cfg.width);
    for (int k = 0; k < kPuppetJoints; ++k) {
      const int64_t base = (static_cast<int64_t>(t) * kPuppetJoints + k) * 2;
      clip.keypoints[static_cast<size_t>(base)] = joints[static_cast<size_t>(k)][0];
      clip.keypoints[static_cast<size_t>(base) + 1] = joints[static_cast<size_t>(k)][1];
      clip.keypoints_centered[static_cast<size_t>(base)] =
          joints[static_cast<size_t>(k)][0] - joints[kPelvis][0];
      clip.keypoints_centered[static_cast<size_t>(base) + 1] =
          joints[static_cast<size_t>(k)][1] - joints[kPelvis][1];
    }
  }
  return clip;
}

}  // namespace detail

// Pose-only clip: the pelvis sits at a fixed random in-reach location and the
// joint angles follow the mean-reverting walk.
inline VideoClip generate_clip(const PuppetConfig& cfg, int T, Rng rng) {
  cfg.validate();
  if (T < 4) throw std::invalid_argument("generate_clip: need T >= 4, got " + std::to_string(T));
  const double margin = cfg.reach() + 1.0;
  const double px = rng.uniform(margin, cfg.width - 1 - margin);
  const double py = rng.uniform(margin, cfg.height - 1 - margin);
  detail::Trajectory tr;
  tr.px.assign(static_cast<size_t>(T), px);
  tr.py.assign(static_cast<size_t>(T), py);
  tr.scale.assign(static_cast<size_t>(T), 1.0);
  return detail::render_clip(cfg, T, tr, rng, rng.stream());
}

// Ballistic clip: pelvis follows p(t) = 0.5 g t^2 + v0 t + p0, projected
// orthographically or with perspective focal scaling.
inline VideoClip generate_fall_clip(const PuppetConfig& cfg, int T, const std::array<double, 2>& g,
                                    const std::array<double, 2>& v0,
                                    const std::array<double, 2>& p0, Rng rng) {
  cfg.validate();
  if (T < 4) throw std::invalid_argument("generate_fall_clip: need T >= 4");
  if (cfg.fall.mode == FallSpec::Mode::off)
    throw std::invalid_argument("generate_fall_clip: fall mode is off");
  detail::Trajectory tr = detail::make_trajectory(cfg, T, g, v0, p0);
  for (int t = 0; t < T; ++t) {
    const double x = tr.px[static_cast<size_t>(t)];
    const double y = tr.py[static_cast<size_t>(t)];
    if (x < 0 || x > cfg.width - 1 || y < 0 || y > cfg.height - 1)
      throw std::invalid_argument("generate_fall_clip: trajectory exits frame at t = " +
                                  std::to_string(t));
  }
  return detail::render_clip(cfg, T, tr, rng, rng.stream());
}

// Per-pixel per-channel median over frames.
inline Tensor estimate_background(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(1) != 3)
    throw std::invalid_argument("estimate_background: need [T,3,H,W], got " +
                                shape_str(frames.shape()));
  const int T = frames.dim(0);
  if (T < 3) throw std::invalid_argument("estimate_background: need T >= 3, got " + std::to_string(T));
  const int H = frames.dim(2), W = frames.dim(3);
  const int64_t plane = static_cast<int64_t>(3) * H * W;
  Tensor bg = Tensor::zeros({3, H, W});
  std::vector<double> column(static_cast<size_t>(T));
  for (int64_t i = 0; i < plane; ++i) {
    for (int t = 0; t < T; ++t) column[static_cast<size_t>(t)] = frames.data()[t * plane + i];
    auto mid = column.begin() + T / 2;
    std::nth_element(column.begin(), mid, column.end());
    double med = *mid;
    if (T % 2 == 0) {
      auto lo = std::max_element(column.begin(), mid);
      med = 0.5 * (med + *lo);
    }
    bg.data()[i] = med;
  }
  return bg;
}

inline Tensor estimate_background(const VideoClip& clip) {
  return estimate_background(Tensor::from_data({clip.T, 3, clip.H, clip.W}, clip.frames));
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct DatasetConfig {
  PuppetConfig puppet;
  int train_clips = 8;
  int val_clips = 2;
  int test_clips = 2;
  int frames_per_clip = 300;
  uint64_t seed = 1;
  // Fall clips use a shorter horizon so the dive fits the canvas.
  int fall_frames = 48;
};

struct Dataset {
  std::vector<VideoClip> train, val, test;

  const VideoClip& clip_by_label(int label) const {
    for (const auto* split : {&train, &val, &test})
      for (const VideoClip& c : *split)
        if (c.appearance_label == label) return c;
    throw std::out_of_range("no clip with label " + std::to_string(label));
  }
};

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  return {r + m, g + m, b + m};
}

// Golden-ratio hue spacing keeps clip appearances well separated no matter
// how many clips are generated.
inline void assign_appearance(PuppetConfig& cfg, int clip_index) {
  const double base = std::fmod(0.11 + 0.61803398875 * clip_index, 1.0);
  cfg.part_colors[kPartTorso] = hsv_to_rgb(base, 0.85, 0.9);
  cfg.part_colors[kPartHead] = hsv_to_rgb(base, 0.45, 1.0);
  cfg.part_colors[kPartArmL] = hsv_to_rgb(base + 0.07, 0.8, 0.85);
  cfg.part_colors[kPartArmR] = hsv_to_rgb(base + 0.07, 0.8, 0.65);
  cfg.part_colors[kPartLegL] = hsv_to_rgb(base - 0.07, 0.8, 0.8);
  cfg.part_colors[kPartLegR] = hsv_to_rgb(base - 0.07, 0.8, 0.6);
}

inline VideoClip dataset_clip(const DatasetConfig& ds, int clip_index) {
  PuppetConfig cfg = ds.puppet;
  assign_appearance(cfg, clip_index);
  Rng stream(ds.seed, 1000 + static_cast<uint64_t>(clip_index));
  VideoClip clip;
  if (cfg.fall.mode == FallSpec::Mode::off) {
    clip = generate_clip(cfg, ds.frames_per_clip, stream);
  } else {
    const double margin = cfg.reach() + 1.0;
    const int T = ds.fall_frames;
    const double y0 = margin;
    const double y1 = cfg.height - 1 - margin;
    const double x0 = cfg.width / 2.0 + stream.uniform(-4.0, 4.0);
    const double travel = y1 - y0;
    const double v0y = 0.25 * travel / T;
    const double gy = 2.0 * (travel - v0y * T) / (static_cast<double>(T) * T);
    const double vx_max = std::min(x0 - margin, cfg.width - 1 - margin - x0) / T;
    const double vx = stream.uniform(-vx_max, vx_max);
    clip = generate_fall_clip(cfg, T, {0.0, gy}, {vx, v0y}, {x0, y0}, stream);
  }
  clip.appearance_label = clip_index;
  return clip;
}

}  // namespace detail

// Clip generation is independent per clip (own stream), so the split
// boundaries never leak frames: splits are by clip.
inline Dataset generate_dataset(const DatasetConfig& ds) {
  ds.puppet.validate();
  Dataset out;
  int index = 0;
  for (int i = 0; i < ds.train_clips; ++i) out.train.push_back(detail::dataset_clip(ds, index++));
  for (int i = 0; i < ds.val_clips; ++i) out.val.push_back(detail::dataset_clip(ds, index++));
  for (int i = 0; i < ds.test_clips; ++i) out.test.push_back(detail::dataset_clip(ds, index++));
  return out;
}

}  // namespace vidrep
