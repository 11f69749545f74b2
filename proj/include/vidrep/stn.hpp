#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vidrep/ops.hpp"
#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

// Attention box: half-extents (s_x, s_y) as fractions of the frame in
// (s_min, 1], center (u_x, u_y) in normalized [-1, 1] frame coordinates.
// s = 1, u = 0 is the identity box covering the whole frame.
struct BoxParams {
  double s_x = 1.0, s_y = 1.0;
  double u_x = 0.0, u_y = 0.0;
};

constexpr double kBoxScaleMin = 0.05;

// Raw head output that squashes to scale `target`.
inline double box_scale_bias(double target) {
  const double p = (target - kBoxScaleMin) / (1.0 - kBoxScaleMin);
  return std::log(p / (1.0 - p));
}

// Column order: s_x, s_y, u_x, u_y. Scales squash into (s_min, 1], centers
// into [-1, 1]; raw outputs are otherwise unconstrained.
inline Tensor squash_boxes(const Tensor& raw) {
  if (raw.rank() != 2 || raw.dim(1) != 4)
    throw std::invalid_argument("squash_boxes: expected [N,4], got " + shape_str(raw.shape()));
  Tensor scales = add_const(scalar_mul(sigmoid(narrow(raw, 1, 0, 2)), 1.0 - kBoxScaleMin),
                            kBoxScaleMin);
  Tensor centers = tanh_(narrow(raw, 1, 2, 2));
  return concat({scales, centers}, 1);
}

inline BoxParams box_at(const Tensor& boxes, int n) {
  const double* b = boxes.data() + static_cast<int64_t>(n) * 4;
  return {b[0], b[1], b[2], b[3]};
}

inline Tensor boxes_tensor(const std::vector<BoxParams>& boxes, bool requires_grad = false) {
  std::vector<double> data;
  for (const BoxParams& b : boxes) {
    data.push_back(b.s_x);
    data.push_back(b.s_y);
    data.push_back(b.u_x);
    data.push_back(b.u_y);
  }
  return Tensor::from_data({static_cast<int>(boxes.size()), 4}, data, requires_grad);
}

namespace detail {

// Pixel center i maps to normalized coordinate -1 + 2i/(n-1).
inline double axis_coord(int i, int extent) {
  return extent > 1 ? -1.0 + 2.0 * i / (extent - 1) : 0.0;
}

// Bilinear sample of one H x W plane at pixel coordinates (py, px), zero
// outside the frame. Also returns the value derivative along each axis.
struct BilinSample {
  double value = 0.0;
  double d_px = 0.0;
  double d_py = 0.0;
};

inline BilinSample bilinear_zeropad(const double* plane, int H, int W, double py, double px) {
  BilinSample out;
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  if (y0 < -1 || y0 > H - 1 || x0 < -1 || x0 > W - 1) return out;
  const double wy = py - y0;
  const double wx = px - x0;
  double v[2][2] = {{0, 0}, {0, 0}};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy >= 0 && yy < H && xx >= 0 && xx < W) v[dy][dx] = plane[static_cast<int64_t>(yy) * W + xx];
    }
  out.value = v[0][0] * (1 - wy) * (1 - wx) + v[0][1] * (1 - wy) * wx + v[1][0] * wy * (1 - wx) +
              v[1][1] * wy * wx;
  out.d_px = (v[0][1] - v[0][0]) * (1 - wy) + (v[1][1] - v[1][0]) * wy;
  out.d_py = (v[1][0] - v[0][0]) * (1 - wx) + (v[1][1] - v[0][1]) * wx;
  return out;
}

// Scatter g at (py, px) into the gradient plane with bilinear weights.
inline void bilinear_scatter(double* dplane, int H, int W, double py, double px, double g) {
  const int y0 = static_cast<int>(std::floor(py));
  const int x0 = static_cast<int>(std::floor(px));
  if (y0 < -1 || y0 > H - 1 || x0 < -1 || x0 > W - 1) return;
  const double wy = py - y0;
  const double wx = px - x0;
  const double w[2][2] = {{(1 - wy) * (1 - wx), (1 - wy) * wx}, {wy * (1 - wx), wy * wx}};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy >= 0 && yy < H && xx >= 0 && xx < W) dplane[static_cast<int64_t>(yy) * W + xx] += g * w[dy][dx];
    }
}

}  // namespace detail

// Differentiable axis-aligned crop: samples the box grid at (oh, ow)
// resolution with bilinear interpolation, zero outside the frame. Gradients
// flow into both the frame pixels and the box parameters.
inline Tensor stn_crop(const Tensor& frames, const Tensor& boxes, int oh, int ow) {
  if (frames.rank() != 4) throw std::invalid_argument("stn_crop: need NCHW frames, got " + shape_str(frames.shape()));
  if (boxes.rank() != 2 || boxes.dim(1) != 4 || boxes.dim(0) != frames.dim(0))
    throw std::invalid_argument("stn_crop: boxes " + shape_str(boxes.shape()) + " vs frames " +
                                shape_str(frames.shape()));
  const int N = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);

  auto sample_coords = [H, W, oh, ow](const double* box, int i, int j, double& py, double& px) {
    const double ax = detail::axis_coord(j, ow);
    const double ay = detail::axis_coord(i, oh);
    const double gx = box[2] + box[0] * ax;
    const double gy = box[3] + box[1] * ay;
    px = (gx + 1.0) * 0.5 * (W - 1);
    py = (gy + 1.0) * 0.5 * (H - 1);
  };

  Tensor y = Tensor::make_op(
      {N, C, oh, ow}, {frames, boxes},
      [N, C, H, W, oh, ow, sample_coords](detail::Node& node) {
        auto& pf = node.parents[0];
        auto& pb = node.parents[1];
        const bool need_df = pf->requires_grad;
        const bool need_db = pb->requires_grad;
        if (need_df) pf->ensure_grad();
        if (need_db) pb->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const double* box = pb->data.data() + static_cast<int64_t>(n) * 4;
          double* dbox = need_db ? pb->grad.data() + static_cast<int64_t>(n) * 4 : nullptr;
          for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
              double py, px;
              sample_coords(box, i, j, py, px);
              for (int c = 0; c < C; ++c) {
                const double g =
                    node.grad[((static_cast<int64_t>(n) * C + c) * oh + i) * ow + j];
                if (g == 0.0) continue;
                const double* plane = pf->data.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                if (need_df)
                  detail::bilinear_scatter(pf->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W,
                                           H, W, py, px, g);
                if (need_db) {
                  const auto s = detail::bilinear_zeropad(plane, H, W, py, px);
                  const double d_gx = s.d_px * 0.5 * (W - 1);
                  const double d_gy = s.d_py * 0.5 * (H - 1);
                  dbox[0] += g * d_gx * detail::axis_coord(j, ow);
                  dbox[1] += g * d_gy * detail::axis_coord(i, oh);
                  dbox[2] += g * d_gx;
                  dbox[3] += g * d_gy;
                }
              }
            }
        }
      });
  for (int n = 0; n < N; ++n) {
    const double* box = boxes.data() + static_cast<int64_t>(n) * 4;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double py, px;
        sample_coords(box, i, j, py, px);
        for (int c = 0; c < C; ++c) {
          const double* plane = frames.data() + (static_cast<int64_t>(n) * C + c) * H * W;
          y.data()[((static_cast<int64_t>(n) * C + c) * oh + i) * ow + j] =
              detail::bilinear_zeropad(plane, H, W, py, px).value;
        }
      }
  }
  return y;
}

// Inverse resampling: crop content lands inside the box footprint at full
// resolution; everything outside samples zero.
inline Tensor stn_paste(const Tensor& crops, const Tensor& boxes, int OH, int OW) {
  if (crops.rank() != 4) throw std::invalid_argument("stn_paste: need NCHW crops, got " + shape_str(crops.shape()));
  if (boxes.rank() != 2 || boxes.dim(1) != 4 || boxes.dim(0) != crops.dim(0))
    throw std::invalid_argument("stn_paste: boxes " + shape_str(boxes.shape()) + " vs crops " +
                                shape_str(crops.shape()));
  const int N = crops.dim(0), C = crops.dim(1), h = crops.dim(2), w = crops.dim(3);

  // Destination pixel -> crop pixel coordinates plus partials w.r.t. box.
  struct Coord {
    double p;       // crop pixel coordinate
    double d_u;     // d p / d u
    double d_s;     // d p / d s
  };
  auto to_crop = [](double a, double u, double s, int extent) -> Coord {
    const double c = (a - u) / s;
    const double scale = 0.5 * (extent - 1);
    return {(c + 1.0) * scale, -scale / s, -scale * (a - u) / (s * s)};
  };

  Tensor y = Tensor::make_op(
      {N, C, OH, OW}, {crops, boxes},
      [N, C, h, w, OH, OW, to_crop](detail::Node& node) {
        auto& pc = node.parents[0];
        auto& pb = node.parents[1];
        const bool need_dc = pc->requires_grad;
        const bool need_db = pb->requires_grad;
        if (need_dc) pc->ensure_grad();
        if (need_db) pb->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const double* box = pb->data.data() + static_cast<int64_t>(n) * 4;
          double* dbox = need_db ? pb->grad.data() + static_cast<int64_t>(n) * 4 : nullptr;
          for (int i = 0; i < OH; ++i) {
            const Coord cy = to_crop(detail::axis_coord(i, OH), box[3], box[1], h);
            for (int j = 0; j < OW; ++j) {
              const Coord cx = to_crop(detail::axis_coord(j, OW), box[2], box[0], w);
              for (int c = 0; c < C; ++c) {
                const double g =
                    node.grad[((static_cast<int64_t>(n) * C + c) * OH + i) * OW + j];
                if (g == 0.0) continue;
                const double* plane = pc->data.data() + (static_cast<int64_t>(n) * C + c) * h * w;
                if (need_dc)
                  detail::bilinear_scatter(pc->grad.data() + (static_cast<int64_t>(n) * C + c) * h * w,
                                           h, w, cy.p, cx.p, g);
                if (need_db) {
                  const auto s = detail::bilinear_zeropad(plane, h, w, cy.p, cx.p);
                  dbox[0] += g * s.d_px * cx.d_s;
                  dbox[1] += g * s.d_py * cy.d_s;
                  dbox[2] += g * s.d_px * cx.d_u;
                  dbox[3] += g * s.d_py * cy.d_u;
                }
              }
            }
          }
        }
      });
  for (int n = 0; n < N; ++n) {
    const double* box = boxes.data() + static_cast<int64_t>(n) * 4;
    for (int i = 0; i < OH; ++i) {
      const Coord cy = to_crop(detail::axis_coord(i, OH), box[3], box[1], h);
      for (int j = 0; j < OW; ++j) {
        const Coord cx = to_crop(detail::axis_coord(j, OW), box[2], box[0], w);
        for (int c = 0; c < C; ++c) {
          const double* plane = crops.data() + (static_cast<int64_t>(n) * C + c) * h * w;
          y.data()[((static_cast<int64_t>(n) * C + c) * OH + i) * OW + j] =
              detail::bilinear_zeropad(plane, h, w, cy.p, cx.p).value;
        }
      }
    }
  }
  return y;
}

// I~ = M x D + (1 - M) x B, elementwise; a single-channel mask broadcasts
// over the color channels.
inline Tensor composite(const Tensor& M, const Tensor& D, const Tensor& B) {
  if (D.shape() != B.shape())
    throw std::invalid_argument("composite: shape mismatch " + shape_str(D.shape()) + " vs " +
                                shape_str(B.shape()));
  if (M.rank() != D.rank())
    throw std::invalid_argument("composite: shape mismatch " + shape_str(M.shape()) + " vs " +
                                shape_str(D.shape()));
  const int C = D.dim(1);
  const int Cm = M.dim(1);
  bool ok = Cm == C || Cm == 1;
  for (int i = 0; i < D.rank() && ok; ++i)
    if (i != 1) ok = M.dim(i) == D.dim(i);
  if (!ok)
    throw std::invalid_argument("composite: shape mismatch " + shape_str(M.shape()) + " vs " +
                                shape_str(D.shape()));
  const int N = D.dim(0);
  const int64_t plane = D.size() / (static_cast<int64_t>(N) * C);

  Tensor y = Tensor::make_op(D.shape(), {M, D, B}, [N, C, Cm, plane](detail::Node& node) {
    auto& pm = node.parents[0];
    auto& pd = node.parents[1];
    auto& pb = node.parents[2];
    if (pm->requires_grad) pm->ensure_grad();
    if (pd->requires_grad) pd->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
        const int64_t moff = (static_cast<int64_t>(n) * Cm + (Cm == 1 ? 0 : c)) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double g = node.grad[off + i];
          const double m = pm->data[moff + i];
          if (pm->requires_grad) pm->grad[moff + i] += g * (pd->data[off + i] - pb->data[off + i]);
          if (pd->requires_grad) pd->grad[off + i] += g * m;
          if (pb->requires_grad) pb->grad[off + i] += g * (1.0 - m);
        }
      }
  });
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const int64_t off = (static_cast<int64_t>(n) * C + c) * plane;
      const int64_t moff = (static_cast<int64_t>(n) * Cm + (Cm == 1 ? 0 : c)) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const double m = M.data()[moff + i];
        y.data()[off + i] = m * D.data()[off + i] + (1.0 - m) * B.data()[off + i];
      }
    }
  return y;
}

// Squared penalty on the batch means only: (mean s - 0.5)^2 per scale and
// (mean u)^2 per center. Individual boxes are never penalized.
inline Tensor box_prior_loss(const Tensor& boxes) {
  if (boxes.rank() != 2 || boxes.dim(1) != 4)
    throw std::invalid_argument("box_prior_loss: expected [N,4], got " + shape_str(boxes.shape()));
  if (boxes.dim(0) < 2)
    throw std::invalid_argument("box_prior_loss: batch of " + std::to_string(boxes.dim(0)) +
                                " < 2");
  const double targets[4] = {0.5, 0.5, 0.0, 0.0};
  Tensor loss = Tensor::scalar(0.0);
  for (int j = 0; j < 4; ++j) {
    Tensor col_mean = mean(narrow(boxes, 1, j, 1));
    loss = add(loss, square(add_const(col_mean, -targets[j])));
  }
  return reshape(loss, {1});
}

// Detector: small convnet on the downsampled frame, squashed box head.
class BoxPredictor {
 public:
  BoxPredictor() = default;

  BoxPredictor(int frame_hw, int downsample, const std::vector<int>& channels, Rng& rng)
      : downsample_(downsample) {
    int hw = frame_hw / downsample;
    int c_in = 3;
    for (int c_out : channels) {
      const double stddev = std::sqrt(2.0 / (c_in * 9.0));
      conv_w_.push_back(Tensor::randn({c_out, c_in, 3, 3}, rng, stddev, true));
      conv_b_.push_back(Tensor::zeros({c_out}, true));
      c_in = c_out;
      hw = (hw + 1) / 2;
      if (hw < 1) throw std::invalid_argument("BoxPredictor: too many blocks for input size");
    }
    head_in_ = c_in * hw * hw;
    head_w_ = Tensor::randn({head_in_, 4}, rng, 1.0 / std::sqrt(static_cast<double>(head_in_)), true);
    head_b_ = Tensor::from_data({4}, {box_scale_bias(0.5), box_scale_bias(0.5), 0.0, 0.0}, true);
  }

  // Squashed BoxParams rows for a batch of frames.
  Tensor boxes(const Tensor& frames) const { return squash_boxes(raw(frames)); }

  Tensor raw(const Tensor& frames) const {
    Tensor x = downsample_ > 1 ? avgpool2d(frames, downsample_) : frames;
    for (size_t l = 0; l < conv_w_.size(); ++l) x = relu(conv2d(x, conv_w_[l], conv_b_[l], 2, 1));
    x = reshape(x, {x.dim(0), head_in_});
    return linear(x, head_w_, head_b_);
  }

  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t l = 0; l < conv_w_.size(); ++l) {
      out.emplace_back("det.conv" + std::to_string(l) + ".w", conv_w_[l]);
      out.emplace_back("det.conv" + std::to_string(l) + ".b", conv_b_[l]);
    }
    out.emplace_back("det.head.w", head_w_);
    out.emplace_back("det.head.b", head_b_);
    return out;
  }

  bool defined() const { return head_w_.defined(); }

  Tensor& head_weight() { return head_w_; }
  Tensor& head_bias() { return head_b_; }

 private:
  int downsample_ = 4;
  int head_in_ = 0;
  std::vector<Tensor> conv_w_;
  std::vector<Tensor> conv_b_;
  Tensor head_w_, head_b_;
};

}  // namespace vidrep
