#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "vidrep/ops.hpp"
#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

struct LossWeights {
  double lambda = 2.0;       // pixel reconstruction
  double rho = 2.0;          // perceptual reconstruction
  double alpha = 0.05;       // contrastive term
  double gamma = 1.0;        // tracking term
  double temperature = 0.1;  // softmax temperature of the contrastive loss
  double beta = 0.2;         // triplet margin
  double tau_order = 20.0;   // minimum per-step descent, pixels
  double d_max = 20.0;       // frame distance past which codes should decorrelate
  double box_prior = 1.0;    // batch-mean box prior

  void validate() const {
    if (lambda < 0 || rho < 0 || alpha < 0 || gamma < 0 || beta < 0 || box_prior < 0)
      throw std::invalid_argument("LossWeights: weights must be >= 0");
    if (temperature <= 0) throw std::invalid_argument("LossWeights: temperature must be > 0");
    if (d_max < 2) throw std::invalid_argument("LossWeights: d_max must be >= 2");
  }
};

// Fixed, seeded conv stack standing in for a pretrained feature extractor.
// Weights are constants: gradients pass through activations only.
class FeaturePyramid {
 public:
  FeaturePyramid() = default;

  FeaturePyramid(int in_channels, const std::vector<int>& channels, uint64_t seed) {
    Rng rng(seed, 0x9e11);
    int c_in = in_channels;
    for (int c_out : channels) {
      double stddev = std::sqrt(2.0 / (c_in * 9.0));
      weights_.push_back(Tensor::randn({c_out, c_in, 3, 3}, rng, stddev, false));
      biases_.push_back(Tensor::zeros({c_out}, false));
      c_in = c_out;
    }
  }

  bool defined() const { return !weights_.empty(); }
  size_t stages() const { return weights_.size(); }

  std::vector<Tensor> features(const Tensor& img) const {
    std::vector<Tensor> out;
    Tensor x = img;
    for (size_t l = 0; l < weights_.size(); ++l) {
      x = relu(conv2d(x, weights_[l], biases_[l], 2, 1));
      out.push_back(x);
    }
    return out;
  }

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

// lambda * mean((I - I~)^2) + rho * sum_l mean((F_l(I) - F_l(I~))^2)
inline Tensor reconstruction_loss(const Tensor& target, const Tensor& recon, const LossWeights& w,
                                  const FeaturePyramid* pyramid = nullptr) {
  if (target.shape() != recon.shape())
    throw std::invalid_argument("reconstruction_loss: shape mismatch " + shape_str(target.shape()) +
                                " vs " + shape_str(recon.shape()));
  Tensor loss = scalar_mul(mean(square(sub(target, recon))), w.lambda);
  if (w.rho > 0 && pyramid && pyramid->defined()) {
    if (target.rank() != 4)
      throw std::invalid_argument("reconstruction_loss: perceptual branch needs NCHW, got " +
                                  shape_str(target.shape()));
    auto ft = pyramid->features(target);
    auto fr = pyramid->features(recon);
    for (size_t l = 0; l < ft.size(); ++l)
      loss = add(loss, scalar_mul(mean(square(sub(ft[l], fr[l]))), w.rho));
  }
  return loss;
}

// -log( exp(sim(ref,pos)/tau) / sum over {pos} u negs exp(sim(ref,.)/tau) )
inline Tensor css_loss(const Tensor& ref, const Tensor& pos, const std::vector<Tensor>& negs,
                       double temperature) {
  if (negs.empty()) throw std::invalid_argument("css_loss: needs at least one negative");
  if (temperature <= 0) throw std::invalid_argument("css_loss: temperature must be > 0");
  std::vector<Tensor> sims;
  sims.push_back(cosine_sim(ref, pos));
  for (const Tensor& n : negs) sims.push_back(cosine_sim(ref, n));
  Tensor logits = scalar_mul(concat(sims, 0), 1.0 / temperature);
  // shift by the max logit for a stable log-sum-exp; the shift is a constant
  // w.r.t. the graph, which leaves the gradient untouched
  double m = logits.data()[0];
  for (int64_t i = 1; i < logits.size(); ++i) m = std::max(m, logits.data()[i]);
  Tensor lse = add_const(log_(sum(exp_(add_const(logits, -m)))), m);
  return sub(lse, narrow(logits, 0, 0, 1));
}

// max(0, |ref-pos|^2 - |ref-neg|^2 + beta)
inline Tensor triplet_loss(const Tensor& ref, const Tensor& pos, const Tensor& neg, double beta) {
  Tensor dp = sum(square(sub(ref, pos)));
  Tensor dn = sum(square(sub(ref, neg)));
  return relu(add_const(sub(dp, dn), beta));
}

// Piecewise-linear distance-based similarity loss. For nearby frames the
// weight (1 - 2d/d_max) pulls sim toward 1; past the halfway point the weight
// min(2d/d_max - 1, 1) pushes sim toward 0.
inline Tensor dsl_loss(const Tensor& m, const Tensor& n, double d, double d_max) {
  if (d < 0) throw std::invalid_argument("dsl_loss: d must be >= 0");
  if (d_max <= 0) throw std::invalid_argument("dsl_loss: d_max must be > 0");
  Tensor s = cosine_sim(m, n);
  if (d <= d_max / 2.0) {
    const double w = 1.0 - 2.0 * d / d_max;
    return scalar_mul(abs_(add_const(neg(s), 1.0)), w);
  }
  const double w = std::min(2.0 * d / d_max - 1.0, 1.0);
  return scalar_mul(abs_(s), w);
}

// Aggregate over (reference, nearby, intermediate, away).
inline Tensor dsl_quadruple_loss(const Tensor& tv_r, const Tensor& tv_n, const Tensor& tv_in,
                                 const Tensor& tv_a, double d_n, double d_in, double d_a,
                                 double d_max) {
  if (!(0 < d_n && d_n < d_in && d_in < d_a))
    throw std::invalid_argument("dsl_quadruple_loss: need 0 < d_n < d_in < d_a, got " +
                                std::to_string(d_n) + ", " + std::to_string(d_in) + ", " +
                                std::to_string(d_a));
  if (d_a < d_max)
    throw std::invalid_argument("dsl_quadruple_loss: away distance " + std::to_string(d_a) +
                                " below d_max " + std::to_string(d_max));
  Tensor loss = dsl_loss(tv_r, tv_n, d_n, d_max);
  loss = add(loss, dsl_loss(tv_r, tv_a, d_a, d_max));
  loss = add(loss, dsl_loss(tv_r, tv_in, d_in, d_max));
  return loss;
}

namespace detail {

inline Tensor elem(const Tensor& v, int i) { return narrow(v, 0, i, 1); }

inline void check_four(const Tensor& t, const char* op) {
  if (t.dim(0) != 4)
    throw std::invalid_argument(std::string(op) + ": expected 4 frames, got " +
                                shape_str(t.shape()));
}

}  // namespace detail

// ((u1 + 3 u3) - (u4 + 3 u2))^2 over four equidistant frames; zero exactly
// when the positions are quadratic in time.
inline Tensor const_acc_loss(const Tensor& u_y) {
  detail::check_four(u_y, "const_acc_loss");
  using detail::elem;
  Tensor lhs = add(elem(u_y, 0), scalar_mul(elem(u_y, 2), 3.0));
  Tensor rhs = add(elem(u_y, 3), scalar_mul(elem(u_y, 1), 3.0));
  return sum(square(sub(lhs, rhs)));
}

inline double const_acc_loss(const std::array<double, 4>& u_y) {
  return const_acc_loss(Tensor::from_data({4}, {u_y[0], u_y[1], u_y[2], u_y[3]})).value();
}

// sum_t max(0, tau - (u_{t+1} - u_t)): penalizes descent and ascent slower
// than tau per step.
inline Tensor order_loss(const Tensor& u_y, double tau_order) {
  detail::check_four(u_y, "order_loss");
  Tensor gaps = sub(narrow(u_y, 0, 1, 3), narrow(u_y, 0, 0, 3));
  return sum(relu(add_const(neg(gaps), tau_order)));
}

inline double order_loss(const std::array<double, 4>& u_y, double tau_order) {
  return order_loss(Tensor::from_data({4}, {u_y[0], u_y[1], u_y[2], u_y[3]}), tau_order).value();
}

// sum_t |s_t - s_{t+1}|^2 over (s_x, s_y) pairs.
inline Tensor scale_loss(const Tensor& scales) {
  if (scales.rank() != 2 || scales.dim(0) != 4 || scales.dim(1) != 2)
    throw std::invalid_argument("scale_loss: expected [4,2] scales, got " +
                                shape_str(scales.shape()));
  Tensor diff = sub(narrow(scales, 0, 0, 3), narrow(scales, 0, 1, 3));
  return sum(square(diff));
}

inline double scale_loss(const std::array<std::array<double, 2>, 4>& s) {
  std::vector<double> flat;
  for (const auto& p : s) {
    flat.push_back(p[0]);
    flat.push_back(p[1]);
  }
  return scale_loss(Tensor::from_data({4, 2}, flat)).value();
}

inline Tensor track_loss(const Tensor& u_y, const Tensor& scales, double tau_order) {
  return add(add(const_acc_loss(u_y), order_loss(u_y, tau_order)), scale_loss(scales));
}

// Total objective. Undefined components are disabled and contribute exactly 0.
struct LossComponents {
  Tensor reconstruction;
  Tensor contrastive;
  Tensor track;
  Tensor box_prior;
};

inline Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  if (c.reconstruction.defined()) total = add(total, c.reconstruction);
  if (c.contrastive.defined()) total = add(total, scalar_mul(c.contrastive, w.alpha));
  if (c.track.defined()) total = add(total, scalar_mul(c.track, w.gamma));
  if (c.box_prior.defined()) total = add(total, scalar_mul(c.box_prior, w.box_prior));
  return total;
}

// mean over samples of |pred_k - label_k|^2 (squared norm over all output
// coordinates of one sample).
inline Tensor pose_loss(const Tensor& pred, const Tensor& labels) {
  if (pred.shape() != labels.shape())
    throw std::invalid_argument("pose_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(labels.shape()));
  const double n = static_cast<double>(pred.dim(0));
  return scalar_mul(sum(square(sub(pred, labels))), 1.0 / n);
}

}  // namespace vidrep
