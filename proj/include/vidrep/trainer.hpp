#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidrep/codec.hpp"
#include "vidrep/losses.hpp"
#include "vidrep/sampling.hpp"
#include "vidrep/serial.hpp"
#include "vidrep/stn.hpp"
#include "vidrep/synth.hpp"

namespace vidrep {

// ---------------------------------------------------------------------------
// Variants (the ablation axes)
// ---------------------------------------------------------------------------

enum class ModelVariant { dsl_stn, css_stn, ae_stn, no_decode, no_split, no_stn };

struct VariantTraits {
  bool decode = true;
  bool stn = true;
  bool split = true;
  enum class Contrastive { none, dsl, css } contrastive = Contrastive::dsl;
};

inline VariantTraits variant_traits(ModelVariant v) {
  using C = VariantTraits::Contrastive;
  switch (v) {
    case ModelVariant::dsl_stn: return {true, true, true, C::dsl};
    case ModelVariant::css_stn: return {true, true, true, C::css};
    case ModelVariant::ae_stn: return {true, true, false, C::none};
    case ModelVariant::no_decode: return {false, true, false, C::dsl};
    case ModelVariant::no_split: return {true, true, false, C::dsl};
    case ModelVariant::no_stn: return {false, false, false, C::dsl};
  }
  throw std::logic_error("unknown variant");
}

inline std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::dsl_stn: return "dsl-stn";
    case ModelVariant::css_stn: return "css-stn";
    case ModelVariant::ae_stn: return "ae-stn";
    case ModelVariant::no_decode: return "no-decode";
    case ModelVariant::no_split: return "no-split";
    case ModelVariant::no_stn: return "no-stn";
  }
  throw std::logic_error("unknown variant");
}

inline ModelVariant variant_from_name(const std::string& s) {
  for (ModelVariant v : {ModelVariant::dsl_stn, ModelVariant::css_stn, ModelVariant::ae_stn,
                         ModelVariant::no_decode, ModelVariant::no_split, ModelVariant::no_stn})
    if (variant_name(v) == s) return v;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

enum class GravitySchedule { off, two_stage };

struct TrainConfig {
  ModelVariant variant = ModelVariant::dsl_stn;
  // Matches the variant's traits; kept explicit so contradictory requests are
  // rejected rather than silently corrected.
  bool latent_split = true;

  LossWeights loss;
  SamplerConfig sampler;
  CodecConfig codec;
  int detector_downsample = 4;
  std::vector<int> detector_channels = {8, 16, 32, 64};
  std::vector<int> pyramid_channels = {6, 12, 24};

  double lr = 1e-3;
  int batch_quadruples = 4;  // 4 quadruples x 4 frames per step
  int max_steps = 600;
  int eval_interval = 25;
  int patience = 10;

  GravitySchedule gravity = GravitySchedule::off;
  int stage1_steps = 150;
  int gravity_quadruples = 2;

  uint64_t seed = 1;

  void validate() const {
    const VariantTraits t = variant_traits(variant);
    if (latent_split && !t.decode)
      throw std::invalid_argument("TrainConfig: " + variant_name(variant) +
                                  " cannot split the latent: nothing decodes the ti component");
    if (latent_split != t.split)
      throw std::invalid_argument("TrainConfig: latent_split=" +
                                  std::string(latent_split ? "true" : "false") +
                                  " contradicts variant " + variant_name(variant));
    loss.validate();
    sampler.validate();
    codec.validate();
    if (lr <= 0 || batch_quadruples < 1 || max_steps < 1 || eval_interval < 1 || patience < 1)
      throw std::invalid_argument("TrainConfig: bad optimization settings");
    if (gravity == GravitySchedule::two_stage && stage1_steps < 1)
      throw std::invalid_argument("TrainConfig: two-stage schedule needs stage1_steps >= 1");
  }
};

inline TrainConfig make_train_config(ModelVariant v) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.latent_split = variant_traits(v).split;
  return cfg;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

// Adaptive moment estimation with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      const double* g = p.grad();
      double* m = m_[i].data();
      double* v = v_[i].data();
      double* w = p.data();
      for (int64_t k = 0; k < p.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        w[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct Model {
  TrainConfig cfg;
  BoxPredictor detector;
  Codec codec;
  FeaturePyramid pyramid;
  int canvas = 64;

  Model() = default;

  Model(const TrainConfig& config, int canvas_hw) : cfg(config), canvas(canvas_hw) {
    cfg.validate();
    const VariantTraits t = variant_traits(cfg.variant);
    if (!t.stn && canvas != cfg.codec.crop)
      throw std::invalid_argument("no-stn variant feeds frames straight to the encoder; canvas " +
                                  std::to_string(canvas) + " must equal crop " +
                                  std::to_string(cfg.codec.crop));
    Rng rng(cfg.seed, 0x3310de1);
    if (t.stn) detector = BoxPredictor(canvas, cfg.detector_downsample, cfg.detector_channels, rng);
    codec = Codec(cfg.codec, rng);
    pyramid = FeaturePyramid(3, cfg.pyramid_channels, cfg.seed ^ 0xfeed5eed);
  }

  VariantTraits traits() const { return variant_traits(cfg.variant); }

  Tensor boxes_for(const Tensor& frames) const {
    if (traits().stn) return detector.boxes(frames);
    std::vector<BoxParams> id(static_cast<size_t>(frames.dim(0)));
    return boxes_tensor(id);
  }

  Tensor crops_for(const Tensor& frames, const Tensor& boxes) const {
    if (!traits().stn) return frames;
    return stn_crop(frames, boxes, cfg.codec.crop, cfg.codec.crop);
  }

  // Frozen-feature view used by the probe: tv for split variants, the full
  // latent otherwise. Values only, no gradient kept.
  Tensor probe_features(const Tensor& frames) const {
    Tensor crops = crops_for(frames, boxes_for(frames));
    Tensor tv = codec.encode(crops, LatentHead::tv);
    if (cfg.latent_split) return Tensor::from_data(tv.shape(), tv.vec());
    Tensor ti = codec.encode(crops, LatentHead::ti);
    Tensor z = concat({tv, ti}, 1);
    return Tensor::from_data(z.shape(), z.vec());
  }

  // Baseline view: features from the ti head alone.
  Tensor probe_features_ti(const Tensor& frames) const {
    Tensor crops = crops_for(frames, boxes_for(frames));
    Tensor ti = codec.encode(crops, LatentHead::ti);
    return Tensor::from_data(ti.shape(), ti.vec());
  }

  int probe_feature_dim() const {
    return cfg.latent_split ? cfg.codec.n_tv : cfg.codec.n_tv + cfg.codec.n_ti;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    if (detector.defined())
      for (auto& e : detector.named_params()) out.push_back(e);
    for (auto& e : codec.named_params()) out.push_back(e);
    return out;
  }

  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : named_params()) out.push_back(t);
    return out;
  }

  void save(const std::filesystem::path& path) { save_named_tensors(path, named_params()); }
  void load(const std::filesystem::path& path) { load_into_named(path, named_params()); }
};

// ---------------------------------------------------------------------------
// Phase-1 self-supervised training
// ---------------------------------------------------------------------------

struct StepLog {
  int step = 0;
  double total = 0, reconstruction = 0, contrastive = 0, box_prior = 0, track = 0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
  bool has_val = false;
  double wall_ms = 0;
};

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream os(path, std::ios::trunc);
  os << "step,total,reconstruction,contrastive,box_prior,track,val_metric,wall_ms\n";
  os.precision(17);
  for (const StepLog& r : log) {
    os << r.step << ',' << r.total << ',' << r.reconstruction << ',' << r.contrastive << ','
       << r.box_prior << ',' << r.track << ',';
    if (r.has_val) os << r.val_metric;
    os << ',' << r.wall_ms << "\n";
  }
}

class Trainer {
 public:
  Trainer(const Dataset& data, const TrainConfig& cfg)
      : data_(&data), cfg_(cfg), model_(cfg, data.train.at(0).H), rng_(cfg.seed, 0x7e41) {
    cfg_.validate();
    if (data.train.empty() || data.val.empty())
      throw std::invalid_argument("Trainer: dataset needs train and val clips");
    adam_ = Adam(model_.params(), cfg_.lr);
    if (wants_track()) {
      for (const VideoClip& c : data.train)
        if (c.config.fall.mode == FallSpec::Mode::off)
          throw std::invalid_argument("Trainer: gravity schedule needs fall-mode clips");
    }
  }

  Model& model() { return model_; }
  const std::vector<StepLog>& log() const { return log_; }
  int steps_done() const { return step_; }
  bool early_stopped() const { return stopped_; }

  // Runs until max_steps or early stop. The two-stage gravity schedule first
  // optimizes localization (reconstruction + prior + tracking, contrastive
  // off), then switches to representation learning (contrastive on, tracking
  // off).
  void run() {
    if (log_.empty() && step_ == 0) {
      StepLog initial;
      initial.step = -1;  // pre-training validation reference
      initial.val_metric = eval_validation();
      initial.has_val = true;
      log_.push_back(initial);
    }
    while (step_ < cfg_.max_steps && !stopped_) step_once();
  }

  void step_once() {
    const auto t0 = std::chrono::steady_clock::now();
    const bool stage1 = cfg_.gravity == GravitySchedule::two_stage && step_ < cfg_.stage1_steps;
    const bool stage2 = cfg_.gravity == GravitySchedule::two_stage && step_ >= cfg_.stage1_steps;
    const bool contrastive_on =
        model_.traits().contrastive != VariantTraits::Contrastive::none && !stage1;
    const bool track_on = wants_track() && !stage2;

    adam_.zero_grad();
    StepLog row;
    row.step = step_;

    LossComponents comps = forward_losses(contrastive_on, track_on, &row);
    Tensor total = total_loss(comps, effective_weights());
    row.total = total.value();
    if (std::isnan(row.total))
      throw std::runtime_error(
          "training aborted: NaN loss at step " + std::to_string(step_) + " (reconstruction " +
          std::to_string(row.reconstruction) + ", contrastive " + std::to_string(row.contrastive) +
          ", box_prior " + std::to_string(row.box_prior) + ", track " + std::to_string(row.track) +
          ")");
    backward(total);
    adam_.step();
    ++step_;

    if (step_ % cfg_.eval_interval == 0) {
      row.val_metric = eval_validation();
      row.has_val = true;
      if (row.val_metric < best_val_ - 1e-12) {
        best_val_ = row.val_metric;
        evals_since_best_ = 0;
      } else if (++evals_since_best_ >= cfg_.patience) {
        stopped_ = true;
      }
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    log_.push_back(row);
  }

  // Validation metric: mean reconstruction loss over a fixed frame set for
  // decoding variants, mean contrastive loss otherwise.
  double eval_validation() {
    const VariantTraits t = model_.traits();
    Rng vrng(cfg_.seed, 0xe7a1);  // fixed stream: identical batches every eval
    if (t.decode) {
      double acc = 0.0;
      int batches = 0;
      for (size_t ci = 0; ci < data_->val.size(); ++ci) {
        const VideoClip& clip = data_->val[ci];
        std::vector<int> ts;
        for (int k = 0; k < 4; ++k) ts.push_back((clip.T - 1) * k / 3);
        Tensor frames = stack_frames(clip, ts);
        Tensor bg = stack_background(clip, static_cast<int>(ts.size()));
        Tensor boxes = model_.boxes_for(frames);
        Tensor crops = model_.crops_for(frames, boxes);
        Tensor tv = model_.codec.encode(crops, LatentHead::tv);
        Tensor ti = model_.codec.encode(crops, LatentHead::ti);
        auto [rgb, mask] = model_.codec.decode(tv, ti);
        Tensor recon = compose_full(rgb, mask, boxes, bg);
        acc += reconstruction_loss(frames, recon, cfg_.loss, &model_.pyramid).value();
        ++batches;
      }
      return acc / batches;
    }
    double acc = 0.0;
    int count = 0;
    for (size_t ci = 0; ci < data_->val.size(); ++ci) {
      const VideoClip& clip = data_->val[ci];
      for (int rep = 0; rep < 2; ++rep) {
        QuadrupleSample q = sample_quadruple(clip.T, cfg_.sampler, vrng, static_cast<int>(ci));
        Tensor frames = stack_frames(clip, {q.r, q.n, q.in, q.a});
        Tensor feats = contrastive_codes(frames);
        acc += dsl_quadruple_loss(row(feats, 0), row(feats, 1), row(feats, 2), row(feats, 3), q.d_n,
                                  q.d_in, q.d_a, cfg_.loss.d_max)
                   .value();
        ++count;
      }
    }
    return acc / count;
  }

  void save_checkpoint(const std::filesystem::path& path) {
    auto entries = model_.named_params();
    auto names = model_.named_params();
    for (size_t i = 0; i < names.size(); ++i) {
      entries.emplace_back("opt.m." + names[i].first,
                           Tensor::from_data(names[i].second.shape(), adam_.moment1()[i]));
      entries.emplace_back("opt.v." + names[i].first,
                           Tensor::from_data(names[i].second.shape(), adam_.moment2()[i]));
    }
    entries.emplace_back(
        "trainer.state",
        Tensor::from_data({5}, {static_cast<double>(step_), static_cast<double>(adam_.steps_taken()),
                                static_cast<double>(rng_.position()), best_val_,
                                static_cast<double>(evals_since_best_)}));
    save_named_tensors(path, entries);
  }

  static Trainer resume(const Dataset& data, const TrainConfig& cfg,
                        const std::filesystem::path& path) {
    Trainer t(data, cfg);
    auto stored = load_named_tensors(path);
    auto params = t.model_.named_params();
    size_t idx = 0;
    for (auto& [name, tensor] : params) {
      if (stored[idx].first != name) throw std::runtime_error("checkpoint order mismatch at " + name);
      tensor.vec() = stored[idx++].second.vec();
    }
    for (size_t i = 0; i < params.size(); ++i) {
      t.adam_.moment1()[i] = stored[idx++].second.vec();
      t.adam_.moment2()[i] = stored[idx++].second.vec();
    }
    const auto& st = stored[idx].second;
    if (stored[idx].first != "trainer.state") throw std::runtime_error("checkpoint missing trainer state");
    t.step_ = static_cast<int>(st.data()[0]);
    t.adam_.set_steps_taken(static_cast<int64_t>(st.data()[1]));
    t.rng_.seek(static_cast<uint64_t>(st.data()[2]));
    t.best_val_ = st.data()[3];
    t.evals_since_best_ = static_cast<int>(st.data()[4]);
    return t;
  }

 private:
  bool wants_track() const { return cfg_.gravity != GravitySchedule::off; }

  LossWeights effective_weights() const { return cfg_.loss; }

  static Tensor stack_frames(const VideoClip& clip, const std::vector<int>& ts) {
    const int64_t plane = static_cast<int64_t>(3) * clip.H * clip.W;
    std::vector<double> data;
    data.reserve(static_cast<size_t>(plane) * ts.size());
    for (int t : ts) data.insert(data.end(), clip.frame(t), clip.frame(t) + plane);
    return Tensor::from_data({static_cast<int>(ts.size()), 3, clip.H, clip.W}, std::move(data));
  }

  static Tensor stack_background(const VideoClip& clip, int n) {
    std::vector<double> data;
    for (int i = 0; i < n; ++i)
      data.insert(data.end(), clip.background.begin(), clip.background.end());
    return Tensor::from_data({n, 3, clip.H, clip.W}, std::move(data));
  }

  Tensor compose_full(const Tensor& rgb, const Tensor& mask, const Tensor& boxes,
                      const Tensor& bg) {
    if (!model_.traits().stn) return composite(mask, rgb, bg);
    Tensor D = stn_paste(rgb, boxes, model_.canvas, model_.canvas);
    Tensor M = stn_paste(mask, boxes, model_.canvas, model_.canvas);
    return composite(M, D, bg);
  }

  // Codes fed to the contrastive term: tv for split variants, the full latent
  // otherwise.
  Tensor contrastive_codes(const Tensor& frames) {
    Tensor boxes = model_.boxes_for(frames);
    Tensor crops = model_.crops_for(frames, boxes);
    Tensor tv = model_.codec.encode(crops, LatentHead::tv);
    if (cfg_.latent_split) return tv;
    return concat({tv, model_.codec.encode(crops, LatentHead::ti)}, 1);
  }

  LossComponents forward_losses(bool contrastive_on, bool track_on, StepLog* log_row) {
    const VariantTraits t = model_.traits();
    const int B = cfg_.batch_quadruples;

    // assemble the frame batch: B quadruples from B random train clips
    std::vector<QuadrupleSample> tuples;
    std::vector<int> clip_ids;
    std::vector<double> frame_data, bg_data;
    const VideoClip& probe = data_->train[0];
    const int64_t plane = static_cast<int64_t>(3) * probe.H * probe.W;
    for (int b = 0; b < B; ++b) {
      const int ci = static_cast<int>(rng_.uniform_int(static_cast<int64_t>(data_->train.size())));
      const VideoClip& clip = data_->train[static_cast<size_t>(ci)];
      QuadrupleSample q = t.contrastive == VariantTraits::Contrastive::css
                              ? sample_css_tuple(clip.T, cfg_.sampler, rng_, ci)
                              : sample_quadruple(clip.T, cfg_.sampler, rng_, ci);
      tuples.push_back(q);
      for (int idx : {q.r, q.n, q.in, q.a}) {
        frame_data.insert(frame_data.end(), clip.frame(idx), clip.frame(idx) + plane);
        bg_data.insert(bg_data.end(), clip.background.begin(), clip.background.end());
        clip_ids.push_back(ci);
      }
    }
    const int F = 4 * B;
    Tensor frames = Tensor::from_data({F, 3, probe.H, probe.W}, std::move(frame_data));
    Tensor bg = Tensor::from_data({F, 3, probe.H, probe.W}, std::move(bg_data));

    Tensor boxes = model_.boxes_for(frames);
    Tensor crops = model_.crops_for(frames, boxes);

    Tensor tv, ti;
    if (cfg_.latent_split) {
      ti = model_.codec.encode(crops, LatentHead::ti);
      std::vector<JitterParams> jp;
      for (int f = 0; f < F; ++f) jp.push_back(draw_jitter(cfg_.sampler, rng_));
      tv = model_.codec.encode(apply_jitter(crops, jp), LatentHead::tv);
    } else {
      tv = model_.codec.encode(crops, LatentHead::tv);
      ti = model_.codec.encode(crops, LatentHead::ti);
    }

    LossComponents comps;

    if (t.decode) {
      Tensor ti_dec = cfg_.latent_split ? swap_ti(ti, clip_ids, rng_) : ti;
      auto [rgb, mask] = model_.codec.decode(tv, ti_dec);
      Tensor recon = compose_full(rgb, mask, boxes, bg);
      comps.reconstruction = reconstruction_loss(frames, recon, cfg_.loss, &model_.pyramid);
      log_row->reconstruction = comps.reconstruction.value();
    }

    if (contrastive_on) {
      Tensor codes = cfg_.latent_split ? tv : concat({tv, ti}, 1);
      Tensor acc;
      for (int b = 0; b < B; ++b) {
        const QuadrupleSample& q = tuples[static_cast<size_t>(b)];
        Tensor r0 = row(codes, 4 * b), rn = row(codes, 4 * b + 1), ri = row(codes, 4 * b + 2),
               ra = row(codes, 4 * b + 3);
        Tensor term = t.contrastive == VariantTraits::Contrastive::css
                          ? css_loss(r0, rn, {ri, ra}, cfg_.loss.temperature)
                          : dsl_quadruple_loss(r0, rn, ri, ra, q.d_n, q.d_in, q.d_a,
                                               cfg_.loss.d_max);
        acc = acc.defined() ? add(acc, term) : term;
      }
      comps.contrastive = scalar_mul(acc, 1.0 / B);
      log_row->contrastive = comps.contrastive.value();
    }

    if (t.stn) {
      comps.box_prior = box_prior_loss(boxes);
      log_row->box_prior = comps.box_prior.value();
    }

    if (track_on) {
      Tensor acc;
      for (int gq = 0; gq < cfg_.gravity_quadruples; ++gq) {
        const int ci = static_cast<int>(rng_.uniform_int(static_cast<int64_t>(data_->train.size())));
        const VideoClip& clip = data_->train[static_cast<size_t>(ci)];
        auto ts = sample_equidistant(clip.T, cfg_.sampler.gravity_spacing, rng_);
        Tensor gframes = stack_frames(clip, {ts[0], ts[1], ts[2], ts[3]});
        Tensor gboxes = model_.boxes_for(gframes);
        // normalized center -> pixel rows; scales stay as fractions
        Tensor u_px = reshape(
            add_const(scalar_mul(narrow(gboxes, 1, 3, 1), 0.5 * (clip.H - 1)), 0.5 * (clip.H - 1)),
            {4});
        Tensor scales = narrow(gboxes, 1, 0, 2);
        Tensor term = track_loss(u_px, scales, cfg_.loss.tau_order);
        acc = acc.defined() ? add(acc, term) : term;
      }
      comps.track = scalar_mul(acc, 1.0 / cfg_.gravity_quadruples);
      log_row->track = comps.track.value();
    }

    return comps;
  }

  const Dataset* data_;
  TrainConfig cfg_;
  Model model_;
  Rng rng_;
  Adam adam_;
  int step_ = 0;
  double best_val_ = std::numeric_limits<double>::infinity();
  int evals_since_best_ = 0;
  bool stopped_ = false;
  std::vector<StepLog> log_;
};

// ---------------------------------------------------------------------------
// Phase-2 frozen-feature pose probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  int hidden = 128;
  double dropout = 0.5;
  double lr = 1e-3;
  int epochs = 120;
  int batch = 64;
  int patience = 10;
  uint64_t seed = 7;
};

// Two hidden layers with dropout, plus input standardization fitted on the
// labeled subset.
struct ProbeModel {
  Tensor w1, b1, w2, b2, w3, b3;
  Tensor feat_mean, feat_std;  // constants
  double dropout = 0.5;

  ProbeModel() = default;

  ProbeModel(int in_dim, int hidden, int out_dim, double drop, Rng& rng) : dropout(drop) {
    w1 = Tensor::randn({in_dim, hidden}, rng, std::sqrt(2.0 / in_dim), true);
    b1 = Tensor::zeros({hidden}, true);
    w2 = Tensor::randn({hidden, hidden}, rng, std::sqrt(2.0 / hidden), true);
    b2 = Tensor::zeros({hidden}, true);
    w3 = Tensor::randn({hidden, out_dim}, rng, std::sqrt(1.0 / hidden), true);
    b3 = Tensor::zeros({out_dim}, true);
    feat_mean = Tensor::zeros({in_dim});
    feat_std = Tensor::full({in_dim}, 1.0);
  }

  void fit_standardizer(const Tensor& feats) {
    const int n = feats.dim(0), d = feats.dim(1);
    for (int j = 0; j < d; ++j) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const double v = feats.data()[static_cast<int64_t>(i) * d + j];
        s += v;
        s2 += v * v;
      }
      const double mean = s / n;
      const double var = std::max(s2 / n - mean * mean, 1e-12);
      feat_mean.data()[j] = mean;
      feat_std.data()[j] = std::sqrt(var);
    }
  }

  Tensor forward(const Tensor& feats, Rng* dropout_rng) const {
    Tensor x = div(sub(feats, feat_mean), feat_std);
    x = relu(linear(x, w1, b1));
    x = apply_dropout(x, dropout_rng);
    x = relu(linear(x, w2, b2));
    x = apply_dropout(x, dropout_rng);
    return linear(x, w3, b3);
  }

  std::vector<Tensor> params() { return {w1, b1, w2, b2, w3, b3}; }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    return {{"probe.w1", w1}, {"probe.b1", b1}, {"probe.w2", w2},
            {"probe.b2", b2}, {"probe.w3", w3}, {"probe.b3", b3},
            {"probe.feat_mean", feat_mean}, {"probe.feat_std", feat_std}};
  }

 private:
  Tensor apply_dropout(const Tensor& x, Rng* rng) const {
    if (!rng || dropout <= 0.0) return x;
    Tensor mask = Tensor::zeros(x.shape());
    const double keep = 1.0 - dropout;
    for (double& v : mask.vec()) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return mul(x, mask);
  }
};

struct FrameRef {
  int clip = 0;
  int t = 0;
};

struct ProbeData {
  Tensor features;  // [N, dim]
  Tensor labels;    // [N, K*2] pelvis-centered pixels
};

namespace detail {

inline ProbeData extract_probe_data(const Model& model, const std::vector<VideoClip>& clips,
                                    const std::vector<FrameRef>& refs, bool use_ti_head) {
  const int dim = use_ti_head ? model.cfg.codec.n_ti : model.probe_feature_dim();
  const int K = clips.at(0).K;
  Tensor feats = Tensor::zeros({static_cast<int>(refs.size()), dim});
  Tensor labels = Tensor::zeros({static_cast<int>(refs.size()), K * 2});
  const int chunk = 32;
  for (size_t start = 0; start < refs.size(); start += chunk) {
    const size_t end = std::min(refs.size(), start + chunk);
    std::vector<double> data;
    const VideoClip& c0 = clips[static_cast<size_t>(refs[start].clip)];
    const int64_t plane = static_cast<int64_t>(3) * c0.H * c0.W;
    for (size_t i = start; i < end; ++i) {
      const VideoClip& c = clips[static_cast<size_t>(refs[i].clip)];
      data.insert(data.end(), c.frame(refs[i].t), c.frame(refs[i].t) + plane);
    }
    Tensor frames = Tensor::from_data({static_cast<int>(end - start), 3, c0.H, c0.W},
                                      std::move(data));
    Tensor f = use_ti_head ? model.probe_features_ti(frames) : model.probe_features(frames);
    std::copy(f.vec().begin(), f.vec().end(), feats.data() + static_cast<int64_t>(start) * dim);
    for (size_t i = start; i < end; ++i) {
      const VideoClip& c = clips[static_cast<size_t>(refs[i].clip)];
      const double* kp = c.keypoints_centered.data() + (static_cast<int64_t>(refs[i].t) * K) * 2;
      std::copy(kp, kp + K * 2, labels.data() + static_cast<int64_t>(i) * K * 2);
    }
  }
  return {feats, labels};
}

inline std::vector<FrameRef> all_frames(const std::vector<VideoClip>& clips) {
  std::vector<FrameRef> refs;
  for (size_t ci = 0; ci < clips.size(); ++ci)
    for (int t = 0; t < clips[ci].T; ++t) refs.push_back({static_cast<int>(ci), t});
  return refs;
}

}  // namespace detail

struct ProbeResult {
  ProbeModel probe;
  Tensor test_pred;    // [N, K*2]
  Tensor test_label;   // [N, K*2]
  double final_train_loss = 0;
  double best_val_loss = 0;
  int labeled_samples = 0;
  std::vector<double> val_trace;
};

// Supervised pose probe over frozen features. The backbone never enters the
// optimizer; only probe weights move.
inline ProbeResult train_probe(const Model& model, const Dataset& data, double labeled_fraction,
                               const ProbeConfig& pcfg, bool use_ti_head = false) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw std::invalid_argument("train_probe: fraction must be in (0, 1]");
  Rng rng(pcfg.seed, 0x9b0be);

  std::vector<FrameRef> train_refs = detail::all_frames(data.train);
  const int n_labeled = static_cast<int>(labeled_fraction * static_cast<double>(train_refs.size()));
  if (n_labeled < 1)
    throw std::invalid_argument("train_probe: fraction " + std::to_string(labeled_fraction) +
                                " yields no labeled samples");
  for (size_t i = train_refs.size() - 1; i > 0; --i)
    std::swap(train_refs[i], train_refs[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i + 1)))]);
  train_refs.resize(static_cast<size_t>(n_labeled));

  ProbeData train_set = detail::extract_probe_data(model, data.train, train_refs, use_ti_head);
  ProbeData val_set =
      detail::extract_probe_data(model, data.val, detail::all_frames(data.val), use_ti_head);
  ProbeData test_set =
      detail::extract_probe_data(model, data.test, detail::all_frames(data.test), use_ti_head);

  const int K = data.train[0].K;
  const int dim = use_ti_head ? model.cfg.codec.n_ti : model.probe_feature_dim();
  ProbeModel probe(dim, pcfg.hidden, K * 2, pcfg.dropout, rng);
  probe.fit_standardizer(train_set.features);
  Adam opt(probe.params(), pcfg.lr);

  const int out_dim = K * 2;
  auto subset = [&](const ProbeData& d, const std::vector<int>& idx) {
    Tensor f = Tensor::zeros({static_cast<int>(idx.size()), dim});
    Tensor l = Tensor::zeros({static_cast<int>(idx.size()), out_dim});
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(d.features.data() + static_cast<int64_t>(idx[i]) * dim,
                d.features.data() + static_cast<int64_t>(idx[i] + 1) * dim,
                f.data() + static_cast<int64_t>(i) * dim);
      std::copy(d.labels.data() + static_cast<int64_t>(idx[i]) * out_dim,
                d.labels.data() + static_cast<int64_t>(idx[i] + 1) * out_dim,
                l.data() + static_cast<int64_t>(i) * out_dim);
    }
    return ProbeData{f, l};
  };

  ProbeResult result;
  result.labeled_samples = n_labeled;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_weights;
  int since_best = 0;

  std::vector<int> order(static_cast<size_t>(n_labeled));
  for (int i = 0; i < n_labeled; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i + 1)))]);
    double ep_loss = 0.0;
    int nb = 0;
    for (int start = 0; start < n_labeled; start += pcfg.batch) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(n_labeled, start + pcfg.batch));
      ProbeData batch = subset(train_set, idx);
      opt.zero_grad();
      Tensor loss = pose_loss(probe.forward(batch.features, &rng), batch.labels);
      ep_loss += loss.value();
      ++nb;
      backward(loss);
      opt.step();
    }
    result.final_train_loss = ep_loss / nb;

    const double val = pose_loss(probe.forward(val_set.features, nullptr), val_set.labels).value();
    result.val_trace.push_back(val);
    if (val < best_val - 1e-12) {
      best_val = val;
      since_best = 0;
      best_weights.clear();
      for (Tensor& p : probe.params()) best_weights.push_back(p.vec());
    } else if (++since_best >= pcfg.patience) {
      break;
    }
  }
  if (!best_weights.empty()) {
    auto params = probe.params();
    for (size_t i = 0; i < params.size(); ++i) params[i].vec() = best_weights[i];
  }
  result.best_val_loss = best_val;
  result.test_pred = probe.forward(test_set.features, nullptr);
  result.test_pred = Tensor::from_data(result.test_pred.shape(), result.test_pred.vec());
  result.test_label = test_set.labels;
  result.probe = probe;
  return result;
}

}  // namespace vidrep
