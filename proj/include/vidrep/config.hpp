#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidrep/serial.hpp"
#include "vidrep/trainer.hpp"

namespace vidrep {

// The one experiment document: everything the pipeline needs, grouped by
// section. Unknown keys are rejected with their path.
struct ExperimentConfig {
  uint64_t seed = 1;
  DatasetConfig dataset;
  TrainConfig train;  // owns LossWeights, SamplerConfig, CodecConfig
  ProbeConfig probe;
  double probe_fraction = 0.1;
  std::vector<double> eval_fractions = {0.01, 0.1, 1.0};
  std::vector<uint64_t> eval_seeds = {1, 2, 3};
  int swap_pairs = 200;

  void validate() const {
    dataset.puppet.validate();
    train.validate();
    if (!(probe_fraction > 0.0 && probe_fraction <= 1.0))
      throw std::invalid_argument("probe.fraction must be in (0, 1]");
    if (swap_pairs < 1) throw std::invalid_argument("eval.swap_pairs must be >= 1");
  }
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (known.find(it.key()) == known.end())
      throw std::invalid_argument("unknown config key '" +
                                  (path.empty() ? it.key() : path + "." + it.key()) + "'");
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_puppet_section(const json& j, PuppetConfig& p) {
  reject_unknown(j, "dataset.puppet",
                 {"torso_len", "arm_len", "leg_len", "shoulder_frac", "limb_radius", "head_radius",
                  "revert_rate", "noise_scale", "max_angle_step", "part_colors"});
  maybe(j, "torso_len", p.torso_len);
  maybe(j, "arm_len", p.arm_len);
  maybe(j, "leg_len", p.leg_len);
  maybe(j, "shoulder_frac", p.shoulder_frac);
  maybe(j, "limb_radius", p.limb_radius);
  maybe(j, "head_radius", p.head_radius);
  maybe(j, "revert_rate", p.revert_rate);
  maybe(j, "noise_scale", p.noise_scale);
  maybe(j, "max_angle_step", p.max_angle_step);
  if (j.contains("part_colors")) {
    const auto& colors = j.at("part_colors");
    for (size_t i = 0; i < p.part_colors.size() && i < colors.size(); ++i)
      for (size_t k = 0; k < 3; ++k) p.part_colors[i][k] = colors[i][k].get<double>();
  }
}

inline void parse_dataset_section(const json& j, DatasetConfig& ds) {
  reject_unknown(j, "dataset",
                 {"canvas", "train_clips", "val_clips", "test_clips", "frames_per_clip",
                  "fall_frames", "fall", "puppet"});
  int canvas = ds.puppet.height;
  maybe(j, "canvas", canvas);
  ds.puppet.height = canvas;
  ds.puppet.width = canvas;
  maybe(j, "train_clips", ds.train_clips);
  maybe(j, "val_clips", ds.val_clips);
  maybe(j, "test_clips", ds.test_clips);
  maybe(j, "frames_per_clip", ds.frames_per_clip);
  maybe(j, "fall_frames", ds.fall_frames);
  if (j.contains("fall")) {
    reject_unknown(j.at("fall"), "dataset.fall", {"mode", "camera_distance", "depth_rate"});
    ds.puppet.fall = fall_from_json(j.at("fall"));
  }
  if (j.contains("puppet")) parse_puppet_section(j.at("puppet"), ds.puppet);
}

inline void parse_sampler_section(const json& j, SamplerConfig& s) {
  reject_unknown(j, "sampler",
                 {"d_near", "d_max", "gravity_spacing", "jitter_gain_lo", "jitter_gain_hi",
                  "jitter_offset"});
  maybe(j, "d_near", s.d_near);
  maybe(j, "d_max", s.d_max);
  maybe(j, "gravity_spacing", s.gravity_spacing);
  maybe(j, "jitter_gain_lo", s.jitter_gain_lo);
  maybe(j, "jitter_gain_hi", s.jitter_gain_hi);
  maybe(j, "jitter_offset", s.jitter_offset);
}

inline void parse_loss_section(const json& j, LossWeights& w) {
  reject_unknown(j, "loss",
                 {"lambda", "rho", "alpha", "gamma", "temperature", "beta", "tau_order", "d_max",
                  "box_prior"});
  maybe(j, "lambda", w.lambda);
  maybe(j, "rho", w.rho);
  maybe(j, "alpha", w.alpha);
  maybe(j, "gamma", w.gamma);
  maybe(j, "temperature", w.temperature);
  maybe(j, "beta", w.beta);
  maybe(j, "tau_order", w.tau_order);
  maybe(j, "d_max", w.d_max);
  maybe(j, "box_prior", w.box_prior);
}

inline void parse_model_section(const json& j, TrainConfig& t) {
  reject_unknown(j, "model",
                 {"variant", "latent_split", "n_tv", "n_ti", "crop", "trunk_channels", "dec_maps",
                  "dec_channels", "detector_downsample", "detector_channels", "pyramid_channels"});
  if (j.contains("variant")) {
    t.variant = variant_from_name(j.at("variant").get<std::string>());
    t.latent_split = variant_traits(t.variant).split;
  }
  maybe(j, "latent_split", t.latent_split);
  maybe(j, "n_tv", t.codec.n_tv);
  maybe(j, "n_ti", t.codec.n_ti);
  maybe(j, "crop", t.codec.crop);
  maybe(j, "trunk_channels", t.codec.trunk_channels);
  maybe(j, "dec_maps", t.codec.dec_maps);
  maybe(j, "dec_channels", t.codec.dec_channels);
  maybe(j, "detector_downsample", t.detector_downsample);
  maybe(j, "detector_channels", t.detector_channels);
  maybe(j, "pyramid_channels", t.pyramid_channels);
}

inline void parse_train_section(const json& j, TrainConfig& t) {
  reject_unknown(j, "train",
                 {"lr", "batch_quadruples", "max_steps", "eval_interval", "patience", "gravity",
                  "stage1_steps", "gravity_quadruples"});
  maybe(j, "lr", t.lr);
  maybe(j, "batch_quadruples", t.batch_quadruples);
  maybe(j, "max_steps", t.max_steps);
  maybe(j, "eval_interval", t.eval_interval);
  maybe(j, "patience", t.patience);
  if (j.contains("gravity")) {
    const std::string g = j.at("gravity").get<std::string>();
    if (g == "off") t.gravity = GravitySchedule::off;
    else if (g == "two-stage") t.gravity = GravitySchedule::two_stage;
    else throw std::invalid_argument("train.gravity must be 'off' or 'two-stage', got '" + g + "'");
  }
  maybe(j, "stage1_steps", t.stage1_steps);
  maybe(j, "gravity_quadruples", t.gravity_quadruples);
}

inline void parse_probe_section(const json& j, ProbeConfig& p, double& fraction) {
  reject_unknown(j, "probe",
                 {"hidden", "dropout", "lr", "epochs", "batch", "patience", "seed", "fraction"});
  maybe(j, "hidden", p.hidden);
  maybe(j, "dropout", p.dropout);
  maybe(j, "lr", p.lr);
  maybe(j, "epochs", p.epochs);
  maybe(j, "batch", p.batch);
  maybe(j, "patience", p.patience);
  maybe(j, "seed", p.seed);
  maybe(j, "fraction", fraction);
}

inline void parse_eval_section(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, "eval", {"fractions", "seeds", "swap_pairs"});
  maybe(j, "fractions", cfg.eval_fractions);
  maybe(j, "seeds", cfg.eval_seeds);
  maybe(j, "swap_pairs", cfg.swap_pairs);
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const json& j) {
  detail::reject_unknown(j, "",
                         {"seed", "dataset", "sampler", "loss", "model", "train", "probe", "eval"});
  ExperimentConfig cfg;
  detail::maybe(j, "seed", cfg.seed);
  if (j.contains("dataset")) detail::parse_dataset_section(j.at("dataset"), cfg.dataset);
  if (j.contains("sampler")) detail::parse_sampler_section(j.at("sampler"), cfg.train.sampler);
  if (j.contains("loss")) detail::parse_loss_section(j.at("loss"), cfg.train.loss);
  if (j.contains("model")) detail::parse_model_section(j.at("model"), cfg.train);
  if (j.contains("train")) detail::parse_train_section(j.at("train"), cfg.train);
  if (j.contains("probe")) detail::parse_probe_section(j.at("probe"), cfg.probe, cfg.probe_fraction);
  if (j.contains("eval")) detail::parse_eval_section(j.at("eval"), cfg);

  // the contrastive threshold and the sampler's away threshold are the same
  // quantity; a config may state either, but not two different values
  if (j.contains("loss") && j.at("loss").contains("d_max") && j.contains("sampler") &&
      j.at("sampler").contains("d_max") &&
      cfg.train.loss.d_max != static_cast<double>(cfg.train.sampler.d_max))
    throw std::invalid_argument("loss.d_max and sampler.d_max disagree (" +
                                std::to_string(cfg.train.loss.d_max) + " vs " +
                                std::to_string(cfg.train.sampler.d_max) + ")");
  if (j.contains("loss") && j.at("loss").contains("d_max") &&
      !(j.contains("sampler") && j.at("sampler").contains("d_max")))
    cfg.train.sampler.d_max = static_cast<int>(cfg.train.loss.d_max);
  else
    cfg.train.loss.d_max = cfg.train.sampler.d_max;

  cfg.dataset.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

// Paper-scale switch: latent and crop dimensions from the reference setup,
// H36M sampling distances.
inline void apply_paper_scale(ExperimentConfig& cfg) {
  cfg.train.codec.n_tv = 600;
  cfg.train.codec.n_ti = 129;
  cfg.train.codec.crop = 128;
  cfg.train.codec.trunk_channels = {32, 64, 128, 256};
  cfg.train.codec.dec_maps = 128;
  cfg.train.codec.dec_channels = {128, 64, 32};
  cfg.train.sampler.d_near = 10;
  cfg.train.sampler.d_max = 200;
  cfg.train.loss.d_max = 200;
  cfg.probe.hidden = 2048;
}

}  // namespace vidrep
