#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vidrep/config.hpp"
#include "vidrep/evalkit.hpp"
#include "vidrep/gradsuite.hpp"
#include "vidrep/png.hpp"
#include "vidrep/serial.hpp"
#include "vidrep/trainer.hpp"

namespace vidrep {

namespace cli_detail {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<uint64_t> seed_override;
  bool paper_scale = false;
};

inline ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path);
  if (args.seed_override) {
    cfg.seed = *args.seed_override;
    cfg.dataset.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  if (args.paper_scale) apply_paper_scale(cfg);
  cfg.validate();
  return cfg;
}

// The config file is copied byte for byte so every run records exactly what
// produced it.
inline void echo_config(const CommonArgs& args, const fs::path& out) {
  fs::create_directories(out);
  std::ifstream src(args.config_path, std::ios::binary);
  std::ofstream dst(out / "config.json", std::ios::binary | std::ios::trunc);
  dst << src.rdbuf();
}

inline Dataset load_or_build_dataset(const ExperimentConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty() && fs::exists(fs::path(data_dir) / "dataset.json"))
    return load_dataset(data_dir);
  return generate_dataset(cfg.dataset);
}

inline int cmd_gen(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  Dataset data = generate_dataset(cfg.dataset);
  const fs::path out(args.out_dir);
  save_dataset(out / "dataset", data);
  echo_config(args, out);
  std::cout << "wrote " << (data.train.size() + data.val.size() + data.test.size())
            << " clips under " << (out / "dataset").string() << "\n";
  return 0;
}

inline int cmd_train_ssl(const CommonArgs& args, const std::string& data_dir) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  Trainer trainer(data, cfg.train);
  trainer.run();
  fs::create_directories(out);
  trainer.save_checkpoint(out / "checkpoint.bin");
  write_metrics_csv(out / "metrics.csv", trainer.log());
  echo_config(args, out);
  const StepLog& last = trainer.log().back();
  std::cout << "trained " << variant_name(cfg.train.variant) << " for " << trainer.steps_done()
            << " steps (total " << last.total << ", reconstruction " << last.reconstruction << ")"
            << (trainer.early_stopped() ? ", early-stopped" : "") << "\n";
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

inline Model load_model_from_checkpoint(const ExperimentConfig& cfg, const fs::path& ckpt,
                                        int canvas) {
  Model model(cfg.train, canvas);
  auto stored = load_named_tensors(ckpt);
  auto params = model.named_params();
  if (stored.size() < params.size())
    throw std::runtime_error(ckpt.string() + ": too few tensors for this model");
  for (size_t i = 0; i < params.size(); ++i) {
    if (stored[i].first != params[i].first)
      throw std::runtime_error(ckpt.string() + ": entry '" + stored[i].first + "' where '" +
                               params[i].first + "' expected");
    if (stored[i].second.shape() != params[i].second.shape())
      throw std::runtime_error(ckpt.string() + ": shape mismatch for '" + stored[i].first + "'");
    params[i].second.vec() = stored[i].second.vec();
  }
  return model;
}

inline int cmd_train_probe(const CommonArgs& args, const std::string& data_dir,
                           const std::string& ckpt_path) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  const fs::path ckpt = ckpt_path.empty() ? out / "checkpoint.bin" : fs::path(ckpt_path);
  Model model = load_model_from_checkpoint(cfg, ckpt, data.train.at(0).H);
  ProbeResult res = train_probe(model, data, cfg.probe_fraction, cfg.probe);
  fs::create_directories(out);
  save_named_tensors(out / "probe.bin", res.probe.named_params());
  {
    std::ofstream os(out / "probe_metrics.csv", std::ios::trunc);
    os << "epoch,val_pose_loss\n";
    os.precision(17);
    for (size_t e = 0; e < res.val_trace.size(); ++e) os << e << ',' << res.val_trace[e] << "\n";
  }
  echo_config(args, out);
  const int K = data.train.at(0).K;
  std::cout << "probe trained on " << res.labeled_samples << " labeled frames (fraction "
            << cfg.probe_fraction << ")\n";
  std::cout << "test n-mpjpe: " << n_mpjpe_flat(res.test_pred, res.test_label, K, 2) << " px\n";
  return 0;
}

inline int cmd_eval(const CommonArgs& args, const std::string& data_dir,
                    const std::string& ckpt_path) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  const fs::path ckpt = ckpt_path.empty() ? out / "checkpoint.bin" : fs::path(ckpt_path);
  Model model = load_model_from_checkpoint(cfg, ckpt, data.train.at(0).H);

  auto rows = probe_baseline_comparison(model, data, cfg.eval_fractions, cfg.eval_seeds, cfg.probe);
  fs::create_directories(out);
  {
    std::ofstream os(out / "eval_report.csv", std::ios::trunc);
    os << "probe_input,fraction,seed,labeled_samples,n_mpjpe\n";
    os.precision(17);
    for (const auto& r : rows)
      os << r.probe_input << ',' << r.fraction << ',' << r.seed << ',' << r.labeled_samples << ','
         << r.n_mpjpe << "\n";
  }
  std::vector<VideoClip> clips = data.test;
  SwapScores scores = swap_transfer_score(model, clips, cfg.swap_pairs, Rng(cfg.seed, 0x5a9));
  {
    std::ofstream os(out / "swap_scores.csv", std::ios::trunc);
    os << "pairs,appearance_follows_ti,pose_follows_tv\n";
    os.precision(17);
    os << scores.pairs << ',' << scores.appearance_follows_ti << ',' << scores.pose_follows_tv
       << "\n";
  }
  echo_config(args, out);
  for (const auto& r : rows)
    std::cout << std::left << std::setw(7) << r.probe_input << " fraction " << std::setw(6)
              << r.fraction << " seed " << r.seed << "  n-mpjpe " << r.n_mpjpe << "\n";
  std::cout << "swap transfer over " << scores.pairs << " pairs: appearance-follows-ti "
            << scores.appearance_follows_ti << ", pose-follows-tv " << scores.pose_follows_tv
            << "\n";
  return 0;
}

inline int cmd_swap_demo(const CommonArgs& args, const std::string& data_dir,
                         const std::string& ckpt_path, int pairs) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  const fs::path ckpt = ckpt_path.empty() ? out / "checkpoint.bin" : fs::path(ckpt_path);
  Model model = load_model_from_checkpoint(cfg, ckpt, data.train.at(0).H);

  std::vector<VideoClip> clips = data.test;
  if (clips.size() < 2) throw std::runtime_error("swap-demo needs at least two test clips");
  Rng rng(cfg.seed, 0xde30);
  std::vector<Tensor> tiles;
  for (int p = 0; p < pairs; ++p) {
    const int ca = static_cast<int>(rng.uniform_int(static_cast<int64_t>(clips.size())));
    int cb = static_cast<int>(rng.uniform_int(static_cast<int64_t>(clips.size() - 1)));
    if (cb >= ca) ++cb;
    const VideoClip& A = clips[static_cast<size_t>(ca)];
    const VideoClip& B = clips[static_cast<size_t>(cb)];
    const int ta = static_cast<int>(rng.uniform_int(A.T));
    const int tb = static_cast<int>(rng.uniform_int(B.T));

    auto encode = [&](const VideoClip& c, int t, Tensor& boxes) {
      Tensor frames = Tensor::from_data(
          {1, 3, c.H, c.W},
          std::vector<double>(c.frame(t), c.frame(t) + static_cast<int64_t>(3) * c.H * c.W));
      boxes = model.boxes_for(frames);
      Tensor crops = model.crops_for(frames, boxes);
      return std::pair{model.codec.encode(crops, LatentHead::tv),
                       model.codec.encode(crops, LatentHead::ti)};
    };
    Tensor boxes_a, boxes_b;
    auto [tv_a, ti_a] = encode(A, ta, boxes_a);
    auto [tv_b, ti_b] = encode(B, tb, boxes_b);
    auto [rgb, mask] = model.codec.decode(tv_a, ti_b);
    Tensor bg = Tensor::from_data({1, 3, A.H, A.W}, std::vector<double>(A.background));
    Tensor recon = model.traits().stn
                       ? composite(stn_paste(mask, boxes_a, A.H, A.W),
                                   stn_paste(rgb, boxes_a, A.H, A.W), bg)
                       : composite(mask, rgb, bg);
    tiles.push_back(A.frame_tensor(ta));                         // pose donor
    tiles.push_back(B.frame_tensor(tb));                         // appearance donor
    tiles.push_back(reshape(recon, {3, A.H, A.W}));              // swap decode
    tiles.push_back(reshape(stn_paste(mask, boxes_a, A.H, A.W), {1, A.H, A.W}));
  }
  Tensor grid = make_grid(tiles, 4);
  fs::create_directories(out);
  write_png(out / "swap_grid.png", grid);
  echo_config(args, out);
  std::cout << "wrote " << (out / "swap_grid.png").string() << " (rows: pose donor, appearance "
            << "donor, swap decode, pasted mask)\n";
  return 0;
}

inline int cmd_bg_estimate(const CommonArgs& args, const std::string& data_dir) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  fs::create_directories(out);
  int index = 0;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const VideoClip& clip : *split) {
      Tensor est = estimate_background(clip);
      double worst = 0.0;
      for (size_t i = 0; i < clip.background.size(); ++i)
        worst = std::max(worst, std::fabs(est.data()[i] - clip.background[i]));
      std::ostringstream name;
      name << "bg_clip_" << std::setw(3) << std::setfill('0') << index << ".png";
      write_png(out / name.str(), est);
      std::cout << "clip " << index << " (label " << clip.appearance_label
                << "): max abs background error " << worst << "\n";
      ++index;
    }
  }
  echo_config(args, out);
  return 0;
}

inline int cmd_gradcheck(int configs) {
  auto entries = run_gradcheck_suite(configs);
  bool all_pass = true;
  for (const auto& e : entries) {
    std::cout << (e.pass ? "[PASS] " : "[FAIL] ") << std::left << std::setw(24) << e.name
              << " worst rel err " << std::scientific << std::setprecision(3) << e.worst_rel_err
              << std::defaultfloat << " (tol " << e.tol << ")" << (e.has_nan ? " NaN!" : "")
              << "\n";
    all_pass = all_pass && e.pass;
  }
  std::cout << (all_pass ? "gradcheck suite passed" : "gradcheck suite FAILED") << "\n";
  return all_pass ? 0 : 1;
}

inline int cmd_ablate(const CommonArgs& args, const std::string& data_dir) {
  ExperimentConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  Dataset data = load_or_build_dataset(cfg, data_dir.empty() ? (out / "dataset").string() : data_dir);
  fs::create_directories(out);

  std::ofstream os(out / "ablation.csv", std::ios::trunc);
  os << "variant,fraction,seed,labeled_samples,n_mpjpe\n";
  os.precision(17);
  const int K = data.train.at(0).K;

  std::cout << std::left << std::setw(11) << "variant";
  for (double f : cfg.eval_fractions) std::cout << "  fraction " << std::setw(6) << f;
  std::cout << "  (median tv-probe n-mpjpe over " << cfg.eval_seeds.size() << " seeds)\n";

  for (ModelVariant v : {ModelVariant::dsl_stn, ModelVariant::css_stn, ModelVariant::ae_stn,
                         ModelVariant::no_split, ModelVariant::no_decode, ModelVariant::no_stn}) {
    TrainConfig tcfg = cfg.train;
    tcfg.variant = v;
    tcfg.latent_split = variant_traits(v).split;
    if (!variant_traits(v).stn && data.train.at(0).H != tcfg.codec.crop) {
      std::cout << std::setw(11) << variant_name(v) << "  skipped (needs crop == canvas)\n";
      continue;
    }
    Trainer trainer(data, tcfg);
    trainer.run();
    std::cout << std::setw(11) << variant_name(v);
    for (double fraction : cfg.eval_fractions) {
      std::vector<double> errs;
      for (uint64_t seed : cfg.eval_seeds) {
        ProbeConfig pcfg = cfg.probe;
        pcfg.seed = seed;
        ProbeResult res = train_probe(trainer.model(), data, fraction, pcfg);
        const double err = n_mpjpe_flat(res.test_pred, res.test_label, K, 2);
        os << variant_name(v) << ',' << fraction << ',' << seed << ',' << res.labeled_samples
           << ',' << err << "\n";
        errs.push_back(err);
      }
      std::sort(errs.begin(), errs.end());
      std::cout << "  " << std::setw(15) << errs[errs.size() / 2];
    }
    std::cout << "\n";
  }
  echo_config(args, out);
  std::cout << "rows written to " << (out / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace cli_detail

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 2 malformed configuration, 1 runtime failure.
inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"unsupervised video representation learning on synthetic puppet clips"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, ckpt_path;
  int gradcheck_configs = 20;
  int swap_pairs = 6;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config (json)");
    if (needs_config) opt->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed_override, "override the config seed");
    cmd->add_flag("--paper-scale", args.paper_scale,
                  "paper-scale dimensions (600/129 latent, 128 crop, H36M sampling distances)");
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  add_common(gen);
  auto* train_ssl = app.add_subcommand("train-ssl", "phase-1 self-supervised training");
  add_common(train_ssl);
  train_ssl->add_option("--data", data_dir, "dataset directory (default <out>/dataset)");
  auto* train_probe_cmd = app.add_subcommand("train-probe", "phase-2 frozen-feature pose probe");
  add_common(train_probe_cmd);
  train_probe_cmd->add_option("--data", data_dir, "dataset directory");
  train_probe_cmd->add_option("--ckpt", ckpt_path, "checkpoint (default <out>/checkpoint.bin)");
  auto* eval_cmd = app.add_subcommand("eval", "probe-vs-baseline report and swap scores");
  add_common(eval_cmd);
  eval_cmd->add_option("--data", data_dir, "dataset directory");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint");
  auto* swap_demo = app.add_subcommand("swap-demo", "swap-transfer image grid");
  add_common(swap_demo);
  swap_demo->add_option("--data", data_dir, "dataset directory");
  swap_demo->add_option("--ckpt", ckpt_path, "checkpoint");
  swap_demo->add_option("--pairs", swap_pairs, "pairs in the grid");
  auto* bg = app.add_subcommand("bg-estimate", "per-pixel median background estimation");
  add_common(bg);
  bg->add_option("--data", data_dir, "dataset directory");
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference oracle sweep");
  gradcheck_cmd->add_option("--configs", gradcheck_configs, "seeded configurations per op");
  auto* ablate = app.add_subcommand("ablate", "train and probe every model variant");
  add_common(ablate);
  ablate->add_option("--data", data_dir, "dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen(args);
    if (train_ssl->parsed()) return cmd_train_ssl(args, data_dir);
    if (train_probe_cmd->parsed()) return cmd_train_probe(args, data_dir, ckpt_path);
    if (eval_cmd->parsed()) return cmd_eval(args, data_dir, ckpt_path);
    if (swap_demo->parsed()) return cmd_swap_demo(args, data_dir, ckpt_path, swap_pairs);
    if (bg->parsed()) return cmd_bg_estimate(args, data_dir);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_configs);
    if (ablate->parsed()) return cmd_ablate(args, data_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace vidrep
