#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vidrep/cli.hpp"

using namespace vidrep;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> argv_s) {
  std::vector<const char*> argv = {"vidrep"};
  for (const auto& s : argv_s) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("vidrep_cli_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// Small-everything experiment so the full workflow runs in seconds.
const char* kTinyConfig = R"json({
  "seed": 9,
  "dataset": {
    "canvas": 32,
    "train_clips": 2, "val_clips": 1, "test_clips": 2,
    "frames_per_clip": 40,
    "puppet": { "torso_len": 7.0, "arm_len": 5.0, "leg_len": 5.5,
                "limb_radius": 1.3, "head_radius": 1.8 }
  },
  "sampler": { "d_near": 2, "d_max": 8 },
  "loss": { "alpha": 0.05 },
  "model": {
    "variant": "dsl-stn",
    "n_tv": 6, "n_ti": 3, "crop": 16,
    "trunk_channels": [4, 8], "dec_maps": 4, "dec_channels": [6, 4],
    "detector_downsample": 2, "detector_channels": [4, 8],
    "pyramid_channels": [2, 3, 4]
  },
  "train": { "max_steps": 6, "eval_interval": 3, "batch_quadruples": 2 },
  "probe": { "hidden": 16, "epochs": 4, "fraction": 0.5 },
  "eval": { "fractions": [0.5], "seeds": [1], "swap_pairs": 20 }
})json";

fs::path write_tiny_config(const fs::path& dir) {
  fs::path p = dir / "config.json";
  std::ofstream os(p);
  os << kTinyConfig;
  return p;
}

}  // namespace

TEST_CASE("config loading rejects unknown keys with their path") {
  try {
    experiment_from_json(json::parse(R"({"loss": {"alpha": 0.1, "alhpa": 0.2}})"));
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("loss.alhpa") != std::string::npos);
  }
  try {
    experiment_from_json(json::parse(R"({"trian": {}})"));
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("trian") != std::string::npos);
  }
}

TEST_CASE("config loading rejects contradictory d_max values") {
  REQUIRE_THROWS_AS(
      experiment_from_json(json::parse(R"({"loss": {"d_max": 30}, "sampler": {"d_max": 20}})")),
      std::invalid_argument);
  // a single source of truth is fine and propagates
  ExperimentConfig cfg =
      experiment_from_json(json::parse(R"({"sampler": {"d_max": 24}})"));
  REQUIRE(cfg.train.loss.d_max == 24.0);
  ExperimentConfig cfg2 = experiment_from_json(json::parse(R"({"loss": {"d_max": 26}})"));
  REQUIRE(cfg2.train.sampler.d_max == 26);
}

TEST_CASE("variant selection drives the split default") {
  ExperimentConfig cfg =
      experiment_from_json(json::parse(R"({"model": {"variant": "no-decode"}})"));
  REQUIRE(cfg.train.variant == ModelVariant::no_decode);
  REQUIRE(!cfg.train.latent_split);
  // an explicit contradictory split is rejected at validation
  REQUIRE_THROWS_AS(experiment_from_json(json::parse(
                        R"({"model": {"variant": "no-decode", "latent_split": true}})")),
                    std::invalid_argument);
}

TEST_CASE("paper-scale switch sets the reference dimensions") {
  ExperimentConfig cfg = experiment_from_json(json::parse("{}"));
  apply_paper_scale(cfg);
  REQUIRE(cfg.train.codec.n_tv == 600);
  REQUIRE(cfg.train.codec.n_ti == 129);
  REQUIRE(cfg.train.codec.crop == 128);
  REQUIRE(cfg.train.sampler.d_near == 10);
  REQUIRE(cfg.train.sampler.d_max == 200);
}

TEST_CASE("missing config file exits with the config error code") {
  REQUIRE(run({"gen", "--config", "/nonexistent/nope.json"}) == 1);
  auto dir = temp_dir("badjson");
  std::ofstream(dir / "bad.json") << "{ not json";
  REQUIRE(run({"gen", "--config", (dir / "bad.json").string()}) == 2);
  std::ofstream(dir / "unknown.json") << R"({"nonsense": 1})";
  REQUIRE(run({"gen", "--config", (dir / "unknown.json").string()}) == 2);
}

TEST_CASE("gen is byte-identical across runs and echoes the config verbatim") {
  auto dir = temp_dir("gen");
  fs::path cfg = write_tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", (dir / "a").string()}) == 0);
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", (dir / "b").string()}) == 0);
  int files = 0;
  for (auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), dir / "a");
    INFO(rel.string());
    REQUIRE(file_bytes(entry.path()) == file_bytes(dir / "b" / rel));
    ++files;
  }
  REQUIRE(files > 3);
  REQUIRE(file_bytes(dir / "a" / "config.json") == file_bytes(cfg));
}

TEST_CASE("the full workflow runs end to end on a tiny experiment") {
  auto dir = temp_dir("flow");
  fs::path cfg = write_tiny_config(dir);
  const std::string out = (dir / "run").string();

  REQUIRE(run({"gen", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(run({"train-ssl", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(fs::exists(fs::path(out) / "checkpoint.bin"));
  REQUIRE(fs::exists(fs::path(out) / "metrics.csv"));

  REQUIRE(run({"train-probe", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(fs::exists(fs::path(out) / "probe.bin"));
  REQUIRE(fs::exists(fs::path(out) / "probe_metrics.csv"));

  REQUIRE(run({"eval", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(fs::exists(fs::path(out) / "eval_report.csv"));
  REQUIRE(fs::exists(fs::path(out) / "swap_scores.csv"));

  REQUIRE(run({"swap-demo", "--config", cfg.string(), "--out", out, "--pairs", "2"}) == 0);
  REQUIRE(fs::exists(fs::path(out) / "swap_grid.png"));
  // png signature
  std::string png = file_bytes(fs::path(out) / "swap_grid.png");
  REQUIRE(png.size() > 8);
  REQUIRE(static_cast<unsigned char>(png[0]) == 0x89);
  REQUIRE(png.substr(1, 3) == "PNG");

  REQUIRE(run({"bg-estimate", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(fs::exists(fs::path(out) / "bg_clip_000.png"));

  // eval report has one row per probe input x fraction x seed
  std::ifstream is(fs::path(out) / "eval_report.csv");
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "probe_input,fraction,seed,labeled_samples,n_mpjpe");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 3);  // tv, ti, random for one fraction and one seed
}

TEST_CASE("train-ssl reruns reproduce the checkpoint bytes") {
  auto dir = temp_dir("repro");
  fs::path cfg = write_tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", (dir / "r").string()}) == 0);
  REQUIRE(run({"train-ssl", "--config", cfg.string(), "--out", (dir / "r").string()}) == 0);
  std::string first = file_bytes(dir / "r" / "checkpoint.bin");
  REQUIRE(run({"train-ssl", "--config", cfg.string(), "--out", (dir / "r").string()}) == 0);
  REQUIRE(file_bytes(dir / "r" / "checkpoint.bin") == first);

  // metrics match except the wall-time column
  auto strip_wall = [](const fs::path& p) {
    std::ifstream is(p);
    std::string line, out;
    while (std::getline(is, line)) {
      const auto pos = line.rfind(',');
      out += line.substr(0, pos) + "\n";
    }
    return out;
  };
  std::string metrics1 = strip_wall(dir / "r" / "metrics.csv");
  REQUIRE(run({"train-ssl", "--config", cfg.string(), "--out", (dir / "r").string()}) == 0);
  REQUIRE(strip_wall(dir / "r" / "metrics.csv") == metrics1);
}

TEST_CASE("seed override changes the outputs") {
  auto dir = temp_dir("seedovr");
  fs::path cfg = write_tiny_config(dir);
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", (dir / "a").string()}) == 0);
  REQUIRE(run({"gen", "--config", cfg.string(), "--seed", "123", "--out", (dir / "b").string()}) == 0);
  REQUIRE(file_bytes(dir / "a" / "dataset" / "clips" / "clip_000" / "frames.bin") !=
          file_bytes(dir / "b" / "dataset" / "clips" / "clip_000" / "frames.bin"));
}

TEST_CASE("ablate emits one row per variant, fraction and seed") {
  auto dir = temp_dir("ablate");
  // crop must equal canvas so the no-stn variant participates
  std::string cfg_text = kTinyConfig;
  const auto pos = cfg_text.find("\"crop\": 16");
  cfg_text.replace(pos, 10, "\"crop\": 32");
  fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << cfg_text;

  const std::string out = (dir / "run").string();
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", out}) == 0);
  REQUIRE(run({"ablate", "--config", cfg.string(), "--out", out}) == 0);
  std::ifstream is(fs::path(out) / "ablation.csv");
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "variant,fraction,seed,labeled_samples,n_mpjpe");
  int rows = 0;
  std::set<std::string> variants;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    variants.insert(line.substr(0, line.find(',')));
    ++rows;
  }
  REQUIRE(rows == 6);  // 6 variants x 1 fraction x 1 seed
  REQUIRE(variants.size() == 6);
}

TEST_CASE("gradcheck subcommand passes on a reduced sweep") {
  REQUIRE(run({"gradcheck", "--configs", "2"}) == 0);
}
