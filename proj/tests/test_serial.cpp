#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "vidrep/codec.hpp"
#include "vidrep/serial.hpp"

using namespace vidrep;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("vidrep_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("tensor files round trip bit-exactly") {
  auto dir = temp_dir("tensor");
  Rng rng(1, 0);
  Tensor t = Tensor::randn({3, 5, 2}, rng);
  write_tensor_file(dir / "t.bin", t);
  Tensor back = read_tensor_file(dir / "t.bin");
  REQUIRE(back.shape() == t.shape());
  REQUIRE(std::memcmp(back.data(), t.data(), sizeof(double) * static_cast<size_t>(t.size())) == 0);

  // rewriting produces identical bytes
  std::string first = file_bytes(dir / "t.bin");
  write_tensor_file(dir / "t.bin", t);
  REQUIRE(file_bytes(dir / "t.bin") == first);

  std::ofstream(dir / "junk.bin", std::ios::binary) << "nope";
  REQUIRE_THROWS_AS(read_tensor_file(dir / "junk.bin"), std::runtime_error);
}

TEST_CASE("named tensor bundles preserve order, names and bits") {
  auto dir = temp_dir("bundle");
  Rng rng(2, 0);
  CodecConfig cfg;
  cfg.crop = 8;
  cfg.n_tv = 3;
  cfg.n_ti = 2;
  cfg.trunk_channels = {2, 2};
  cfg.dec_maps = 2;
  cfg.dec_channels = {2};
  Codec codec(cfg, rng);
  save_named_tensors(dir / "ckpt.bin", codec.named_params());

  auto loaded = load_named_tensors(dir / "ckpt.bin");
  auto expected = codec.named_params();
  REQUIRE(loaded.size() == expected.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    REQUIRE(loaded[i].first == expected[i].first);
    REQUIRE(loaded[i].second.shape() == expected[i].second.shape());
    REQUIRE(std::memcmp(loaded[i].second.data(), expected[i].second.data(),
                        sizeof(double) * static_cast<size_t>(loaded[i].second.size())) == 0);
  }

  // loading into a differently seeded model reproduces the saved weights
  Rng rng2(999, 0);
  Codec other(cfg, rng2);
  load_into_named(dir / "ckpt.bin", other.named_params());
  auto a = codec.named_params();
  auto b = other.named_params();
  for (size_t i = 0; i < a.size(); ++i)
    REQUIRE(std::memcmp(a[i].second.data(), b[i].second.data(),
                        sizeof(double) * static_cast<size_t>(a[i].second.size())) == 0);
}

TEST_CASE("clip directories round trip") {
  auto dir = temp_dir("clip");
  PuppetConfig cfg;
  VideoClip clip = generate_clip(cfg, 6, Rng(3, 7));
  clip.appearance_label = 4;
  save_clip(dir / "c0", clip);
  VideoClip back = load_clip(dir / "c0");
  REQUIRE(back.T == clip.T);
  REQUIRE(back.K == clip.K);
  REQUIRE(back.appearance_label == 4);
  REQUIRE(back.frames == clip.frames);
  REQUIRE(back.background == clip.background);
  REQUIRE(back.keypoints == clip.keypoints);
  REQUIRE(back.keypoints_centered == clip.keypoints_centered);
  REQUIRE(back.fg_fraction == clip.fg_fraction);
  REQUIRE(back.config.torso_len == clip.config.torso_len);
  REQUIRE(back.config.part_colors == clip.config.part_colors);
}

TEST_CASE("dataset directories regenerate byte-identically") {
  DatasetConfig ds;
  ds.train_clips = 2;
  ds.val_clips = 1;
  ds.test_clips = 1;
  ds.frames_per_clip = 8;
  ds.seed = 5;
  Dataset data = generate_dataset(ds);

  auto dir1 = temp_dir("ds1");
  auto dir2 = temp_dir("ds2");
  save_dataset(dir1, data);
  save_dataset(dir2, generate_dataset(ds));

  for (auto& entry : fs::recursive_directory_iterator(dir1)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), dir1);
    INFO(rel.string());
    REQUIRE(file_bytes(entry.path()) == file_bytes(dir2 / rel));
  }

  Dataset loaded = load_dataset(dir1);
  REQUIRE(loaded.train.size() == 2);
  REQUIRE(loaded.val.size() == 1);
  REQUIRE(loaded.test.size() == 1);
  REQUIRE(loaded.train[0].frames == data.train[0].frames);
}

TEST_CASE("fall spec json round trip") {
  FallSpec f;
  f.mode = FallSpec::Mode::perspective;
  f.camera_distance = 123.0;
  f.depth_rate = 0.7;
  FallSpec back = fall_from_json(fall_to_json(f));
  REQUIRE(back.mode == FallSpec::Mode::perspective);
  REQUIRE(back.camera_distance == 123.0);
  REQUIRE(back.depth_rate == 0.7);
  REQUIRE_THROWS_AS(fall_from_json(json{{"mode", "sideways"}}), std::invalid_argument);
}
