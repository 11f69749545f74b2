#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vidrep/synth.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

using json = nlohmann::json;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor file: truncated read");
  return v;
}

constexpr uint32_t kTensorMagic = 0x42545256;   // "VRTB"
constexpr uint32_t kBundleMagic = 0x4b435256;   // "VRCK"
constexpr uint32_t kFormatVersion = 1;

inline void write_tensor_body(std::ostream& os, const Tensor& t) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) write_pod<uint64_t>(os, static_cast<uint64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor_body(std::istream& is) {
  const uint32_t rank = read_pod<uint32_t>(is);
  if (rank > 8) throw std::runtime_error("tensor file: implausible rank " + std::to_string(rank));
  Shape shape;
  for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_pod<uint64_t>(is)));
  Tensor t = Tensor::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw std::runtime_error("tensor file: truncated payload");
  return t;
}

}  // namespace detail

// Single-tensor file: magic, version, rank, extents, little-endian f64 data.
inline void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  detail::write_pod<uint32_t>(os, detail::kTensorMagic);
  detail::write_pod<uint32_t>(os, detail::kFormatVersion);
  detail::write_tensor_body(os, t);
}

inline Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (detail::read_pod<uint32_t>(is) != detail::kTensorMagic)
    throw std::runtime_error(path.string() + ": not a tensor file");
  if (detail::read_pod<uint32_t>(is) != detail::kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported version");
  return detail::read_tensor_body(is);
}

// Named-tensor bundle (checkpoints). Round trips are bit-exact.
inline void save_named_tensors(const std::filesystem::path& path,
                               const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  detail::write_pod<uint32_t>(os, detail::kBundleMagic);
  detail::write_pod<uint32_t>(os, detail::kFormatVersion);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_tensor_body(os, t);
  }
}

inline std::vector<std::pair<std::string, Tensor>> load_named_tensors(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (detail::read_pod<uint32_t>(is) != detail::kBundleMagic)
    throw std::runtime_error(path.string() + ": not a tensor bundle");
  if (detail::read_pod<uint32_t>(is) != detail::kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported version");
  const uint32_t count = detail::read_pod<uint32_t>(is);
  std::vector<std::pair<std::string, Tensor>> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = detail::read_pod<uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    out.emplace_back(std::move(name), detail::read_tensor_body(is));
  }
  return out;
}

// Copies stored values into an existing parameter set (names must match).
inline void load_into_named(const std::filesystem::path& path,
                            std::vector<std::pair<std::string, Tensor>> params) {
  auto stored = load_named_tensors(path);
  if (stored.size() != params.size())
    throw std::runtime_error(path.string() + ": bundle has " + std::to_string(stored.size()) +
                             " tensors, model expects " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (stored[i].first != params[i].first)
      throw std::runtime_error(path.string() + ": entry '" + stored[i].first + "' where '" +
                               params[i].first + "' expected");
    if (stored[i].second.shape() != params[i].second.shape())
      throw std::runtime_error(path.string() + ": shape mismatch for '" + stored[i].first + "'");
    params[i].second.vec() = stored[i].second.vec();
  }
}

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline json fall_to_json(const FallSpec& f) {
  json j;
  switch (f.mode) {
    case FallSpec::Mode::off: j["mode"] = "off"; break;
    case FallSpec::Mode::orthographic: j["mode"] = "orthographic"; break;
    case FallSpec::Mode::perspective: j["mode"] = "perspective"; break;
  }
  j["camera_distance"] = f.camera_distance;
  j["depth_rate"] = f.depth_rate;
  return j;
}

inline FallSpec fall_from_json(const json& j) {
  FallSpec f;
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "off") f.mode = FallSpec::Mode::off;
  else if (mode == "orthographic") f.mode = FallSpec::Mode::orthographic;
  else if (mode == "perspective") f.mode = FallSpec::Mode::perspective;
  else throw std::invalid_argument("fall mode '" + mode + "' unknown");
  f.camera_distance = j.value("camera_distance", 640.0);
  f.depth_rate = j.value("depth_rate", 0.0);
  return f;
}

inline json puppet_to_json(const PuppetConfig& c) {
  json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["joints"] = c.joints;
  j["torso_len"] = c.torso_len;
  j["arm_len"] = c.arm_len;
  j["leg_len"] = c.leg_len;
  j["shoulder_frac"] = c.shoulder_frac;
  j["limb_radius"] = c.limb_radius;
  j["head_radius"] = c.head_radius;
  j["revert_rate"] = c.revert_rate;
  j["noise_scale"] = c.noise_scale;
  j["max_angle_step"] = c.max_angle_step;
  j["fall"] = fall_to_json(c.fall);
  json colors = json::array();
  for (const auto& p : c.part_colors) colors.push_back(std::vector<double>(p.begin(), p.end()));
  j["part_colors"] = colors;
  return j;
}

inline PuppetConfig puppet_from_json(const json& j) {
  PuppetConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.joints = j.value("joints", c.joints);
  c.torso_len = j.value("torso_len", c.torso_len);
  c.arm_len = j.value("arm_len", c.arm_len);
  c.leg_len = j.value("leg_len", c.leg_len);
  c.shoulder_frac = j.value("shoulder_frac", c.shoulder_frac);
  c.limb_radius = j.value("limb_radius", c.limb_radius);
  c.head_radius = j.value("head_radius", c.head_radius);
  c.revert_rate = j.value("revert_rate", c.revert_rate);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  c.max_angle_step = j.value("max_angle_step", c.max_angle_step);
  if (j.contains("fall")) c.fall = fall_from_json(j.at("fall"));
  if (j.contains("part_colors")) {
    const auto& colors = j.at("part_colors");
    for (size_t p = 0; p < c.part_colors.size() && p < colors.size(); ++p)
      for (size_t k = 0; k < 3; ++k) c.part_colors[p][k] = colors[p][k].get<double>();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Clip and dataset directories
// ---------------------------------------------------------------------------

inline void save_clip(const std::filesystem::path& dir, const VideoClip& clip) {
  std::filesystem::create_directories(dir);
  write_tensor_file(dir / "frames.bin",
                    Tensor::from_data({clip.T, 3, clip.H, clip.W}, clip.frames));
  write_tensor_file(dir / "bg.bin", Tensor::from_data({3, clip.H, clip.W}, clip.background));
  json j;
  j["T"] = clip.T;
  j["H"] = clip.H;
  j["W"] = clip.W;
  j["K"] = clip.K;
  j["appearance_label"] = clip.appearance_label;
  j["seed"] = clip.seed;
  j["stream"] = clip.stream;
  j["timestamps"] = clip.timestamps;
  j["keypoints"] = clip.keypoints;
  j["keypoints_centered"] = clip.keypoints_centered;
  j["fg_fraction"] = clip.fg_fraction;
  j["config"] = puppet_to_json(clip.config);
  std::ofstream os(dir / "clip.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

inline VideoClip load_clip(const std::filesystem::path& dir) {
  VideoClip clip;
  Tensor frames = read_tensor_file(dir / "frames.bin");
  Tensor bg = read_tensor_file(dir / "bg.bin");
  std::ifstream is(dir / "clip.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "clip.json").string());
  json j = json::parse(is);
  clip.T = j.at("T").get<int>();
  clip.H = j.at("H").get<int>();
  clip.W = j.at("W").get<int>();
  clip.K = j.at("K").get<int>();
  clip.appearance_label = j.at("appearance_label").get<int>();
  clip.seed = j.at("seed").get<uint64_t>();
  clip.stream = j.at("stream").get<uint64_t>();
  clip.timestamps = j.at("timestamps").get<std::vector<int>>();
  clip.keypoints = j.at("keypoints").get<std::vector<double>>();
  clip.keypoints_centered = j.at("keypoints_centered").get<std::vector<double>>();
  clip.fg_fraction = j.at("fg_fraction").get<std::vector<double>>();
  clip.config = puppet_from_json(j.at("config"));
  clip.frames = frames.vec();
  clip.background = bg.vec();
  return clip;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  json splits;
  int index = 0;
  auto dump_split = [&](const char* name, const std::vector<VideoClip>& clips) {
    std::vector<std::string> ids;
    for (const VideoClip& c : clips) {
      std::ostringstream id;
      id << "clip_" << std::setw(3) << std::setfill('0') << index++;
      save_clip(dir / "clips" / id.str(), c);
      ids.push_back(id.str());
    }
    splits[name] = ids;
  };
  dump_split("train", ds.train);
  dump_split("val", ds.val);
  dump_split("test", ds.test);
  json j;
  j["splits"] = splits;
  std::ofstream os(dir / "dataset.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.json");
  if (!is) throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
  json j = json::parse(is);
  Dataset ds;
  auto load_split = [&](const char* name, std::vector<VideoClip>& out) {
    for (const auto& id : j.at("splits").at(name))
      out.push_back(load_clip(dir / "clips" / id.get<std::string>()));
  };
  load_split("train", ds.train);
  load_split("val", ds.val);
  load_split("test", ds.test);
  return ds;
}

}  // namespace vidrep
