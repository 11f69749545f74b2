#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vidrep/ops.hpp"
#include "vidrep/rng.hpp"
#include "vidrep/tensor.hpp"

namespace vidrep {

// Split latent code: tv changes frame to frame (pose), ti stays constant
// within a clip (appearance). The slices are disjoint by construction.
struct LatentCode {
  std::vector<double> tv;
  std::vector<double> ti;
};

enum class LatentHead { tv, ti };

struct CodecConfig {
  int crop = 64;  // square crop resolution; must be divisible by 8
  int n_tv = 32;
  int n_ti = 8;
  std::vector<int> trunk_channels = {16, 32, 64, 128};
  int dec_maps = 32;                      // feature maps per latent slice
  std::vector<int> dec_channels = {32, 16, 8};  // after each upsample stage

  int base_hw() const { return crop >> dec_channels.size(); }

  void validate() const {
    if (n_tv < 1 || n_ti < 1) throw std::invalid_argument("CodecConfig: latent dims must be >= 1");
    if (crop < 8 || (crop % (1 << dec_channels.size())) != 0)
      throw std::invalid_argument("CodecConfig: crop " + std::to_string(crop) +
                                  " incompatible with " + std::to_string(dec_channels.size()) +
                                  " upsample stages");
    if (trunk_channels.empty() || dec_channels.empty())
      throw std::invalid_argument("CodecConfig: empty channel list");
  }
};

// Encoder pair with a literally shared trunk (one weight storage, two uses)
// and per-component linear heads, plus the upsampling mask+RGB decoder.
class Codec {
 public:
  Codec() = default;

  Codec(const CodecConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int c_in = 3;
    int hw = cfg.crop;
    for (int c_out : cfg.trunk_channels) {
      const double stddev = std::sqrt(2.0 / (c_in * 9.0));
      trunk_w_.push_back(Tensor::randn({c_out, c_in, 3, 3}, rng, stddev, true));
      trunk_b_.push_back(Tensor::zeros({c_out}, true));
      c_in = c_out;
      hw = (hw + 1) / 2;
    }
    trunk_out_ = c_in * hw * hw;
    const double head_std = 1.0 / std::sqrt(static_cast<double>(trunk_out_));
    head_tv_w_ = Tensor::randn({trunk_out_, cfg.n_tv}, rng, head_std, true);
    head_tv_b_ = Tensor::zeros({cfg.n_tv}, true);
    head_ti_w_ = Tensor::randn({trunk_out_, cfg.n_ti}, rng, head_std, true);
    head_ti_b_ = Tensor::zeros({cfg.n_ti}, true);

    const int b = cfg.base_hw();
    const int map_elems = cfg.dec_maps * b * b;
    dec_tv_w_ = Tensor::randn({cfg.n_tv, map_elems}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.n_tv)), true);
    dec_tv_b_ = Tensor::zeros({map_elems}, true);
    dec_ti_w_ = Tensor::randn({cfg.n_ti, map_elems}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.n_ti)), true);
    dec_ti_b_ = Tensor::zeros({map_elems}, true);

    int dc_in = 2 * cfg.dec_maps;
    for (int dc_out : cfg.dec_channels) {
      const double stddev = std::sqrt(2.0 / (dc_in * 9.0));
      dec_w_.push_back(Tensor::randn({dc_out, dc_in, 3, 3}, rng, stddev, true));
      dec_b_.push_back(Tensor::zeros({dc_out}, true));
      dc_in = dc_out;
    }
    out_w_ = Tensor::randn({4, dc_in, 3, 3}, rng, std::sqrt(2.0 / (dc_in * 9.0)), true);
    // mask channel starts near transparent so the composite begins at the
    // known background and paints foreground only where it pays off
    out_b_ = Tensor::from_data({4}, {0.0, 0.0, 0.0, -2.0}, true);
  }

  const CodecConfig& config() const { return cfg_; }

  // Shared-trunk forward; the head picks the latent component. The ti pass
  // expects the clean crop and the tv pass the jittered one -- the caller
  // supplies the right input.
  Tensor encode(const Tensor& crops, LatentHead which) const {
    Tensor x = trunk(crops);
    if (which == LatentHead::tv) return linear(x, head_tv_w_, head_tv_b_);
    return linear(x, head_ti_w_, head_ti_b_);
  }

  // Trunk activations before the heads (exposed for the sharing test).
  Tensor trunk(const Tensor& crops) const {
    Tensor x = crops;
    for (size_t l = 0; l < trunk_w_.size(); ++l) x = relu(conv2d(x, trunk_w_[l], trunk_b_[l], 2, 1));
    return reshape(x, {x.dim(0), trunk_out_});
  }

  // (rgb [N,3,c,c], mask [N,1,c,c]), both sigmoid-bounded.
  std::pair<Tensor, Tensor> decode(const Tensor& tv, const Tensor& ti) const {
    if (tv.rank() != 2 || tv.dim(1) != cfg_.n_tv || ti.rank() != 2 || ti.dim(1) != cfg_.n_ti ||
        tv.dim(0) != ti.dim(0))
      throw std::invalid_argument("decode: latent dims " + shape_str(tv.shape()) + " / " +
                                  shape_str(ti.shape()) + " do not match config (" +
                                  std::to_string(cfg_.n_tv) + ", " + std::to_string(cfg_.n_ti) + ")");
    const int n = tv.dim(0);
    const int b = cfg_.base_hw();
    Tensor ftv = reshape(relu(linear(tv, dec_tv_w_, dec_tv_b_)), {n, cfg_.dec_maps, b, b});
    Tensor fti = reshape(relu(linear(ti, dec_ti_w_, dec_ti_b_)), {n, cfg_.dec_maps, b, b});
    Tensor x = concat({ftv, fti}, 1);
    for (size_t l = 0; l < dec_w_.size(); ++l)
      x = relu(conv2d(upsample2_bilinear(x), dec_w_[l], dec_b_[l], 1, 1));
    Tensor out = sigmoid(conv2d(x, out_w_, out_b_, 1, 1));
    return {narrow(out, 1, 0, 3), narrow(out, 1, 3, 1)};
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t l = 0; l < trunk_w_.size(); ++l) {
      out.emplace_back("enc.trunk" + std::to_string(l) + ".w", trunk_w_[l]);
      out.emplace_back("enc.trunk" + std::to_string(l) + ".b", trunk_b_[l]);
    }
    out.emplace_back("enc.head_tv.w", head_tv_w_);
    out.emplace_back("enc.head_tv.b", head_tv_b_);
    out.emplace_back("enc.head_ti.w", head_ti_w_);
    out.emplace_back("enc.head_ti.b", head_ti_b_);
    out.emplace_back("dec.lin_tv.w", dec_tv_w_);
    out.emplace_back("dec.lin_tv.b", dec_tv_b_);
    out.emplace_back("dec.lin_ti.w", dec_ti_w_);
    out.emplace_back("dec.lin_ti.b", dec_ti_b_);
    for (size_t l = 0; l < dec_w_.size(); ++l) {
      out.emplace_back("dec.up" + std::to_string(l) + ".w", dec_w_[l]);
      out.emplace_back("dec.up" + std::to_string(l) + ".b", dec_b_[l]);
    }
    out.emplace_back("dec.out.w", out_w_);
    out.emplace_back("dec.out.b", out_b_);
    return out;
  }

  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::vector<Tensor> encoder_params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params())
      if (name.rfind("enc.", 0) == 0) out.push_back(t);
    return out;
  }

  std::vector<Tensor> decoder_params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params())
      if (name.rfind("dec.", 0) == 0) out.push_back(t);
    return out;
  }

  Tensor& head_tv_weight() { return head_tv_w_; }
  Tensor& head_ti_weight() { return head_ti_w_; }

 private:
  CodecConfig cfg_;
  int trunk_out_ = 0;
  std::vector<Tensor> trunk_w_, trunk_b_;
  Tensor head_tv_w_, head_tv_b_, head_ti_w_, head_ti_b_;
  Tensor dec_tv_w_, dec_tv_b_, dec_ti_w_, dec_ti_b_;
  std::vector<Tensor> dec_w_, dec_b_;
  Tensor out_w_, out_b_;
};

// Within each same-video group the ti rows rotate by one position over a
// seed-chosen member ordering; groups of one pass through. Every member of a
// group of >= 2 receives a different frame's ti (derangement).
inline std::vector<int> swap_permutation(const std::vector<int>& video_ids, Rng& rng) {
  std::vector<int> perm(video_ids.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::unordered_map<int, std::vector<int>> groups;
  std::vector<int> group_order;
  for (size_t i = 0; i < video_ids.size(); ++i) {
    if (groups.find(video_ids[i]) == groups.end()) group_order.push_back(video_ids[i]);
    groups[video_ids[i]].push_back(static_cast<int>(i));
  }
  for (int id : group_order) {
    std::vector<int>& members = groups[id];
    const int g = static_cast<int>(members.size());
    if (g < 2) continue;
    // Fisher-Yates on the member ordering, then a cyclic shift.
    for (int k = g - 1; k > 0; --k)
      std::swap(members[static_cast<size_t>(k)],
                members[static_cast<size_t>(rng.uniform_int(k + 1))]);
    for (int k = 0; k < g; ++k)
      perm[static_cast<size_t>(members[static_cast<size_t>(k)])] =
          members[static_cast<size_t>((k + 1) % g)];
  }
  return perm;
}

// Graph-level swap: rows of the ti matrix are permuted, tv untouched.
inline Tensor swap_ti(const Tensor& ti, const std::vector<int>& video_ids, Rng& rng) {
  if (ti.dim(0) != static_cast<int>(video_ids.size()))
    throw std::invalid_argument("swap_ti: " + std::to_string(video_ids.size()) + " ids for " +
                                shape_str(ti.shape()));
  return permute_rows(ti, swap_permutation(video_ids, rng));
}

// Value-level swap over assembled latent codes.
inline std::vector<LatentCode> swap_ti(const std::vector<LatentCode>& codes,
                                       const std::vector<int>& video_ids, Rng& rng) {
  if (codes.size() != video_ids.size())
    throw std::invalid_argument("swap_ti: id/code count mismatch");
  std::vector<int> perm = swap_permutation(video_ids, rng);
  std::vector<LatentCode> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) {
    out[i].tv = codes[i].tv;
    out[i].ti = codes[static_cast<size_t>(perm[i])].ti;
  }
  return out;
}

}  // namespace vidrep
