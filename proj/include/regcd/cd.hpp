#pragma once

#include <vector>

#include "regcd/encoder.hpp"
#include "regcd/nn.hpp"
#include "regcd/ops.hpp"

namespace regcd {

struct CDHeadConfig {
  int se_ratio = 8;
  // Stage output widths, coarsest stage first.
  std::vector<int> decoder_widths{64, 64, 96, 96, 128};
  double threshold = 0.5;
};

struct AlignedPyramid {
  FeaturePyramid features;
  std::vector<Tensor> covered;  // per scale, {1, H_i, W_i}
};

// Warps every f_B^{t,i} by the full-resolution flow rescaled to scale i.
AlignedPyramid align_features(const FeaturePyramid& pyr_b, const Var& flow_full);

// [|fa - fb|; fa * fb], 2C channels.
Var build_descriptor(const Var& fa, const Var& fb_warped);

struct SqueezeExcite {
  nn::Linear reduce, expand;

  SqueezeExcite() = default;
  SqueezeExcite(int channels, int ratio, Rng& rng);
  Var gates(const Var& u) const;  // {C}
  Var operator()(const Var& u) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

// sum_t softmax(logits)_t * u_t.
Var aggregate_timesteps(const std::vector<Var>& per_timestep, const Var& logits);

struct DecoderStage {
  nn::Conv2d conv1, conv2;
  Var operator()(const Var& x) const { return ag::relu(conv2(ag::relu(conv1(x)))); }
};

class CDHead {
 public:
  // widths: harmonized channels D_i per scale.
  CDHead(const std::vector<int>& widths, int num_timesteps, const CDHeadConfig& cfg, Rng& rng);

  int scales() const noexcept { return static_cast<int>(se.size()); }
  int timesteps() const noexcept { return num_timesteps_; }

  // u[k][i]: descriptor for timestep k at scale i -> per-scale aggregates.
  std::vector<Var> aggregate(const std::vector<std::vector<Var>>& u) const;
  // Coarse-to-fine decoding to full-resolution logits {1, H, W}.
  Var decode(const std::vector<Var>& u_hat) const;
  Var operator()(const FeaturePyramid& fa, const AlignedPyramid& fb) const;

  std::vector<SqueezeExcite> se;
  std::vector<Var> gamma_logits;   // per scale {T}
  std::vector<DecoderStage> stages;  // stages[i] runs at scale i
  nn::Conv2d projection;

  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  int num_timesteps_;
};

struct CDLoss {
  Var value;
  bool empty = false;
};
CDLoss cd_loss(const Var& logits, const Tensor& change, const Tensor& mask);

// Binary mask P >= threshold, with P = sigmoid(logits).
Tensor change_mask(const Tensor& logits, double threshold);
Tensor change_probability(const Tensor& logits);

}  // namespace regcd
