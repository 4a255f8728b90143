#pragma once

#include <array>
#include <vector>

#include "regcd/matcher.hpp"
#include "regcd/nn.hpp"

namespace regcd {

struct FlowHeadConfig {
  int r = 11;
  double delta = 1.0;
  double sigma = 1.0;
  double tau = 0.1;
  double alpha = 0.25;
  int blocks = 4;
  int width = 256;
  int heads = 8;
  int mlp_ratio = 4;
  int refine_hidden = 32;
  int refine_radius = 2;
};

// Fixed 2-D sinusoidal table {channels, N}; channels must be a multiple of 4.
Tensor positional_encoding(int channels, const std::vector<std::array<double, 2>>& positions);
// Row-major (x, y) positions of an h x w grid.
std::vector<std::array<double, 2>> grid_positions(int h, int w);

struct AttentionBlock {
  nn::LayerNorm norm1, norm2;
  nn::Linear query, key, value, out;
  nn::Linear mlp_in, mlp_out;
  int heads = 1;

  AttentionBlock() = default;
  AttentionBlock(int width, int heads, int mlp_ratio, Rng& rng);
  Var operator()(const Var& x) const;  // x {C, N}
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

class DecoderStack {
 public:
  struct Output {
    Var logits;  // {r^2, h, w}
    Var aux;     // {1, h, w}
  };

  DecoderStack(int in_channels, int width, int blocks, int heads, int bins, int mlp_ratio, Rng& rng);

  int in_channels() const noexcept { return in_channels_; }
  int width() const noexcept { return width_; }
  int bins() const noexcept { return bins_; }

  // tokens {C_in, N}, positional table {width, N} -> {bins + 1, N}.
  Var forward_tokens(const Var& tokens, const Tensor& positions) const;
  Output decode(const CorrelationVolume& volume, const Var& f_coarse) const;

  nn::Linear input;
  std::vector<AttentionBlock> blocks;
  nn::LayerNorm final_norm;
  nn::Linear head;

  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  int in_channels_;
  int width_;
  int bins_;
};

// softmax(z / tau) over the lattice axis.
Var flow_probabilities(const Var& logits, double tau);
// Expected displacement sum_k pi_k m_k, {2, h, w} in coarse pixels.
Var argsoftmax_decode(const Var& probs, const DisplacementLattice& lattice);

struct GaussianTarget {
  Tensor probs;      // {r^2, h, w}
  Tensor log_probs;  // {r^2, h, w}
  Tensor in_range;   // {1, h, w}
};
GaussianTarget gaussian_target(const Tensor& w_star, const DisplacementLattice& lattice, double sigma);

enum class FlowObjective { kl, regression };

struct FlowLossTerms {
  Var total;
  Var classification;  // KL, or the squared error in regression mode
  Var epe;
  bool empty = false;
};

// w_star {2, h, w} in coarse pixels, valid {1, h, w}.
FlowLossTerms flow_loss(const Var& logits, const Tensor& w_star, const Tensor& valid, const DisplacementLattice& lattice,
                        const FlowHeadConfig& cfg, FlowObjective objective = FlowObjective::kl);

// Differentiable scale_flow: bilinear resize and multiplication by the size ratio.
Var rescale_flow(const Var& flow, int out_h, int out_w);

class Refiner {
 public:
  struct Output {
    Var flow;        // {2, H, W}
    Var base;        // upsampled coarse flow
    Var correction;  // bounded residual, full-resolution pixels
  };

  Refiner(int feature_channels, int hidden, int radius, Rng& rng);

  // coarse {2, hc, wc}; fa, fb {C, hr, wr} at an intermediate resolution.
  Output operator()(const Var& coarse, const Var& fa, const Var& fb, int out_h, int out_w) const;

  static constexpr double kMaxCorrection = 2.0;

  nn::Conv2d conv1, conv2, out;
  int radius;

  void collect(nn::ParamList& params, const std::string& prefix) const;
};

}  // namespace regcd
