#pragma once

#include <limits>
#include <memory>

#include "regcd/cd.hpp"
#include "regcd/config.hpp"
#include "regcd/data.hpp"
#include "regcd/flow.hpp"
#include "regcd/matcher.hpp"

namespace regcd {

// Toy backend from encoder.checkpoint, or the import backend.
std::shared_ptr<const EncoderBackend> make_backend(const RunConfig& cfg);

struct ModelOutput {
  CorrelationVolume volume;
  Var logits;       // {r^2, h, w}
  Var aux;          // {1, h, w}
  Var coarse_flow;  // {2, h, w}, coarse pixels
  Refiner::Output refined;
  Var cd_logits;    // {1, H, W}; undefined when the CD branch was skipped
  Tensor covered;   // {1, H, W}
};

struct LossBreakdown {
  Var total;
  Var flow;
  Var cd;  // undefined when lambda == 0
  double classification = 0.0;
  double epe_coarse = 0.0;
  double epe_full = 0.0;
  double aux = 0.0;
  double cd_value = std::numeric_limits<double>::quiet_NaN();
  bool flow_empty = false;
  bool cd_empty = false;
};

class JointModel {
 public:
  JointModel(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend);

  const RunConfig& config() const noexcept { return cfg_; }
  const DisplacementLattice& lattice() const noexcept { return lattice_; }
  const EncoderBackend& backend() const noexcept { return *backend_; }

  // Raw extraction followed by harmonization.
  FeaturePyramid features(const Tensor& image, std::uint64_t eps_seed, const std::string& key) const;
  ModelOutput forward(const FeaturePyramid& fa, const FeaturePyramid& fb, bool with_cd) const;
  ModelOutput forward(const SamplePair& sample, std::uint64_t eps_seed, const std::string& key, bool with_cd) const;
  LossBreakdown losses(const ModelOutput& out, const SamplePair& sample, double lambda_cd) const;

  // Fixed evaluation noise for a sample.
  std::uint64_t eval_seed(const SamplePair& sample) const;

  nn::ParamList parameters() const;
  bool is_cd_parameter(const std::string& name) const { return name.rfind("cd.", 0) == 0; }

  Harmonizer harmonizer;
  FourierMap fourier;
  DecoderStack decoder;
  Refiner refiner;
  CDHead cd;

 private:
  JointModel(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend, Rng&& rng);

  RunConfig cfg_;
  std::shared_ptr<const EncoderBackend> backend_;
  DisplacementLattice lattice_;
  int reg_index_;
};

}  // namespace regcd
