#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "regcd/nn.hpp"

namespace regcd {

inline constexpr int kPyramidScales = 5;

struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;  // cumulative products of (1 - beta)

  // beta linearly spaced from beta_start to beta_end over `steps` entries.
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);
  // Accepts 0 < beta <= 1, nondecreasing.
  static NoiseSchedule from_betas(std::vector<double> beta);

  int steps() const noexcept { return static_cast<int>(beta.size()); }
};

// x0 in [0, 1] is rescaled to [-1, 1]; returns sqrt(a) x0 + sqrt(1 - a) eps
// with a = alpha_bar[t] and eps drawn from `eps_seed`.
Tensor forward_noise(const Tensor& x0, int t, std::uint64_t eps_seed, const NoiseSchedule& schedule);
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);
Tensor standard_noise(const Shape& shape, std::uint64_t seed);

// Sinusoidal embedding of a scalar timestep, {dim}.
Tensor timestep_embedding(double t, int dim);

struct ToyDenoiserConfig {
  std::vector<int> widths{16, 24, 32, 48, 64};  // raw channels per scale
  int embed_dim = 32;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

// Multi-scale convolutional encoder-decoder predicting the noise of x_t.
class ToyDenoiser {
 public:
  ToyDenoiser(const ToyDenoiserConfig& config, std::uint64_t seed);

  // Five encoder outputs at strides 1, 2, 4, 8, 16.
  std::vector<Var> encode(const Var& x_t, int t) const;
  Var predict_noise(const Var& x_t, int t) const;

  const ToyDenoiserConfig& config() const noexcept { return config_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  nn::ParamList parameters() const;

  void save(const std::filesystem::path& path) const;
  static ToyDenoiser load(const std::filesystem::path& path);

 private:
  std::vector<Var> encode_levels(const Var& x_t, int t) const;

  ToyDenoiserConfig config_;
  NoiseSchedule schedule_;
  nn::Linear time_;
  std::vector<nn::Conv2d> down_a_, down_b_, up_;
  nn::Conv2d out_;
};

struct PretrainOptions {
  int steps = 500;
  int batch = 2;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Trains on ||eps_hat - eps||^2; throws NumericError on a non-finite loss.
std::vector<double> pretrain_toy_denoiser(ToyDenoiser& model, const std::vector<Tensor>& images,
                                          const PretrainOptions& options,
                                          const std::function<void(int, double)>& on_step = {});

// features[k][i]: timestep index k, scale i.
struct FeaturePyramid {
  std::vector<int> timesteps;
  std::vector<std::vector<Var>> features;
  bool harmonized = false;

  const Var& at(std::size_t k, int scale) const { return features.at(k).at(static_cast<std::size_t>(scale)); }
  int scales() const { return features.empty() ? 0 : static_cast<int>(features[0].size()); }
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual std::string variant() const = 0;
  virtual std::vector<int> channels() const = 0;
  // `key` names the image for backends that look features up (e.g. "test/a/000004").
  virtual FeaturePyramid extract(const Tensor& image, const std::vector<int>& timesteps, std::uint64_t eps_seed,
                                 const std::string& key) const = 0;
};

class ToyBackend : public EncoderBackend {
 public:
  explicit ToyBackend(std::shared_ptr<const ToyDenoiser> model) : model_(std::move(model)) {}
  std::string variant() const override { return "toy_diffusion"; }
  std::vector<int> channels() const override { return model_->config().widths; }
  FeaturePyramid extract(const Tensor& image, const std::vector<int>& timesteps, std::uint64_t eps_seed,
                         const std::string& key) const override;
  const ToyDenoiser& model() const { return *model_; }

 private:
  std::shared_ptr<const ToyDenoiser> model_;
};

// Reads <dir>/<key>/t<timestep>_s<scale>.fea feature files.
class ImportBackend : public EncoderBackend {
 public:
  ImportBackend(std::filesystem::path dir, std::vector<int> channels);
  std::string variant() const override { return "import"; }
  std::vector<int> channels() const override { return channels_; }
  FeaturePyramid extract(const Tensor& image, const std::vector<int>& timesteps, std::uint64_t eps_seed,
                         const std::string& key) const override;

 private:
  std::filesystem::path dir_;
  std::vector<int> channels_;
};

// Per-scale 1x1 projection to D_i channels followed by layer normalization,
// shared across timesteps.
class Harmonizer {
 public:
  Harmonizer() = default;
  Harmonizer(const std::vector<int>& raw_channels, const std::vector<int>& widths, Rng& rng);

  FeaturePyramid operator()(const FeaturePyramid& raw) const;
  Var project(const Var& raw, int scale) const;
  // Identity projection (requires D_i == C_i) and identity affine.
  void set_identity();

  const std::vector<int>& widths() const noexcept { return widths_; }
  nn::ParamList parameters() const;

 private:
  std::vector<int> widths_;
  std::vector<Var> proj_;
  std::vector<nn::LayerNorm> norm_;
};

}  // namespace regcd
