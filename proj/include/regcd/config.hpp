#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "regcd/cd.hpp"
#include "regcd/encoder.hpp"
#include "regcd/flow.hpp"

namespace regcd {

struct DataConfig {
  std::string root = "data";
  std::string train_split = "train";
  std::string val_split = "val";
  std::string test_split = "test";
  int val_limit = 0;  // 0 = whole split
};

struct EncoderConfig {
  std::string variant = "toy";  // toy | import
  std::string checkpoint;       // toy denoiser weights
  std::string import_dir;
  std::vector<int> timesteps{50, 400, 650};
  std::vector<int> widths{32, 32, 64, 64, 128};
  int registration_timestep = -1;  // -1 = largest of `timesteps`
  std::uint64_t noise_seed = 0;
  ToyDenoiserConfig denoiser;
  PretrainOptions pretrain;
};

struct MatcherConfig {
  int num_features = 256;
  double length_scale = 1.0;
  std::uint64_t seed = 0;
};

struct ModelFlowConfig : FlowHeadConfig {
  int coarse_scale = 4;
  int refine_scale = 1;
  double refine_weight = 1.0;
  double aux_weight = 1.0;
};

struct TrainConfig {
  int warmup = 500;
  int ramp = 1000;
  double lambda_max = 1.0;
  double lr = 1e-4;
  double lr_min = 0.0;
  double weight_decay = 1e-4;
  int accumulation = 8;
  int batch = 2;
  int epochs = 100;
  int max_iterations = 0;  // 0 = epochs decide
  int eval_every = 500;
  int checkpoint_every = 0;
  std::string ablation = "none";  // none | regression | nowarmup
  bool augment = false;           // random flips/transposes of training pairs
};

struct EvalConfig {
  int max_samples = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  EncoderConfig encoder;
  MatcherConfig matcher;
  ModelFlowConfig flow;
  CDHeadConfig cd;
  TrainConfig train;
  EvalConfig eval;

  // Canonical JSON (keys sorted).
  std::string to_json() const;
  std::string hash() const;
  int registration_index() const;
  void validate() const;
};

// Strict: unknown keys and type mismatches are ValidationErrors.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Flattened (dotted key, default value) pairs.
std::vector<std::pair<std::string, std::string>> config_keys();
// "regression" or "nowarmup"; "none" leaves the config untouched.
void apply_ablation(RunConfig& cfg, const std::string& ablation);

}  // namespace regcd
