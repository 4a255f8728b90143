#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "regcd/evaluate.hpp"
#include "regcd/model.hpp"
#include "regcd/nn.hpp"

namespace regcd {

// 0 for t <= warmup, then a linear ramp to lambda_max over `ramp` iterations.
double lambda_cd(long t, const TrainConfig& cfg);
// Cosine annealing from lr (t = 1) towards lr_min (t = total + 1).
double learning_rate(long t, long total, const TrainConfig& cfg);

struct StepReport {
  long iteration = 0;
  double lr = 0, lambda = 0;
  double total = 0, flow = 0, classification = 0, epe_coarse = 0, epe_full = 0, aux = 0;
  double cd = std::numeric_limits<double>::quiet_NaN();  // NaN when the CD branch did not run
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend, std::vector<SamplePair> train);

  JointModel& model() noexcept { return model_; }
  const JointModel& model() const noexcept { return model_; }
  const nn::ParamList& parameters() const noexcept { return params_; }
  long iteration() const noexcept { return iteration_; }
  long total_iterations() const noexcept { return total_; }
  long iterations_per_epoch() const noexcept;

  // One optimizer update over batch * accumulation samples.
  StepReport step();
  // Train-set index consumed at slot `j` of iteration `t` (1-based).
  std::size_t sample_index(long t, int j) const;

  // Checkpoint = parameters + optimizer state + iteration; `meta` is merged into the header.
  void save(const std::filesystem::path& path, const std::string& meta_json = "{}") const;
  // Restores parameters and optimizer state; returns the stored header meta.
  std::string restore(const std::filesystem::path& path);

 private:
  RunConfig cfg_;
  JointModel model_;
  std::vector<SamplePair> train_;
  nn::ParamList params_;
  std::vector<bool> cd_mask_;
  nn::AdamW optimizer_;
  long iteration_ = 0;
  long total_ = 0;
  mutable std::vector<std::vector<std::size_t>> orders_;
};

struct FitOptions {
  std::optional<std::filesystem::path> resume;
  long stop_after = 0;  // > 0: stop once this iteration is reached (the schedule still uses the full length)
  std::function<void(const StepReport&)> on_step;
  bool quiet = false;
};

struct FitResult {
  long iterations = 0;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  double best_mf1 = -1.0;
  std::optional<EvalReport> last_eval;
};

// Reads data.root/{train,val} splits, writes out/train_log.jsonl, out/last.ckpt and out/best.ckpt.
FitResult fit(const RunConfig& cfg, const std::filesystem::path& out_dir, const FitOptions& options = {});

// Model from a checkpoint's embedded config and the encoder it names.
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<JointModel> model;
  std::string meta_json;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, const std::string& encoder_override = "");

std::string file_hash(const std::filesystem::path& path);

}  // namespace regcd
