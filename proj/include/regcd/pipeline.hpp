#pragma once

#include <filesystem>
#include <string>

#include "regcd/config.hpp"
#include "regcd/evaluate.hpp"

namespace regcd {

// Pretrains the toy denoiser on every image (A and B) of the training split
// and writes it to out_file; the loss trace goes to pretrain_log.jsonl next to it.
void pretrain_encoder(const RunConfig& cfg, const std::filesystem::path& out_file, bool quiet = false);

struct EvalRunOptions {
  bool viz = false;
  bool force = false;
  std::string encoder_override;
  int max_samples = 0;
};

// Writes report.json, per_sample.csv and masks/<id>.png (and viz/<id>.png) under out_dir.
// A mismatch between the checkpoint's recorded pipeline and the data/encoder is a
// ValidationError unless `force` is set, in which case it is reported as a warning.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root,
                               const std::string& split, const std::filesystem::path& out_dir,
                               const EvalRunOptions& options = {});

}  // namespace regcd
