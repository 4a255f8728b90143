#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "regcd/metrics.hpp"
#include "regcd/model.hpp"

namespace regcd {

struct SampleScore {
  std::string id;
  ConfusionCounts counts;
  ChangeMetrics metrics;
  EPEStats epe;
  double epe_coarse = 0.0;
};

struct EvalReport {
  ConfusionCounts counts;  // summed over samples
  ChangeMetrics metrics;
  EPEStats epe;            // pooled over all valid pixels
  double epe_coarse = 0.0;
  double epe_valid_fraction = 0.0;
  int samples = 0;
  std::string config_hash;
  std::vector<SampleScore> per_sample;  // sorted by id
};

struct EvalOptions {
  std::filesystem::path mask_dir;  // predicted masks, skipped when empty
  std::filesystem::path viz_dir;   // panels, skipped when empty
  std::string key_prefix;          // feature lookup key prefix, e.g. "test/"
};

// Fixed evaluation noise, threshold cd.threshold, micro aggregation.
EvalReport evaluate_samples(const JointModel& model, const std::vector<SamplePair>& samples,
                            const std::vector<std::string>& ids, const EvalOptions& options = {});

// Pools per-sample scores; independent of their order.
EvalReport aggregate_scores(std::vector<SampleScore> scores);

std::string report_json(const EvalReport& report, const std::string& extra_meta_json = "{}");
std::string report_csv(const EvalReport& report);

}  // namespace regcd
