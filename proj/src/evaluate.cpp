#include "regcd/evaluate.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "regcd/error.hpp"
#include "regcd/io.hpp"

namespace regcd {

using nlohmann::json;

EvalReport aggregate_scores(std::vector<SampleScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const SampleScore& a, const SampleScore& b) { return a.id < b.id; });
  EvalReport r;
  double epe_sum = 0.0, below1 = 0.0, below3 = 0.0, coarse = 0.0;
  for (const SampleScore& s : scores) {
    r.counts += s.counts;
    epe_sum += s.epe.mean * s.epe.count;
    below1 += s.epe.below1 * s.epe.count;
    below3 += s.epe.below3 * s.epe.count;
    coarse += s.epe_coarse;
    r.epe.count += s.epe.count;
  }
  r.samples = static_cast<int>(scores.size());
  r.metrics = change_metrics(r.counts);
  if (r.epe.count > 0) {
    r.epe.mean = epe_sum / r.epe.count;
    r.epe.below1 = below1 / r.epe.count;
    r.epe.below3 = below3 / r.epe.count;
  }
  if (r.samples > 0) r.epe_coarse = coarse / r.samples;
  r.per_sample = std::move(scores);
  return r;
}

EvalReport evaluate_samples(const JointModel& model, const std::vector<SamplePair>& samples,
                            const std::vector<std::string>& ids, const EvalOptions& options) {
  if (ids.size() != samples.size()) throw ValidationError("evaluate: one id per sample is required");
  NoGradGuard no_grad;
  const RunConfig& cfg = model.config();
  const double to_coarse = 1.0 / static_cast<double>(1 << cfg.flow.coarse_scale);
  if (!options.mask_dir.empty()) std::filesystem::create_directories(options.mask_dir);
  if (!options.viz_dir.empty()) std::filesystem::create_directories(options.viz_dir);
  std::vector<SampleScore> scores;
  std::int64_t pixels = 0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const SamplePair& s = samples[n];
    const ModelOutput out = model.forward(s, model.eval_seed(s), options.key_prefix + ids[n], true);
    const Tensor mask = change_mask(out.cd_logits.value(), cfg.cd.threshold);
    SampleScore sc;
    sc.id = ids[n];
    sc.counts = confusion(mask, s.change, s.flow.valid);
    sc.metrics = change_metrics(sc.counts);
    DenseFlow pred(s.grid());
    pred.uv = out.refined.flow.value();
    sc.epe = flow_epe(pred, s.flow);
    const DenseFlow w_star = scale_flow(s.flow, to_coarse);
    DenseFlow coarse_pred(w_star.grid());
    coarse_pred.uv = out.coarse_flow.value();
    try {
      sc.epe_coarse = flow_epe(coarse_pred, w_star).mean;
    } catch (const ValidationError&) {
      sc.epe_coarse = 0.0;
    }
    pixels += static_cast<std::int64_t>(s.flow.valid.size());
    if (!options.mask_dir.empty()) write_mask_png(options.mask_dir / (ids[n] + ".png"), mask);
    if (!options.viz_dir.empty())
      visualize({s.image_a, s.image_b, s.flow.uv, pred.uv, s.change, mask}, options.viz_dir / (ids[n] + ".png"));
    scores.push_back(sc);
  }
  EvalReport r = aggregate_scores(std::move(scores));
  r.epe_valid_fraction = pixels > 0 ? static_cast<double>(r.epe.count) / pixels : 0.0;
  r.config_hash = cfg.hash();
  return r;
}

std::string report_json(const EvalReport& r, const std::string& extra_meta_json) {
  const auto& m = r.metrics;
  json j = {{"schema", "regcd-report/1"},
            {"aggregation", "micro (confusion counts summed over samples; EPE pooled over valid pixels)"},
            {"degenerate_ratio", "0/0 reported as 0"},
            {"config_hash", r.config_hash},
            {"samples", r.samples},
            {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
            {"oa", m.oa},
            {"precision_change", m.precision_change},
            {"recall_change", m.recall_change},
            {"f1_change", m.f1_change},
            {"f1_nochange", m.f1_nochange},
            {"iou_change", m.iou_change},
            {"iou_nochange", m.iou_nochange},
            {"mf1", m.mf1},
            {"miou", m.miou},
            {"epe_mean", r.epe.mean},
            {"epe_below_1px", r.epe.below1},
            {"epe_below_3px", r.epe.below3},
            {"epe_coarse_mean", r.epe_coarse},
            {"epe_valid_fraction", r.epe_valid_fraction},
            {"meta", json::parse(extra_meta_json)}};
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "id,tp,fp,fn,tn,oa,f1_change,f1_nochange,mf1,miou,change_degenerate,epe_mean,epe_below_1px,epe_below_3px,"
        "epe_coarse\n";
  for (const SampleScore& s : r.per_sample) {
    const bool degenerate = s.counts.tp + s.counts.fp + s.counts.fn == 0;
    os << s.id << ',' << s.counts.tp << ',' << s.counts.fp << ',' << s.counts.fn << ',' << s.counts.tn << ','
       << s.metrics.oa << ',' << s.metrics.f1_change << ',' << s.metrics.f1_nochange << ',' << s.metrics.mf1 << ','
       << s.metrics.miou << ',' << (degenerate ? 1 : 0) << ',' << s.epe.mean << ',' << s.epe.below1 << ','
       << s.epe.below3 << ',' << s.epe_coarse << '\n';
  }
  return os.str();
}

}  // namespace regcd
