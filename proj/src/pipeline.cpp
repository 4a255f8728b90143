#include "regcd/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "regcd/error.hpp"
#include "regcd/io.hpp"
#include "regcd/trainer.hpp"

namespace regcd {

using nlohmann::json;
namespace fs = std::filesystem;

void pretrain_encoder(const RunConfig& cfg, const fs::path& out_file, bool quiet) {
  const std::vector<SamplePair> train = load_split(cfg.data.root, cfg.data.train_split);
  std::vector<Tensor> images;
  for (const SamplePair& s : train) {
    images.push_back(s.image_a);
    images.push_back(s.image_b);
  }
  ToyDenoiser model(cfg.encoder.denoiser, derive_seed(cfg.seed, 0x656e63));
  PretrainOptions opts = cfg.encoder.pretrain;
  opts.seed = derive_seed(cfg.seed, 0x707265);
  if (!out_file.parent_path().empty()) fs::create_directories(out_file.parent_path());
  std::ofstream log(out_file.parent_path() / "pretrain_log.jsonl", std::ios::trunc);
  pretrain_toy_denoiser(model, images, opts, [&](int step, double loss) {
    log << json{{"step", step}, {"loss", loss}}.dump() << '\n';
    if (!quiet && (step % 50 == 0 || step == 1)) std::fprintf(stderr, "pretrain %d/%d  loss %.5f\n", step, opts.steps, loss);
  });
  model.save(out_file);
}

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_root, const std::string& split,
                               const fs::path& out_dir, const EvalRunOptions& options) {
  LoadedModel lm = load_model(checkpoint, options.encoder_override);
  const json meta = json::parse(lm.meta_json);
  const DatasetManifest manifest = read_manifest(data_root / split);

  std::vector<std::string> problems;
  const auto& td = meta.at("train_data");
  if (td.at("size").get<int>() != manifest.size)
    problems.push_back("image size " + std::to_string(manifest.size) + " differs from training size " +
                       std::to_string(td.at("size").get<int>()));
  if (td.at("generator").get<std::string>() != manifest.generator)
    problems.push_back("dataset generator '" + manifest.generator + "' differs from '" +
                       td.at("generator").get<std::string>() + "'");
  if (lm.config.encoder.variant == "toy") {
    const std::string h = file_hash(lm.config.encoder.checkpoint);
    if (h != meta.at("encoder_hash").get<std::string>())
      problems.push_back("encoder weights '" + lm.config.encoder.checkpoint + "' hash " + h +
                         " differ from the training encoder " + meta.at("encoder_hash").get<std::string>());
  }
  for (const auto& p : problems) {
    if (!options.force) throw ValidationError("pipeline mismatch: " + p + " (pass --force to evaluate anyway)");
    std::fprintf(stderr, "warning: pipeline mismatch: %s\n", p.c_str());
  }

  std::vector<SamplePair> samples = load_split(data_root, split);
  std::vector<std::string> ids;
  for (const auto& r : manifest.records) ids.push_back(r.id);
  const int limit = options.max_samples > 0 ? options.max_samples : lm.config.eval.max_samples;
  if (limit > 0 && static_cast<int>(samples.size()) > limit) {
    samples.resize(limit);
    ids.resize(limit);
  }
  fs::create_directories(out_dir);
  EvalOptions eo;
  eo.mask_dir = out_dir / "masks";
  if (options.viz) eo.viz_dir = out_dir / "viz";
  eo.key_prefix = split + "/";
  const EvalReport report = evaluate_samples(*lm.model, samples, ids, eo);
  const json extra = {{"checkpoint", checkpoint.string()},
                      {"iteration", meta.at("iteration")},
                      {"data", data_root.string()},
                      {"split", split},
                      {"dataset_config_hash", manifest.config_hash},
                      {"threshold", lm.config.cd.threshold},
                      {"warnings", problems}};
  write_text_file(out_dir / "report.json", report_json(report, extra.dump()));
  write_text_file(out_dir / "per_sample.csv", report_csv(report));
  return report;
}

}  // namespace regcd
