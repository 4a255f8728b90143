// Command-line entry point: generate | pretrain | train | eval | viz.
#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "regcd/config.hpp"
#include "regcd/data.hpp"
#include "regcd/error.hpp"
#include "regcd/io.hpp"
#include "regcd/metrics.hpp"
#include "regcd/pipeline.hpp"
#include "regcd/trainer.hpp"

namespace fs = std::filesystem;
using namespace regcd;

namespace {

fs::path default_out(const std::string& sub) {
  const char* env = std::getenv("REGCD_OUT");
  return fs::path(env && *env ? env : "runs") / sub;
}

std::string config_footer() {
  std::string s = "\nConfig keys (JSON, nested by dots) and defaults:\n";
  for (const auto& [k, v] : config_keys()) s += "  " + k + " = " + v + "\n";
  s += "\nEnvironment: REGCD_OUT sets the output root used when --out is omitted (default ./runs).\n";
  s += "Exit codes: 1 usage, 2 validation, 3 numeric/runtime, 4 I/O.\n";
  return s;
}

Interval to_interval(const std::vector<double>& v, const char* flag) {
  if (v.size() != 2) throw UsageError(std::string(flag) + " expects LO HI");
  if (v[0] > v[1]) throw ValidationError(std::string(flag) + ": LO must not exceed HI");
  return {v[0], v[1]};
}

RunConfig read_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint co-registration and change detection on diffusion features"};
  app.require_subcommand(1);
  app.footer(config_footer());

  // generate
  auto* gen = app.add_subcommand("generate", "Synthesize a perturbed pair dataset split");
  std::string corpus = "toy", corpus_dir, gen_out, split = "train";
  int n = 200, size = 64;
  std::uint64_t seed = 0;
  std::vector<double> dx, dy, theta, scale;
  gen->add_option("--corpus", corpus, "toy | dir")->check(CLI::IsMember({"toy", "dir"}));
  gen->add_option("--corpus-dir", corpus_dir, "Directory with a/, b/, mask/ when --corpus dir");
  gen->add_option("--n", n, "Number of pairs");
  gen->add_option("--size", size, "Image side in pixels (multiple of 16)");
  gen->add_option("--seed", seed, "Global seed");
  gen->add_option("--split", split, "Split name (train, val, test, ...)");
  gen->add_option("--out", gen_out, "Dataset root");
  gen->add_option("--dx", dx, "Horizontal translation range LO HI (px)")->expected(2);
  gen->add_option("--dy", dy, "Vertical translation range LO HI (px)")->expected(2);
  gen->add_option("--theta", theta, "Rotation range LO HI (degrees)")->expected(2);
  gen->add_option("--scale", scale, "Isotropic scale range LO HI")->expected(2);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain the toy diffusion encoder on the training split");
  std::string pre_config, pre_out, pre_data;
  int pre_steps = -1;
  pre->add_option("--config", pre_config, "Run config (JSON)");
  pre->add_option("--data", pre_data, "Dataset root (overrides data.root)");
  pre->add_option("--steps", pre_steps, "Overrides encoder.pretrain.steps");
  pre->add_option("--out", pre_out, "Output file for the encoder weights");

  // train
  auto* tr = app.add_subcommand("train", "Train the joint model");
  std::string tr_config, tr_out, ablation = "none", resume;
  tr->add_option("--config", tr_config, "Run config (JSON)")->required();
  tr->add_option("--out", tr_out, "Run directory");
  tr->add_option("--ablation", ablation, "regression | nowarmup")->check(CLI::IsMember({"none", "regression", "nowarmup"}));
  tr->add_option("--resume", resume, "Continue from a checkpoint written by the same config");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out, ev_encoder;
  bool ev_viz = false, ev_force = false;
  int ev_max = 0;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--split", ev_split, "Split name");
  ev->add_option("--out", ev_out, "Report directory");
  ev->add_option("--encoder", ev_encoder, "Encoder weights (overrides the path stored in the checkpoint)");
  ev->add_option("--max-samples", ev_max, "Evaluate only the first N samples");
  ev->add_flag("--viz", ev_viz, "Write one panel PNG per sample");
  ev->add_flag("--force", ev_force, "Evaluate despite a pipeline mismatch (prints a warning)");

  // viz
  auto* vz = app.add_subcommand("viz", "Render ground-truth (and optionally predicted) panels");
  std::string vz_data, vz_split = "test", vz_out, vz_ckpt;
  int vz_limit = 8;
  vz->add_option("--data", vz_data, "Dataset root")->required();
  vz->add_option("--split", vz_split, "Split name");
  vz->add_option("--ckpt", vz_ckpt, "Checkpoint; without it predictions are left blank");
  vz->add_option("--limit", vz_limit, "Number of samples");
  vz->add_option("--out", vz_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      GenerateOptions o;
      o.corpus = corpus;
      o.corpus_dir = corpus_dir;
      o.n = n;
      o.size = size;
      o.seed = seed;
      o.split = split;
      if (!dx.empty()) o.ranges.dx = to_interval(dx, "--dx");
      if (!dy.empty()) o.ranges.dy = to_interval(dy, "--dy");
      if (!theta.empty()) o.ranges.theta_deg = to_interval(theta, "--theta");
      if (!scale.empty()) o.ranges.scale = to_interval(scale, "--scale");
      const fs::path root = gen_out.empty() ? default_out("data") : fs::path(gen_out);
      const DatasetManifest m = generate_dataset(root, o);
      std::printf("%s: %zu samples in %s (config %s)\n", split.c_str(), m.records.size(), (root / split).c_str(),
                  m.config_hash.c_str());
    } else if (*pre) {
      RunConfig cfg = read_config(pre_config);
      if (!pre_data.empty()) cfg.data.root = pre_data;
      if (pre_steps >= 0) cfg.encoder.pretrain.steps = pre_steps;
      const fs::path out = pre_out.empty() ? default_out("encoder") / "encoder.rgcd" : fs::path(pre_out);
      pretrain_encoder(cfg, out);
      std::printf("encoder weights: %s\n", out.c_str());
    } else if (*tr) {
      RunConfig cfg = load_config(tr_config);
      apply_ablation(cfg, ablation);
      const fs::path out = tr_out.empty() ? default_out("train") : fs::path(tr_out);
      FitOptions fo;
      if (!resume.empty()) fo.resume = resume;
      const FitResult r = fit(cfg, out, fo);
      std::printf("trained %ld iterations; last %s, best %s (val mF1 %.4f)\n", r.iterations, r.last_checkpoint.c_str(),
                  r.best_checkpoint.c_str(), r.best_mf1);
    } else if (*ev) {
      EvalRunOptions o;
      o.viz = ev_viz;
      o.force = ev_force;
      o.encoder_override = ev_encoder;
      o.max_samples = ev_max;
      const fs::path out = ev_out.empty() ? default_out("eval") : fs::path(ev_out);
      const EvalReport r = evaluate_checkpoint(ev_ckpt, ev_data, ev_split, out, o);
      std::printf("%d samples: EPE %.4f px, F1(change) %.4f, mF1 %.4f, OA %.4f, mIoU %.4f -> %s\n", r.samples,
                  r.epe.mean, r.metrics.f1_change, r.metrics.mf1, r.metrics.oa, r.metrics.miou,
                  (out / "report.json").c_str());
    } else if (*vz) {
      const fs::path out = vz_out.empty() ? default_out("viz") : fs::path(vz_out);
      if (!vz_ckpt.empty()) {
        EvalRunOptions o;
        o.viz = true;
        o.force = true;
        o.max_samples = vz_limit;
        evaluate_checkpoint(vz_ckpt, vz_data, vz_split, out, o);
      } else {
        const DatasetManifest m = read_manifest(fs::path(vz_data) / vz_split);
        fs::create_directories(out);
        for (int i = 0; i < vz_limit && i < static_cast<int>(m.records.size()); ++i) {
          const SamplePair s = read_sample(fs::path(vz_data) / vz_split, m.records[i].id);
          Tensor blank_flow({2, s.grid().height, s.grid().width});
          visualize({s.image_a, s.image_b, s.flow.uv, blank_flow, s.change, Tensor(s.change.shape())},
                    out / (m.records[i].id + ".png"));
        }
      }
      std::printf("panels in %s\n", out.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", category_name(e.category()), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error (runtime): %s\n", e.what());
    return 3;
  }
  return 0;
}
