#include "regcd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

#include "regcd/error.hpp"
#include "regcd/hash.hpp"
#include "regcd/io.hpp"

namespace regcd {

using nlohmann::json;
namespace fs = std::filesystem;

double lambda_cd(long t, const TrainConfig& cfg) {
  if (t <= cfg.warmup) return 0.0;
  const double r = static_cast<double>(t - cfg.warmup) / cfg.ramp;
  return cfg.lambda_max * std::min(1.0, r);
}

double learning_rate(long t, long total, const TrainConfig& cfg) {
  if (total <= 0) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(t - 1) / total, 0.0, 1.0);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

nn::AdamW::Options adam_options(const TrainConfig& t) {
  nn::AdamW::Options o;
  o.weight_decay = t.weight_decay;
  return o;
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend, std::vector<SamplePair> train)
    : cfg_(cfg), model_(cfg, std::move(backend)), train_(std::move(train)) {
  params_ = model_.parameters();
  for (const auto& p : params_) cd_mask_.push_back(!model_.is_cd_parameter(p.name));
  optimizer_ = nn::AdamW(params_, adam_options(cfg.train));
  if (cfg.train.max_iterations > 0)
    total_ = cfg.train.max_iterations;
  else
    total_ = train_.empty() ? 0 : static_cast<long>(cfg.train.epochs) * iterations_per_epoch();
}

long Trainer::iterations_per_epoch() const noexcept {
  const long per = static_cast<long>(cfg_.train.batch) * cfg_.train.accumulation;
  return (static_cast<long>(train_.size()) + per - 1) / per;
}

std::size_t Trainer::sample_index(long t, int j) const {
  const std::size_t n = train_.size();
  const std::size_t g = static_cast<std::size_t>(t - 1) * cfg_.train.batch * cfg_.train.accumulation + j;
  const std::size_t epoch = g / n;
  while (orders_.size() <= epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg_.seed, fnv1a64("order"), orders_.size()));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    orders_.push_back(std::move(order));
  }
  return orders_[epoch][g % n];
}

StepReport Trainer::step() {
  if (train_.empty()) throw ValidationError("training split is empty");
  const long t = iteration_ + 1;
  StepReport rep;
  rep.iteration = t;
  rep.lambda = lambda_cd(t, cfg_.train);
  rep.lr = learning_rate(t, total_, cfg_.train);
  const bool with_cd = rep.lambda > 0.0;
  const int slots = cfg_.train.batch * cfg_.train.accumulation;
  const double inv = 1.0 / slots;
  double cd_sum = 0.0;
  for (int j = 0; j < slots; ++j) {
    const std::uint64_t eps = derive_seed(cfg_.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(j));
    const SamplePair& src = train_[sample_index(t, j)];
    const SamplePair s = cfg_.train.augment ? dihedral(src, static_cast<int>(derive_seed(eps, fnv1a64("augment")) & 7)) : src;
    const ModelOutput out = model_.forward(s, eps, "", with_cd);
    const LossBreakdown l = model_.losses(out, s, rep.lambda);
    const double total = l.total.value()[0];
    if (!std::isfinite(total)) {
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "non-finite loss at iteration %ld: total=%g classification=%g epe_coarse=%g epe_full=%g aux=%g cd=%g",
                    t, total, l.classification, l.epe_coarse, l.epe_full, l.aux, l.cd_value);
      throw NumericError(buf);
    }
    backward(ag::scale(l.total, inv));
    rep.total += total * inv;
    rep.flow += l.flow.value()[0] * inv;
    rep.classification += l.classification * inv;
    rep.epe_coarse += l.epe_coarse * inv;
    rep.epe_full += l.epe_full * inv;
    rep.aux += l.aux * inv;
    if (with_cd) cd_sum += l.cd_value * inv;
  }
  if (with_cd) rep.cd = cd_sum;
  optimizer_.step(params_, rep.lr, 1.0, with_cd ? std::vector<bool>{} : cd_mask_);
  iteration_ = t;
  return rep;
}

void Trainer::save(const fs::path& path, const std::string& meta_json) const {
  nn::TensorArchive ar;
  nn::store_params(ar, params_);
  const auto& mom = optimizer_.moments();
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ar.tensors.emplace_back("adam.m/" + params_[k].name, mom[2 * k]);
    ar.tensors.emplace_back("adam.v/" + params_[k].name, mom[2 * k + 1]);
  }
  json meta = json::parse(meta_json);
  meta["kind"] = "regcd_checkpoint";
  meta["iteration"] = iteration_;
  meta["total_iterations"] = total_;
  meta["adam_steps"] = optimizer_.steps();
  meta["adam_counts"] = optimizer_.counts();
  meta["config"] = json::parse(cfg_.to_json());
  meta["config_hash"] = cfg_.hash();
  ar.header_json = meta.dump();
  save_archive(path, ar);
}

std::string Trainer::restore(const fs::path& path) {
  const nn::TensorArchive ar = nn::load_archive(path);
  const json meta = json::parse(ar.header_json);
  if (meta.value("kind", "") != "regcd_checkpoint") throw ValidationError("'" + path.string() + "' is not a checkpoint");
  if (meta.at("config_hash").get<std::string>() != cfg_.hash())
    throw ValidationError("checkpoint config hash differs from the run config; cannot resume");
  nn::load_params(ar, params_);
  auto& mom = optimizer_.moments();
  for (std::size_t k = 0; k < params_.size(); ++k) {
    mom[2 * k] = ar.get("adam.m/" + params_[k].name);
    mom[2 * k + 1] = ar.get("adam.v/" + params_[k].name);
  }
  optimizer_.set_steps(meta.at("adam_steps").get<std::int64_t>());
  optimizer_.counts() = meta.at("adam_counts").get<std::vector<std::int64_t>>();
  iteration_ = meta.at("iteration").get<long>();
  return ar.header_json;
}

std::string file_hash(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) return "";
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return hex64(fnv1a64(os.str()));
}

namespace {

json step_json(const StepReport& r) {
  json j = {{"iter", r.iteration}, {"lr", r.lr},         {"lambda_cd", r.lambda},         {"loss_total", r.total},
            {"loss_flow", r.flow}, {"loss_cls", r.classification}, {"epe_coarse", r.epe_coarse},
            {"epe_full", r.epe_full}, {"loss_aux", r.aux}};
  j["loss_cd"] = std::isnan(r.cd) ? json(nullptr) : json(r.cd);
  return j;
}

json eval_json(long t, const EvalReport& r) {
  return {{"iter", t},
          {"eval",
           {{"mf1", r.metrics.mf1},
            {"f1_change", r.metrics.f1_change},
            {"oa", r.metrics.oa},
            {"epe_mean", r.epe.mean},
            {"epe_coarse", r.epe_coarse}}}};
}

std::vector<std::string> split_ids(const fs::path& root, const std::string& split, std::size_t n) {
  const DatasetManifest m = read_manifest(root / split);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n && i < m.records.size(); ++i) ids.push_back(m.records[i].id);
  return ids;
}

}  // namespace

FitResult fit(const RunConfig& cfg, const fs::path& out_dir, const FitOptions& opt) {
  cfg.validate();
  fs::create_directories(out_dir);
  const fs::path root = cfg.data.root;
  std::vector<SamplePair> train = load_split(root, cfg.data.train_split);
  const DatasetManifest train_manifest = read_manifest(root / cfg.data.train_split);
  std::vector<SamplePair> val;
  std::vector<std::string> val_ids;
  if (fs::exists(root / cfg.data.val_split / "manifest.json")) {
    val = load_split(root, cfg.data.val_split);
    if (cfg.data.val_limit > 0 && static_cast<int>(val.size()) > cfg.data.val_limit) val.resize(cfg.data.val_limit);
    val_ids = split_ids(root, cfg.data.val_split, val.size());
  }

  Trainer trainer(cfg, make_backend(cfg), std::move(train));
  const json meta = {{"encoder_checkpoint", cfg.encoder.checkpoint},
                     {"encoder_hash", file_hash(cfg.encoder.checkpoint)},
                     {"train_data",
                      {{"generator", train_manifest.generator},
                       {"size", train_manifest.size},
                       {"corpus", train_manifest.corpus},
                       {"config_hash", train_manifest.config_hash}}}};

  FitResult res;
  res.last_checkpoint = out_dir / "last.ckpt";
  res.best_checkpoint = out_dir / "best.ckpt";
  const fs::path log_path = out_dir / "train_log.jsonl";
  long best_iter = -1;

  std::vector<std::string> log_lines;
  if (opt.resume) {
    const json m = json::parse(trainer.restore(*opt.resume));
    res.best_mf1 = m.value("best_mf1", -1.0);
    best_iter = m.value("best_iteration", -1L);
    if (fs::exists(log_path)) {
      std::istringstream in(read_text_file(log_path));
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.contains("header") || j.at("iter").get<long>() <= trainer.iteration()) log_lines.push_back(line);
      }
    }
  } else {
    json header = {{"header",
                    {{"config_hash", cfg.hash()},
                     {"total_iterations", trainer.total_iterations()},
                     {"iterations_per_epoch", trainer.iterations_per_epoch()},
                     {"parameters", nn::count_parameters(trainer.parameters())},
                     {"encoder_hash", meta["encoder_hash"]}}}};
    log_lines.push_back(header.dump());
  }
  std::ofstream log(log_path, std::ios::trunc);
  for (const auto& l : log_lines) log << l << '\n';
  log.flush();

  auto checkpoint_meta = [&]() {
    json m = meta;
    m["best_mf1"] = res.best_mf1;
    m["best_iteration"] = best_iter;
    return m.dump();
  };
  auto run_eval = [&](long t) {
    if (val.empty()) return;
    EvalOptions eo;
    eo.key_prefix = cfg.data.val_split + "/";
    EvalReport r = evaluate_samples(trainer.model(), val, val_ids, eo);
    log << eval_json(t, r).dump() << '\n';
    log.flush();
    if (r.metrics.mf1 > res.best_mf1) {
      res.best_mf1 = r.metrics.mf1;
      best_iter = t;
      trainer.save(res.best_checkpoint, checkpoint_meta());
    }
    res.last_eval = std::move(r);
  };

  const long total = trainer.total_iterations();
  const long stop = opt.stop_after > 0 ? std::min(opt.stop_after, total) : total;
  while (trainer.iteration() < stop) {
    const StepReport r = trainer.step();
    log << step_json(r).dump() << '\n';
    log.flush();
    if (opt.on_step) opt.on_step(r);
    if (!opt.quiet && (r.iteration % 50 == 0 || r.iteration == 1))
      std::fprintf(stderr, "iter %ld/%ld  lr %.2e  lambda %.3f  flow %.4f  cd %.4f  epe %.3f\n", r.iteration, total, r.lr,
                   r.lambda, r.flow, r.cd, r.epe_full);
    const bool at_end = r.iteration == total;
    if ((cfg.train.eval_every > 0 && r.iteration % cfg.train.eval_every == 0) || at_end) run_eval(r.iteration);
    if (cfg.train.checkpoint_every > 0 && r.iteration % cfg.train.checkpoint_every == 0)
      trainer.save(res.last_checkpoint, checkpoint_meta());
  }
  if (total == 0 && !val.empty()) run_eval(0);
  trainer.save(res.last_checkpoint, checkpoint_meta());
  if (!fs::exists(res.best_checkpoint)) trainer.save(res.best_checkpoint, checkpoint_meta());
  res.iterations = trainer.iteration();
  return res;
}

LoadedModel load_model(const fs::path& checkpoint, const std::string& encoder_override) {
  const nn::TensorArchive ar = nn::load_archive(checkpoint);
  const json meta = json::parse(ar.header_json);
  if (meta.value("kind", "") != "regcd_checkpoint")
    throw ValidationError("'" + checkpoint.string() + "' is not a checkpoint");
  LoadedModel lm;
  lm.config = parse_config(meta.at("config").dump());
  if (!encoder_override.empty()) lm.config.encoder.checkpoint = encoder_override;
  lm.model = std::make_unique<JointModel>(lm.config, make_backend(lm.config));
  nn::load_params(ar, lm.model->parameters());
  lm.meta_json = ar.header_json;
  return lm;
}

}  // namespace regcd
