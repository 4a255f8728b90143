#include "regcd/config.hpp"

#include <algorithm>
#include <json.hpp>

#include "regcd/error.hpp"
#include "regcd/hash.hpp"
#include "regcd/io.hpp"

namespace regcd {

using nlohmann::json;

namespace {

json to_tree(const RunConfig& c) {
  const auto& e = c.encoder;
  const auto& f = c.flow;
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"data",
       {{"root", c.data.root},
        {"train_split", c.data.train_split},
        {"val_split", c.data.val_split},
        {"test_split", c.data.test_split},
        {"val_limit", c.data.val_limit}}},
      {"encoder",
       {{"variant", e.variant},
        {"checkpoint", e.checkpoint},
        {"import_dir", e.import_dir},
        {"timesteps", e.timesteps},
        {"widths", e.widths},
        {"registration_timestep", e.registration_timestep},
        {"noise_seed", e.noise_seed},
        {"denoiser",
         {{"widths", e.denoiser.widths},
          {"embed_dim", e.denoiser.embed_dim},
          {"schedule_steps", e.denoiser.schedule_steps},
          {"beta_start", e.denoiser.beta_start},
          {"beta_end", e.denoiser.beta_end}}},
        {"pretrain", {{"steps", e.pretrain.steps}, {"batch", e.pretrain.batch}, {"lr", e.pretrain.lr}}}}},
      {"matcher",
       {{"num_features", c.matcher.num_features}, {"length_scale", c.matcher.length_scale}, {"seed", c.matcher.seed}}},
      {"flow",
       {{"r", f.r},
        {"delta", f.delta},
        {"sigma", f.sigma},
        {"tau", f.tau},
        {"alpha", f.alpha},
        {"blocks", f.blocks},
        {"width", f.width},
        {"heads", f.heads},
        {"mlp_ratio", f.mlp_ratio},
        {"refine_hidden", f.refine_hidden},
        {"refine_radius", f.refine_radius},
        {"coarse_scale", f.coarse_scale},
        {"refine_scale", f.refine_scale},
        {"refine_weight", f.refine_weight},
        {"aux_weight", f.aux_weight}}},
      {"cd", {{"se_ratio", c.cd.se_ratio}, {"decoder_widths", c.cd.decoder_widths}, {"threshold", c.cd.threshold}}},
      {"train",
       {{"warmup", t.warmup},
        {"ramp", t.ramp},
        {"lambda_max", t.lambda_max},
        {"lr", t.lr},
        {"lr_min", t.lr_min},
        {"weight_decay", t.weight_decay},
        {"accumulation", t.accumulation},
        {"batch", t.batch},
        {"epochs", t.epochs},
        {"max_iterations", t.max_iterations},
        {"eval_every", t.eval_every},
        {"checkpoint_every", t.checkpoint_every},
        {"ablation", t.ablation},
        {"augment", t.augment}}},
      {"eval", {{"max_samples", c.eval.max_samples}}},
  };
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  out = j.at(key).get<T>();
}

RunConfig from_tree(const json& j) {
  RunConfig c;
  get(j, "seed", c.seed);
  const json& d = j.at("data");
  get(d, "root", c.data.root);
  get(d, "train_split", c.data.train_split);
  get(d, "val_split", c.data.val_split);
  get(d, "test_split", c.data.test_split);
  get(d, "val_limit", c.data.val_limit);
  const json& e = j.at("encoder");
  get(e, "variant", c.encoder.variant);
  get(e, "checkpoint", c.encoder.checkpoint);
  get(e, "import_dir", c.encoder.import_dir);
  get(e, "timesteps", c.encoder.timesteps);
  get(e, "widths", c.encoder.widths);
  get(e, "registration_timestep", c.encoder.registration_timestep);
  get(e, "noise_seed", c.encoder.noise_seed);
  const json& dn = e.at("denoiser");
  get(dn, "widths", c.encoder.denoiser.widths);
  get(dn, "embed_dim", c.encoder.denoiser.embed_dim);
  get(dn, "schedule_steps", c.encoder.denoiser.schedule_steps);
  get(dn, "beta_start", c.encoder.denoiser.beta_start);
  get(dn, "beta_end", c.encoder.denoiser.beta_end);
  const json& p = e.at("pretrain");
  get(p, "steps", c.encoder.pretrain.steps);
  get(p, "batch", c.encoder.pretrain.batch);
  get(p, "lr", c.encoder.pretrain.lr);
  const json& m = j.at("matcher");
  get(m, "num_features", c.matcher.num_features);
  get(m, "length_scale", c.matcher.length_scale);
  get(m, "seed", c.matcher.seed);
  const json& f = j.at("flow");
  get(f, "r", c.flow.r);
  get(f, "delta", c.flow.delta);
  get(f, "sigma", c.flow.sigma);
  get(f, "tau", c.flow.tau);
  get(f, "alpha", c.flow.alpha);
  get(f, "blocks", c.flow.blocks);
  get(f, "width", c.flow.width);
  get(f, "heads", c.flow.heads);
  get(f, "mlp_ratio", c.flow.mlp_ratio);
  get(f, "refine_hidden", c.flow.refine_hidden);
  get(f, "refine_radius", c.flow.refine_radius);
  get(f, "coarse_scale", c.flow.coarse_scale);
  get(f, "refine_scale", c.flow.refine_scale);
  get(f, "refine_weight", c.flow.refine_weight);
  get(f, "aux_weight", c.flow.aux_weight);
  const json& cd = j.at("cd");
  get(cd, "se_ratio", c.cd.se_ratio);
  get(cd, "decoder_widths", c.cd.decoder_widths);
  get(cd, "threshold", c.cd.threshold);
  const json& t = j.at("train");
  get(t, "warmup", c.train.warmup);
  get(t, "ramp", c.train.ramp);
  get(t, "lambda_max", c.train.lambda_max);
  get(t, "lr", c.train.lr);
  get(t, "lr_min", c.train.lr_min);
  get(t, "weight_decay", c.train.weight_decay);
  get(t, "accumulation", c.train.accumulation);
  get(t, "batch", c.train.batch);
  get(t, "epochs", c.train.epochs);
  get(t, "max_iterations", c.train.max_iterations);
  get(t, "eval_every", c.train.eval_every);
  get(t, "checkpoint_every", c.train.checkpoint_every);
  get(t, "ablation", c.train.ablation);
  get(t, "augment", c.train.augment);
  get(j.at("eval"), "max_samples", c.eval.max_samples);
  return c;
}

bool same_kind(const json& def, const json& val) {
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_unsigned()) return val.is_number_unsigned() || (val.is_number_integer() && val.get<std::int64_t>() >= 0);
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_array()) {
    if (!val.is_array()) return false;
    for (const auto& v : val)
      if (!v.is_number_integer()) return false;
    return true;
  }
  return def.type() == val.type();
}

void merge_strict(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ValidationError("config section '" + prefix + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value()))
        throw ValidationError("config key '" + key + "' expects " + std::string(slot.type_name()) + ", got " +
                              it.value().dump());
      slot = it.value();
    }
  }
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object())
      flatten(it.value(), key, out);
    else
      out.emplace_back(key, it.value().dump());
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("invalid config: " + what);
}

}  // namespace

std::string RunConfig::to_json() const { return to_tree(*this).dump(2); }

std::string RunConfig::hash() const { return hex64(fnv1a64(to_tree(*this).dump())); }

int RunConfig::registration_index() const {
  const auto& ts = encoder.timesteps;
  if (encoder.registration_timestep < 0)
    return static_cast<int>(std::max_element(ts.begin(), ts.end()) - ts.begin());
  const auto it = std::find(ts.begin(), ts.end(), encoder.registration_timestep);
  if (it == ts.end()) throw ValidationError("encoder.registration_timestep must be one of encoder.timesteps");
  return static_cast<int>(it - ts.begin());
}

void RunConfig::validate() const {
  require(encoder.variant == "toy" || encoder.variant == "import", "encoder.variant must be toy or import");
  require(!encoder.timesteps.empty(), "encoder.timesteps must not be empty");
  for (int t : encoder.timesteps)
    require(t >= 0 && t < encoder.denoiser.schedule_steps, "encoder.timesteps outside the noise schedule");
  require(encoder.widths.size() == static_cast<std::size_t>(kPyramidScales), "encoder.widths needs 5 entries");
  require(cd.decoder_widths.size() == static_cast<std::size_t>(kPyramidScales), "cd.decoder_widths needs 5 entries");
  registration_index();
  require(matcher.num_features > 0 && matcher.length_scale > 0, "matcher sizes must be positive");
  require(flow.r >= 1 && flow.r % 2 == 1, "flow.r must be a positive odd integer");
  require(flow.delta > 0 && flow.sigma > 0 && flow.tau > 0 && flow.alpha >= 0, "flow.delta/sigma/tau must be > 0");
  require(flow.width % 4 == 0 && flow.heads > 0 && flow.width % flow.heads == 0,
          "flow.width must be a multiple of 4 and of flow.heads");
  require(flow.coarse_scale >= 1 && flow.coarse_scale < kPyramidScales, "flow.coarse_scale must be in 1..4");
  require(flow.refine_scale >= 0 && flow.refine_scale < flow.coarse_scale, "flow.refine_scale must be finer than coarse");
  require(cd.threshold > 0 && cd.threshold < 1, "cd.threshold must be in (0, 1)");
  require(train.warmup >= 0 && train.ramp >= 1 && train.lambda_max > 0, "train.warmup >= 0, ramp >= 1, lambda_max > 0");
  require(train.batch >= 1 && train.accumulation >= 1 && train.epochs >= 0 && train.max_iterations >= 0,
          "train batch/accumulation must be >= 1");
  require(train.lr > 0 && train.lr_min >= 0 && train.lr_min <= train.lr, "train.lr_min must lie in [0, lr]");
  require(train.ablation == "none" || train.ablation == "regression" || train.ablation == "nowarmup",
          "train.ablation must be none, regression or nowarmup");
}

RunConfig parse_config(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  json tree = to_tree(RunConfig{});
  merge_strict(tree, user, "");
  RunConfig cfg;
  try {
    cfg = from_tree(tree);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config '" + path.string() + "' does not exist");
  return parse_config(read_text_file(path));
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  flatten(to_tree(RunConfig{}), "", out);
  return out;
}

void apply_ablation(RunConfig& cfg, const std::string& ablation) {
  if (ablation == "none") return;
  if (ablation == "nowarmup") {
    cfg.train.warmup = 0;
    cfg.train.ramp = 1;
  } else if (ablation != "regression") {
    throw ValidationError("unknown ablation '" + ablation + "' (expected regression or nowarmup)");
  }
  cfg.train.ablation = ablation;
}

}  // namespace regcd
