#include "regcd/encoder.hpp"

#include <cmath>
#include <json.hpp>
#include <numbers>

#include "regcd/error.hpp"
#include "regcd/io.hpp"
#include "regcd/ops.hpp"

namespace regcd {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("noise schedule needs at least one step");
  std::vector<double> beta(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    beta[static_cast<std::size_t>(i)] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
  return from_betas(std::move(beta));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> beta) {
  if (beta.empty()) throw ValidationError("noise schedule needs at least one step");
  NoiseSchedule s;
  double acc = 1.0;
  for (std::size_t i = 0; i < beta.size(); ++i) {
    if (!(beta[i] > 0.0 && beta[i] <= 1.0)) throw ValidationError("noise schedule betas must lie in (0, 1]");
    if (i > 0 && beta[i] < beta[i - 1]) throw ValidationError("noise schedule betas must be nondecreasing");
    acc *= 1.0 - beta[i];
    s.alpha_bar.push_back(acc);
  }
  s.beta = std::move(beta);
  return s;
}

Tensor standard_noise(const Shape& shape, std::uint64_t seed) {
  Tensor eps(shape);
  Rng rng(seed);
  rng.fill_normal(eps.values());
  return eps;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.steps())
    throw ValidationError("timestep " + std::to_string(t) + " outside schedule [0, " +
                          std::to_string(schedule.steps()) + ")");
  if (!eps.same_shape(x0)) throw ValidationError("forward_noise: noise shape mismatch");
  const double a = schedule.alpha_bar[static_cast<std::size_t>(t)];
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor xt(x0.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = sa * (2.0 * x0[i] - 1.0) + sn * eps[i];
  return xt;
}

Tensor forward_noise(const Tensor& x0, int t, std::uint64_t eps_seed, const NoiseSchedule& schedule) {
  return forward_noise(x0, t, standard_noise(x0.shape(), eps_seed), schedule);
}

Tensor timestep_embedding(double t, int dim) {
  Tensor e({dim});
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
    e[static_cast<std::size_t>(k)] = std::sin(t * freq);
    e[static_cast<std::size_t>(k + half)] = std::cos(t * freq);
  }
  return e;
}

ToyDenoiser::ToyDenoiser(const ToyDenoiserConfig& config, std::uint64_t seed)
    : config_(config), schedule_(NoiseSchedule::linear(config.schedule_steps, config.beta_start, config.beta_end)) {
  if (config_.widths.size() != kPyramidScales) throw ValidationError("encoder needs five raw widths");
  for (int w : config_.widths)
    if (w < 1) throw ValidationError("encoder widths must be positive");
  Rng rng(seed);
  int total = 0;
  for (int w : config_.widths) total += w;
  time_ = nn::Linear(config_.embed_dim, total, rng, 0.5);
  int in = 3;
  for (int i = 0; i < kPyramidScales; ++i) {
    const int w = config_.widths[static_cast<std::size_t>(i)];
    down_a_.emplace_back(in, w, 3, i == 0 ? 1 : 2, rng);
    down_b_.emplace_back(w, w, 3, 1, rng);
    in = w;
  }
  for (int i = kPyramidScales - 2; i >= 0; --i) {
    const int w = config_.widths[static_cast<std::size_t>(i)];
    up_.emplace_back(config_.widths[static_cast<std::size_t>(i + 1)] + w, w, 3, 1, rng);
  }
  out_ = nn::Conv2d(config_.widths[0], 3, 1, 1, rng);
}

std::vector<Var> ToyDenoiser::encode_levels(const Var& x_t, int t) const {
  const Var emb = ag::constant(timestep_embedding(t, config_.embed_dim).reshaped({config_.embed_dim, 1}));
  const Var bias = time_(emb);
  std::vector<Var> levels;
  Var h = x_t;
  int offset = 0;
  for (int i = 0; i < kPyramidScales; ++i) {
    const int w = config_.widths[static_cast<std::size_t>(i)];
    const Var b = ag::reshape(ag::slice_channels(bias, offset, offset + w), {w});
    offset += w;
    h = ag::relu(ag::add_channel(down_a_[static_cast<std::size_t>(i)](h), b));
    h = ag::relu(down_b_[static_cast<std::size_t>(i)](h));
    levels.push_back(h);
  }
  return levels;
}

std::vector<Var> ToyDenoiser::encode(const Var& x_t, int t) const { return encode_levels(x_t, t); }

Var ToyDenoiser::predict_noise(const Var& x_t, int t) const {
  const auto levels = encode_levels(x_t, t);
  Var h = levels.back();
  for (int i = kPyramidScales - 2, k = 0; i >= 0; --i, ++k) {
    const Var& skip = levels[static_cast<std::size_t>(i)];
    const Var up = ag::resize_bilinear(h, skip.value().dim(1), skip.value().dim(2));
    const Var parts[] = {up, skip};
    h = ag::relu(up_[static_cast<std::size_t>(k)](ag::concat_channels(parts)));
  }
  return out_(h);
}

nn::ParamList ToyDenoiser::parameters() const {
  nn::ParamList p;
  time_.collect(p, "encoder.time");
  for (std::size_t i = 0; i < down_a_.size(); ++i) {
    down_a_[i].collect(p, "encoder.down" + std::to_string(i) + "a");
    down_b_[i].collect(p, "encoder.down" + std::to_string(i) + "b");
  }
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(p, "encoder.up" + std::to_string(i));
  out_.collect(p, "encoder.out");
  return p;
}

void ToyDenoiser::save(const std::filesystem::path& path) const {
  nn::TensorArchive a;
  const nlohmann::json meta = {{"kind", "toy_denoiser"},
                               {"widths", config_.widths},
                               {"embed_dim", config_.embed_dim},
                               {"schedule",
                                {{"steps", config_.schedule_steps},
                                 {"beta_start", config_.beta_start},
                                 {"beta_end", config_.beta_end}}}};
  a.header_json = meta.dump();
  nn::store_params(a, parameters());
  save_archive(path, a);
}

ToyDenoiser ToyDenoiser::load(const std::filesystem::path& path) {
  const nn::TensorArchive a = nn::load_archive(path);
  ToyDenoiserConfig cfg;
  try {
    const auto meta = nlohmann::json::parse(a.header_json);
    if (meta.at("kind") != "toy_diffusion" && meta.at("kind") != "toy_denoiser")
      throw ValidationError("'" + path.string() + "' is not an encoder checkpoint");
    cfg.widths = meta.at("widths").get<std::vector<int>>();
    cfg.embed_dim = meta.at("embed_dim").get<int>();
    cfg.schedule_steps = meta.at("schedule").at("steps").get<int>();
    cfg.beta_start = meta.at("schedule").at("beta_start").get<double>();
    cfg.beta_end = meta.at("schedule").at("beta_end").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError("encoder checkpoint '" + path.string() + "': " + e.what(), 16);
  }
  ToyDenoiser model(cfg, 0);
  nn::load_params(a, model.parameters());
  return model;
}

std::vector<double> pretrain_toy_denoiser(ToyDenoiser& model, const std::vector<Tensor>& images,
                                          const PretrainOptions& o, const std::function<void(int, double)>& on_step) {
  if (o.steps > 0 && images.empty()) throw ValidationError("pretraining corpus is empty");
  if (o.batch < 1) throw ValidationError("pretraining batch must be >= 1");
  const nn::ParamList params = model.parameters();
  nn::AdamW opt(params, {0.9, 0.999, 1e-8, 0.0});
  std::vector<double> losses;
  for (int step = 0; step < o.steps; ++step) {
    double total = 0.0;
    for (int b = 0; b < o.batch; ++b) {
      Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
      const Tensor& x0 = images[rng.below(images.size())];
      const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(model.schedule().steps())));
      const Tensor eps = standard_noise(x0.shape(), rng.next());
      const Var xt = ag::constant(forward_noise(x0, t, eps, model.schedule()));
      const Var loss = ag::mean(ag::square(ag::sub(model.predict_noise(xt, t), ag::constant(eps))));
      const double v = loss.value()[0];
      if (!std::isfinite(v))
        throw NumericError("denoiser pretraining diverged at step " + std::to_string(step) + " (timestep " +
                           std::to_string(t) + ", loss " + std::to_string(v) + ")");
      total += v;
      backward(loss);
    }
    opt.step(params, o.lr, 1.0 / o.batch);
    losses.push_back(total / o.batch);
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

namespace {

void check_divisible(const Tensor& image) {
  if (image.rank() != 3 || image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
    throw ValidationError("image dimensions must be divisible by 16, got " + shape_str(image.shape()));
}

}  // namespace

FeaturePyramid ToyBackend::extract(const Tensor& image, const std::vector<int>& timesteps, std::uint64_t eps_seed,
                                   const std::string&) const {
  check_divisible(image);
  NoGradGuard no_grad;
  FeaturePyramid p;
  p.timesteps = timesteps;
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const int t = timesteps[k];
    const Tensor xt = forward_noise(image, t, derive_seed(eps_seed, static_cast<std::uint64_t>(t)), model_->schedule());
    auto levels = model_->encode(ag::constant(xt), t);
    for (auto& l : levels) l = ag::constant(l.value());
    p.features.push_back(std::move(levels));
  }
  return p;
}

ImportBackend::ImportBackend(std::filesystem::path dir, std::vector<int> channels)
    : dir_(std::move(dir)), channels_(std::move(channels)) {
  if (channels_.size() != kPyramidScales) throw ValidationError("import backend needs five channel counts");
}

FeaturePyramid ImportBackend::extract(const Tensor& image, const std::vector<int>& timesteps, std::uint64_t,
                                      const std::string& key) const {
  check_divisible(image);
  FeaturePyramid p;
  p.timesteps = timesteps;
  for (int t : timesteps) {
    std::vector<Var> levels;
    for (int i = 0; i < kPyramidScales; ++i) {
      const auto path = dir_ / key / ("t" + std::to_string(t) + "_s" + std::to_string(i) + ".fea");
      Tensor f = read_feature_file(path);
      if (f.dim(0) != channels_[static_cast<std::size_t>(i)] || f.dim(1) != image.dim(1) >> i ||
          f.dim(2) != image.dim(2) >> i)
        throw ValidationError("imported feature '" + path.string() + "' has shape " + shape_str(f.shape()));
      levels.push_back(ag::constant(std::move(f)));
    }
    p.features.push_back(std::move(levels));
  }
  return p;
}

Harmonizer::Harmonizer(const std::vector<int>& raw, const std::vector<int>& widths, Rng& rng) : widths_(widths) {
  if (raw.size() != kPyramidScales || widths.size() != kPyramidScales)
    throw ValidationError("harmonizer needs five raw and five target widths");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    proj_.push_back(nn::parameter(nn::normal_tensor({widths[i], raw[i]}, rng, 1.0 / std::sqrt(raw[i]))));
    norm_.emplace_back(widths[i]);
  }
}

Var Harmonizer::project(const Var& raw, int scale) const {
  const auto i = static_cast<std::size_t>(scale);
  return norm_[i](ag::linear(raw, proj_[i], Var()));
}

FeaturePyramid Harmonizer::operator()(const FeaturePyramid& raw) const {
  if (raw.harmonized) throw ValidationError("pyramid is already harmonized");
  FeaturePyramid out;
  out.timesteps = raw.timesteps;
  out.harmonized = true;
  for (const auto& levels : raw.features) {
    if (levels.size() != proj_.size()) throw ValidationError("pyramid scale count mismatch");
    std::vector<Var> h;
    for (std::size_t i = 0; i < levels.size(); ++i) h.push_back(project(levels[i], static_cast<int>(i)));
    out.features.push_back(std::move(h));
  }
  return out;
}

void Harmonizer::set_identity() {
  for (std::size_t i = 0; i < proj_.size(); ++i) {
    Tensor& w = proj_[i].mutable_value();
    if (w.dim(0) != w.dim(1)) throw ValidationError("identity projection requires D_i == C_i");
    w.fill(0.0);
    for (int k = 0; k < w.dim(0); ++k) w[static_cast<std::size_t>(k) * w.dim(1) + k] = 1.0;
    norm_[i].gamma.mutable_value().fill(1.0);
    norm_[i].beta.mutable_value().fill(0.0);
  }
}

nn::ParamList Harmonizer::parameters() const {
  nn::ParamList p;
  for (std::size_t i = 0; i < proj_.size(); ++i) {
    p.push_back({"harmonize.proj" + std::to_string(i), proj_[i]});
    norm_[i].collect(p, "harmonize.norm" + std::to_string(i));
  }
  return p;
}

}  // namespace regcd
