#include "regcd/model.hpp"

#include "regcd/error.hpp"
#include "regcd/hash.hpp"
#include "regcd/ops.hpp"

namespace regcd {

namespace {

constexpr std::uint64_t kModelStream = fnv1a64("model");

struct InitRng {
  Rng rng;
  explicit InitRng(std::uint64_t seed) : rng(derive_seed(seed, kModelStream)) {}
};

}  // namespace

std::shared_ptr<const EncoderBackend> make_backend(const RunConfig& cfg) {
  if (cfg.encoder.variant == "import") {
    if (cfg.encoder.import_dir.empty()) throw ValidationError("encoder.import_dir is required for the import backend");
    return std::make_shared<ImportBackend>(cfg.encoder.import_dir, cfg.encoder.denoiser.widths);
  }
  if (cfg.encoder.checkpoint.empty()) throw ValidationError("encoder.checkpoint is required (run `pretrain` first)");
  auto model = std::make_shared<const ToyDenoiser>(ToyDenoiser::load(cfg.encoder.checkpoint));
  return std::make_shared<ToyBackend>(std::move(model));
}

JointModel::JointModel(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend)
    : JointModel([&] {
        cfg.validate();
        return cfg;
      }(),
                 std::move(backend), InitRng(cfg.seed).rng) {}

JointModel::JointModel(const RunConfig& cfg, std::shared_ptr<const EncoderBackend> backend, Rng&& rng)
    : harmonizer(backend->channels(), cfg.encoder.widths, rng),
      fourier(cfg.encoder.widths[cfg.flow.coarse_scale], cfg.matcher.num_features, cfg.matcher.length_scale,
              cfg.matcher.seed),
      decoder(cfg.flow.r * cfg.flow.r + cfg.encoder.widths[cfg.flow.coarse_scale], cfg.flow.width, cfg.flow.blocks,
              cfg.flow.heads, cfg.flow.r * cfg.flow.r, cfg.flow.mlp_ratio, rng),
      refiner(cfg.encoder.widths[cfg.flow.refine_scale], cfg.flow.refine_hidden, cfg.flow.refine_radius, rng),
      cd(cfg.encoder.widths, static_cast<int>(cfg.encoder.timesteps.size()), cfg.cd, rng),
      cfg_(cfg),
      backend_(std::move(backend)),
      lattice_(cfg.flow.r, cfg.flow.delta),
      reg_index_(cfg.registration_index()) {}

FeaturePyramid JointModel::features(const Tensor& image, std::uint64_t eps_seed, const std::string& key) const {
  return harmonizer(backend_->extract(image, cfg_.encoder.timesteps, eps_seed, key));
}

ModelOutput JointModel::forward(const FeaturePyramid& fa, const FeaturePyramid& fb, bool with_cd) const {
  const int cs = cfg_.flow.coarse_scale, rs = cfg_.flow.refine_scale;
  const std::size_t k = static_cast<std::size_t>(reg_index_);
  ModelOutput out;
  out.volume = build_volume(fa.at(k, cs), fb.at(k, cs), lattice_, fourier);
  const auto dec = decoder.decode(out.volume, fa.at(k, cs));
  out.logits = dec.logits;
  out.aux = dec.aux;
  out.coarse_flow = argsoftmax_decode(flow_probabilities(dec.logits, cfg_.flow.tau), lattice_);
  const Tensor& full = fa.at(0, 0).value();
  out.refined = refiner(out.coarse_flow, fa.at(k, rs), fb.at(k, rs), full.dim(1), full.dim(2));
  if (with_cd) {
    const AlignedPyramid aligned = align_features(fb, out.refined.flow);
    out.cd_logits = cd(fa, aligned);
    out.covered = aligned.covered[0];
  }
  return out;
}

ModelOutput JointModel::forward(const SamplePair& s, std::uint64_t eps_seed, const std::string& key, bool with_cd) const {
  const FeaturePyramid fa = features(s.image_a, derive_seed(eps_seed, 0), key + "/a");
  const FeaturePyramid fb = features(s.image_b, derive_seed(eps_seed, 1), key + "/b");
  return forward(fa, fb, with_cd);
}

LossBreakdown JointModel::losses(const ModelOutput& out, const SamplePair& s, double lambda_cd) const {
  const int cs = cfg_.flow.coarse_scale;
  const double to_coarse = 1.0 / static_cast<double>(1 << cs);
  const DenseFlow w_star = scale_flow(s.flow, to_coarse);
  const FlowObjective objective = cfg_.train.ablation == "regression" ? FlowObjective::regression : FlowObjective::kl;
  const FlowLossTerms fl = flow_loss(out.logits, w_star.uv, w_star.valid, lattice_, cfg_.flow, objective);

  const GaussianTarget target = gaussian_target(w_star.uv, lattice_, cfg_.flow.sigma);
  Tensor certain(w_star.valid.shape());
  for (std::size_t i = 0; i < certain.size(); ++i) certain[i] = w_star.valid[i] * target.in_range[i];
  const Var aux = ag::bce_with_logits(out.aux, certain, Tensor(certain.shape(), 1.0));

  const Var full_err = ag::norm_channels(ag::sub(out.refined.flow, ag::constant(s.flow.uv)));
  const Var epe_full = ag::masked_mean(full_err, s.flow.valid);

  LossBreakdown b;
  b.flow = ag::add(ag::add(fl.total, ag::scale(epe_full, cfg_.flow.refine_weight * cfg_.flow.alpha * to_coarse)),
                   ag::scale(aux, cfg_.flow.aux_weight));
  b.classification = fl.classification.value()[0];
  b.epe_coarse = fl.epe.value()[0];
  b.epe_full = epe_full.value()[0];
  b.aux = aux.value()[0];
  b.flow_empty = fl.empty;
  b.total = b.flow;
  if (lambda_cd > 0.0) {
    if (!out.cd_logits.defined()) throw ValidationError("CD loss requested without the CD branch");
    Tensor mask(s.flow.valid.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = s.flow.valid[i] * out.covered[i];
    const CDLoss l = cd_loss(out.cd_logits, s.change, mask);
    b.cd = l.value;
    b.cd_value = l.value.value()[0];
    b.cd_empty = l.empty;
    b.total = ag::add(b.flow, ag::scale(l.value, lambda_cd));
  }
  return b;
}

std::uint64_t JointModel::eval_seed(const SamplePair& s) const { return derive_seed(cfg_.encoder.noise_seed, s.seed); }

nn::ParamList JointModel::parameters() const {
  nn::ParamList p = harmonizer.parameters();
  decoder.collect(p, "flow");
  refiner.collect(p, "refine");
  cd.collect(p, "cd");
  return p;
}

}  // namespace regcd
