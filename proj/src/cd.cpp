#include "regcd/cd.hpp"

#include <cmath>

#include "regcd/error.hpp"
#include "regcd/flow.hpp"
#include "regcd/ops.hpp"

namespace regcd {

AlignedPyramid align_features(const FeaturePyramid& pyr_b, const Var& flow_full) {
  AlignedPyramid out;
  out.features.timesteps = pyr_b.timesteps;
  out.features.harmonized = pyr_b.harmonized;
  out.features.features.resize(pyr_b.features.size());
  for (int i = 0; i < pyr_b.scales(); ++i) {
    const Tensor& ref = pyr_b.at(0, i).value();
    const Var flow_i = rescale_flow(flow_full, ref.dim(1), ref.dim(2));
    for (std::size_t k = 0; k < pyr_b.features.size(); ++k) {
      auto w = ag::warp(pyr_b.at(k, i), flow_i);
      out.features.features[k].push_back(w.values);
      if (k == 0) out.covered.push_back(std::move(w.covered));
    }
  }
  return out;
}

Var build_descriptor(const Var& fa, const Var& fb_warped) {
  if (fa.shape() != fb_warped.shape())
    throw ValidationError("descriptor inputs differ: " + shape_str(fa.shape()) + " vs " + shape_str(fb_warped.shape()));
  const Var parts[] = {ag::abs(ag::sub(fa, fb_warped)), ag::mul(fa, fb_warped)};
  return ag::concat_channels(parts);
}

SqueezeExcite::SqueezeExcite(int channels, int ratio, Rng& rng)
    : reduce(channels, std::max(1, channels / ratio), rng), expand(std::max(1, channels / ratio), channels, rng) {
  if (channels < ratio) throw ValidationError("squeeze-excite: channel count below the reduction ratio");
}

Var SqueezeExcite::gates(const Var& u) const {
  const int c = u.value().dim(0);
  const Var pooled = ag::reshape(ag::channel_mean(u), {c, 1});
  return ag::reshape(ag::sigmoid(expand(ag::relu(reduce(pooled)))), {c});
}

Var SqueezeExcite::operator()(const Var& u) const { return ag::mul_channel(u, gates(u)); }

void SqueezeExcite::collect(nn::ParamList& out, const std::string& prefix) const {
  reduce.collect(out, prefix + ".reduce");
  expand.collect(out, prefix + ".expand");
}

Var aggregate_timesteps(const std::vector<Var>& per_timestep, const Var& logits) {
  const int t = static_cast<int>(per_timestep.size());
  if (t == 0 || logits.value().size() != per_timestep.size())
    throw ValidationError("aggregate_timesteps: " + std::to_string(t) + " descriptors for " +
                          std::to_string(logits.value().size()) + " weights");
  const Var gamma = ag::softmax_channels(logits);
  Var acc;
  for (int k = 0; k < t; ++k) {
    const Var term = ag::mul_scalar(per_timestep[k], ag::slice_channels(gamma, k, k + 1));
    acc = acc.defined() ? ag::add(acc, term) : term;
  }
  return acc;
}

CDHead::CDHead(const std::vector<int>& widths, int num_timesteps, const CDHeadConfig& cfg, Rng& rng)
    : num_timesteps_(num_timesteps) {
  const int n = static_cast<int>(widths.size());
  if (n < 1 || static_cast<int>(cfg.decoder_widths.size()) != n)
    throw ValidationError("cd.decoder_widths needs one entry per scale (" + std::to_string(n) + ")");
  if (num_timesteps < 1) throw ValidationError("cd head needs at least one timestep");
  stages.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    se.emplace_back(2 * widths[i], cfg.se_ratio, rng);
    gamma_logits.push_back(nn::parameter(Tensor({num_timesteps})));
  }
  int prev = 0;
  for (int i = n - 1; i >= 0; --i) {
    const int out = cfg.decoder_widths[static_cast<std::size_t>(n - 1 - i)];
    stages[i].conv1 = nn::Conv2d(prev + 2 * widths[i], out, 3, 1, rng);
    stages[i].conv2 = nn::Conv2d(out, out, 3, 1, rng);
    prev = out;
  }
  projection = nn::Conv2d(prev, 1, 1, 1, rng);
}

std::vector<Var> CDHead::aggregate(const std::vector<std::vector<Var>>& u) const {
  if (static_cast<int>(u.size()) != num_timesteps_) throw ValidationError("cd head: missing timestep descriptors");
  std::vector<Var> out;
  for (int i = 0; i < scales(); ++i) {
    std::vector<Var> per_t;
    for (const auto& row : u) {
      if (static_cast<int>(row.size()) != scales()) throw ValidationError("cd head: missing scale descriptors");
      per_t.push_back(se[i](row[i]));
    }
    out.push_back(aggregate_timesteps(per_t, gamma_logits[i]));
  }
  return out;
}

Var CDHead::decode(const std::vector<Var>& u_hat) const {
  if (static_cast<int>(u_hat.size()) != scales()) throw ValidationError("hierarchical decode needs every scale");
  Var h;
  for (int i = scales() - 1; i >= 0; --i) {
    const Tensor& u = u_hat[i].value();
    Var x = u_hat[i];
    if (h.defined()) {
      const Tensor& hv = h.value();
      if (u.dim(1) != 2 * hv.dim(1) || u.dim(2) != 2 * hv.dim(2))
        throw ValidationError("resolution chain mismatch at scale " + std::to_string(i));
      const Var parts[] = {ag::resize_bilinear(h, u.dim(1), u.dim(2)), u_hat[i]};
      x = ag::concat_channels(parts);
    }
    h = stages[i](x);
  }
  return projection(h);
}

Var CDHead::operator()(const FeaturePyramid& fa, const AlignedPyramid& fb) const {
  std::vector<std::vector<Var>> u(fa.features.size());
  for (std::size_t k = 0; k < fa.features.size(); ++k)
    for (int i = 0; i < fa.scales(); ++i) u[k].push_back(build_descriptor(fa.at(k, i), fb.features.at(k, i)));
  return decode(aggregate(u));
}

void CDHead::collect(nn::ParamList& out, const std::string& prefix) const {
  for (int i = 0; i < scales(); ++i) {
    se[i].collect(out, prefix + ".se" + std::to_string(i));
    out.push_back({prefix + ".gamma" + std::to_string(i), gamma_logits[i]});
  }
  for (int i = scales() - 1; i >= 0; --i) {
    stages[i].conv1.collect(out, prefix + ".stage" + std::to_string(i) + ".conv1");
    stages[i].conv2.collect(out, prefix + ".stage" + std::to_string(i) + ".conv2");
  }
  projection.collect(out, prefix + ".projection");
}

CDLoss cd_loss(const Var& logits, const Tensor& change, const Tensor& mask) {
  if (logits.shape() != change.shape() || logits.shape() != mask.shape())
    throw ValidationError("cd_loss: logits " + shape_str(logits.shape()) + ", labels " + shape_str(change.shape()) +
                          ", mask " + shape_str(mask.shape()));
  return {ag::bce_with_logits(logits, change, mask), mask.sum() == 0.0};
}

Tensor change_probability(const Tensor& logits) {
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double s = logits[i];
    p[i] = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
  }
  return p;
}

Tensor change_mask(const Tensor& logits, double threshold) {
  Tensor p = change_probability(logits);
  for (double& v : p.values()) v = v >= threshold ? 1.0 : 0.0;
  return p;
}

}  // namespace regcd
