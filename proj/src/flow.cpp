#include "regcd/flow.hpp"

#include <cmath>

#include "regcd/error.hpp"
#include "regcd/ops.hpp"

namespace regcd {

Tensor positional_encoding(int channels, const std::vector<std::array<double, 2>>& positions) {
  if (channels < 4 || channels % 4 != 0) throw ValidationError("positional encoding width must be a multiple of 4");
  const int n = static_cast<int>(positions.size());
  const int freqs = channels / 4;
  Tensor table({channels, n});
  for (int f = 0; f < freqs; ++f) {
    const double omega = std::pow(10000.0, -static_cast<double>(f) / freqs);
    for (int j = 0; j < n; ++j) {
      const double px = positions[j][0] * omega, py = positions[j][1] * omega;
      table[static_cast<std::size_t>(4 * f + 0) * n + j] = std::sin(px);
      table[static_cast<std::size_t>(4 * f + 1) * n + j] = std::cos(px);
      table[static_cast<std::size_t>(4 * f + 2) * n + j] = std::sin(py);
      table[static_cast<std::size_t>(4 * f + 3) * n + j] = std::cos(py);
    }
  }
  return table;
}

std::vector<std::array<double, 2>> grid_positions(int h, int w) {
  std::vector<std::array<double, 2>> pos;
  pos.reserve(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) pos.push_back({static_cast<double>(x), static_cast<double>(y)});
  return pos;
}

AttentionBlock::AttentionBlock(int width, int heads_, int mlp_ratio, Rng& rng)
    : norm1(width),
      norm2(width),
      query(width, width, rng),
      key(width, width, rng),
      value(width, width, rng),
      out(width, width, rng),
      mlp_in(width, width * mlp_ratio, rng),
      mlp_out(width * mlp_ratio, width, rng),
      heads(heads_) {
  if (width % heads != 0) throw ValidationError("attention width must be divisible by the head count");
}

Var AttentionBlock::operator()(const Var& x) const {
  const int c = x.value().dim(0);
  const int dh = c / heads;
  const Var n1 = norm1(x);
  const Var q = query(n1), k = key(n1), v = value(n1);
  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_channels(q, h * dh, (h + 1) * dh);
    const Var kh = ag::slice_channels(k, h * dh, (h + 1) * dh);
    const Var vh = ag::slice_channels(v, h * dh, (h + 1) * dh);
    // {N_keys, N_queries}; softmax over keys.
    const Var att = ag::softmax_channels(ag::scale(ag::matmul(kh, qh, true, false), 1.0 / std::sqrt(double(dh))));
    parts.push_back(ag::matmul(vh, att));
  }
  const Var y = ag::add(x, out(ag::concat_channels(parts)));
  return ag::add(y, mlp_out(ag::gelu(mlp_in(norm2(y)))));
}

void AttentionBlock::collect(nn::ParamList& params, const std::string& prefix) const {
  norm1.collect(params, prefix + ".norm1");
  query.collect(params, prefix + ".query");
  key.collect(params, prefix + ".key");
  value.collect(params, prefix + ".value");
  out.collect(params, prefix + ".out");
  norm2.collect(params, prefix + ".norm2");
  mlp_in.collect(params, prefix + ".mlp_in");
  mlp_out.collect(params, prefix + ".mlp_out");
}

DecoderStack::DecoderStack(int in_channels, int width, int n_blocks, int heads, int bins, int mlp_ratio, Rng& rng)
    : input(in_channels, width, rng), final_norm(width), head(width, bins + 1, rng, 0.1),
      in_channels_(in_channels), width_(width), bins_(bins) {
  if (n_blocks < 0) throw ValidationError("flow.blocks must be >= 0");
  for (int b = 0; b < n_blocks; ++b) blocks.emplace_back(width, heads, mlp_ratio, rng);
}

Var DecoderStack::forward_tokens(const Var& tokens, const Tensor& positions) const {
  if (tokens.value().rank() != 2 || tokens.value().dim(0) != in_channels_)
    throw ValidationError("decoder expects " + std::to_string(in_channels_) + " input channels, got " +
                          shape_str(tokens.shape()));
  if (positions.shape() != Shape{width_, tokens.value().dim(1)})
    throw ValidationError("positional table shape " + shape_str(positions.shape()));
  Var x = ag::add(input(tokens), ag::constant(positions));
  for (const AttentionBlock& block : blocks) x = block(x);
  return head(final_norm(x));
}

DecoderStack::Output DecoderStack::decode(const CorrelationVolume& volume, const Var& f_coarse) const {
  const Tensor& s = volume.scores.value();
  if (f_coarse.value().rank() != 3 || f_coarse.value().dim(1) != s.dim(1) || f_coarse.value().dim(2) != s.dim(2))
    throw ValidationError("decoder: volume " + shape_str(s.shape()) + " and features " + shape_str(f_coarse.shape()) +
                          " disagree on the coarse grid");
  const int h = s.dim(1), w = s.dim(2);
  const Var parts[] = {ag::masked_standardize_channels(volume.scores, volume.valid), f_coarse};
  const Var cat = ag::concat_channels(parts);
  const Var tokens = ag::reshape(cat, {cat.value().dim(0), h * w});
  const Var out = forward_tokens(tokens, positional_encoding(width_, grid_positions(h, w)));
  const Var grid = ag::reshape(out, {bins_ + 1, h, w});
  return {ag::slice_channels(grid, 0, bins_), ag::slice_channels(grid, bins_, bins_ + 1)};
}

void DecoderStack::collect(nn::ParamList& params, const std::string& prefix) const {
  input.collect(params, prefix + ".input");
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(params, prefix + ".block" + std::to_string(b));
  final_norm.collect(params, prefix + ".final_norm");
  head.collect(params, prefix + ".head");
}

Var flow_probabilities(const Var& logits, double tau) {
  if (!(tau > 0.0)) throw ValidationError("flow temperature must be > 0");
  return ag::softmax_channels(ag::scale(logits, 1.0 / tau));
}

Var argsoftmax_decode(const Var& probs, const DisplacementLattice& lattice) {
  if (probs.value().dim(0) != lattice.bins()) throw ValidationError("distribution does not match the lattice");
  return ag::linear(probs, ag::constant(lattice.offsets_matrix()), Var());
}

GaussianTarget gaussian_target(const Tensor& w_star, const DisplacementLattice& lattice, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("target sigma must be > 0");
  if (w_star.rank() != 3 || w_star.dim(0) != 2) throw ValidationError("w* must be {2, h, w}");
  const int h = w_star.dim(1), w = w_star.dim(2), bins = lattice.bins();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  GaussianTarget t{Tensor({bins, h, w}), Tensor({bins, h, w}), Tensor({1, h, w})};
  const double bound = lattice.range() + lattice.delta();
  std::vector<double> e(static_cast<std::size_t>(bins));
  for (std::size_t p = 0; p < plane; ++p) {
    const double u = w_star[p], v = w_star[plane + p];
    t.in_range[p] = (std::abs(u) <= bound && std::abs(v) <= bound) ? 1.0 : 0.0;
    double top = -INFINITY;
    for (int k = 0; k < bins; ++k) {
      const double du = lattice.offset(k)[0] - u, dv = lattice.offset(k)[1] - v;
      e[k] = -(du * du + dv * dv) / (2.0 * sigma * sigma);
      top = std::max(top, e[k]);
    }
    double z = 0.0;
    for (int k = 0; k < bins; ++k) z += std::exp(e[k] - top);
    const double lse = top + std::log(z);
    for (int k = 0; k < bins; ++k) {
      t.log_probs[k * plane + p] = e[k] - lse;
      t.probs[k * plane + p] = std::exp(e[k] - lse);
    }
  }
  return t;
}

FlowLossTerms flow_loss(const Var& logits, const Tensor& w_star, const Tensor& valid, const DisplacementLattice& lattice,
                        const FlowHeadConfig& cfg, FlowObjective objective) {
  const Tensor& z = logits.value();
  if (z.rank() != 3 || z.dim(0) != lattice.bins()) throw ValidationError("flow logits must be {r^2, h, w}");
  const int h = z.dim(1), w = z.dim(2);
  if (w_star.shape() != Shape{2, h, w} || valid.shape() != Shape{1, h, w})
    throw ValidationError("flow_loss: target shapes do not match logits " + shape_str(z.shape()));
  const GaussianTarget target = gaussian_target(w_star, lattice, cfg.sigma);
  const Var scaled = ag::scale(logits, 1.0 / cfg.tau);
  const Var log_pi = ag::log_softmax_channels(scaled);
  const Var pi = ag::exp(log_pi);
  const Var flow = argsoftmax_decode(pi, lattice);
  const Var err = ag::sub(flow, ag::constant(w_star));

  FlowLossTerms terms;
  terms.epe = ag::masked_mean(ag::norm_channels(err), valid);
  if (objective == FlowObjective::kl) {
    Tensor mask(valid.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = valid[i] * target.in_range[i];
    const Var kl = ag::sum_channels(ag::mul(pi, ag::sub(log_pi, ag::constant(target.log_probs))));
    terms.classification = ag::masked_mean(kl, mask);
  } else {
    terms.classification = ag::masked_mean(ag::sum_channels(ag::square(err)), valid);
  }
  terms.empty = valid.sum() == 0.0;
  terms.total = ag::add(terms.classification, ag::scale(terms.epe, cfg.alpha));
  return terms;
}

Var rescale_flow(const Var& flow, int out_h, int out_w) {
  const int h = flow.value().dim(1), w = flow.value().dim(2);
  if (out_h * w != out_w * h) throw ValidationError("rescale_flow: anisotropic resize is not supported");
  const double factor = static_cast<double>(out_w) / w;
  if (out_h == h && out_w == w) return flow;
  return ag::scale(ag::resize_bilinear(flow, out_h, out_w), factor);
}

Refiner::Refiner(int feature_channels, int hidden, int radius_, Rng& rng)
    : conv1(feature_channels + (2 * radius_ + 1) * (2 * radius_ + 1), hidden, 3, 1, rng),
      conv2(hidden, hidden, 3, 1, rng),
      out(hidden, 2, 3, 1, rng),
      radius(radius_) {
  out.weight.mutable_value().fill(0.0);
  out.bias.mutable_value().fill(0.0);
}

Refiner::Output Refiner::operator()(const Var& coarse, const Var& fa, const Var& fb, int out_h, int out_w) const {
  if (fa.shape() != fb.shape()) throw ValidationError("refiner feature shapes differ");
  const int hr = fa.value().dim(1), wr = fa.value().dim(2);
  const int c = fa.value().dim(0);
  const Var base_r = rescale_flow(coarse, hr, wr);
  const Var fb_w = ag::warp(fb, base_r).values;
  const Var corr = ag::scale(ag::local_correlation(ag::l2_normalize_channels(fa), ag::l2_normalize_channels(fb_w), radius),
                             static_cast<double>(c));
  const Var parts[] = {corr, fa};
  const Var hdn = ag::relu(conv2(ag::relu(conv1(ag::concat_channels(parts)))));
  const Var delta_r = ag::scale(ag::tanh(out(hdn)), kMaxCorrection);
  Output o;
  o.base = rescale_flow(coarse, out_h, out_w);
  o.correction = (hr == out_h && wr == out_w) ? delta_r : ag::resize_bilinear(delta_r, out_h, out_w);
  o.flow = ag::add(o.base, o.correction);
  return o;
}

void Refiner::collect(nn::ParamList& params, const std::string& prefix) const {
  conv1.collect(params, prefix + ".conv1");
  conv2.collect(params, prefix + ".conv2");
  out.collect(params, prefix + ".out");
}

}  // namespace regcd
