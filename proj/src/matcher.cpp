#include "regcd/matcher.hpp"

#include <algorithm>
#include <cmath>

#include "regcd/error.hpp"
#include "regcd/ops.hpp"

namespace regcd {

DisplacementLattice::DisplacementLattice(int r, double delta) : r_(r), delta_(delta) {
  if (r < 1 || r % 2 == 0) throw ValidationError("lattice size r must be a positive odd integer, got " + std::to_string(r));
  if (!(delta > 0.0)) throw ValidationError("lattice spacing must be > 0");
  const int half = (r - 1) / 2;
  for (int iy = -half; iy <= half; ++iy)
    for (int ix = -half; ix <= half; ++ix) offsets_.push_back({ix * delta, iy * delta});
}

Tensor DisplacementLattice::offsets_matrix() const {
  Tensor m({2, bins()});
  for (int k = 0; k < bins(); ++k) {
    m[static_cast<std::size_t>(k)] = offsets_[static_cast<std::size_t>(k)][0];
    m[static_cast<std::size_t>(bins() + k)] = offsets_[static_cast<std::size_t>(k)][1];
  }
  return m;
}

FourierMap::FourierMap(int channels, int num_features, double length_scale, std::uint64_t seed)
    : projection_({num_features, channels}) {
  if (channels < 1 || num_features < 1) throw ValidationError("Fourier map needs positive sizes");
  if (!(length_scale > 0.0)) throw ValidationError("Fourier length scale must be > 0");
  Rng rng(seed);
  rng.fill_normal(projection_.values());
  for (double& v : projection_.values()) v /= length_scale;
}

Var FourierMap::operator()(const Var& f) const {
  const Var z = ag::linear(f, ag::constant(projection_), Var());
  const Var parts[] = {ag::cos(z), ag::sin(z)};
  return ag::scale(ag::concat_channels(parts), 1.0 / std::sqrt(static_cast<double>(num_features())));
}

std::vector<double> FourierMap::map(const std::vector<double>& f) const {
  if (static_cast<int>(f.size()) != channels()) throw ValidationError("Fourier map: wrong input width");
  const int d = num_features();
  std::vector<double> out(2 * static_cast<std::size_t>(d));
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i) {
    double z = 0.0;
    for (int c = 0; c < channels(); ++c) z += projection_[static_cast<std::size_t>(i) * channels() + c] * f[c];
    out[static_cast<std::size_t>(i)] = std::cos(z) * s;
    out[static_cast<std::size_t>(d + i)] = std::sin(z) * s;
  }
  return out;
}

CorrelationVolume build_volume(const Var& fa, const Var& fb, const DisplacementLattice& lattice, const FourierMap& phi) {
  if (fa.shape() != fb.shape() || fa.value().rank() != 3)
    throw ValidationError("build_volume: feature shapes " + shape_str(fa.shape()) + " and " + shape_str(fb.shape()));
  if (fa.value().dim(0) != phi.channels())
    throw ValidationError("build_volume: Fourier map expects " + std::to_string(phi.channels()) + " channels");
  const int h = fa.value().dim(1), w = fa.value().dim(2);
  const Var pa = phi(ag::l2_normalize_channels(fa));
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Offsets sharing a fractional part share bilinear weights, so B_k is an
  // integer shift of one fractional warp and phi runs once per class.
  std::vector<std::array<double, 2>> fractions;
  std::vector<Var> mapped;
  std::vector<Tensor> coverage;
  std::vector<ag::IntegerShift> shifts;
  for (int k = 0; k < lattice.bins(); ++k) {
    const auto [ox, oy] = lattice.offset(k);
    const double ix = std::floor(ox), iy = std::floor(oy);
    const std::array<double, 2> frac{ox - ix, oy - iy};
    auto it = std::find(fractions.begin(), fractions.end(), frac);
    if (it == fractions.end()) {
      Tensor shift({2, h, w});
      std::fill(shift.data(), shift.data() + plane, frac[0]);
      std::fill(shift.data() + plane, shift.data() + 2 * plane, frac[1]);
      const auto sampled = ag::warp(fb, ag::constant(shift));
      mapped.push_back(phi(ag::l2_normalize_channels(sampled.values)));
      coverage.push_back(sampled.covered);
      fractions.push_back(frac);
      it = fractions.end() - 1;
    }
    shifts.push_back({static_cast<int>(it - fractions.begin()), static_cast<int>(ix), static_cast<int>(iy)});
  }

  CorrelationVolume vol;
  vol.valid = Tensor({lattice.bins(), h, w});
  for (int k = 0; k < lattice.bins(); ++k) {
    const ag::IntegerShift& s = shifts[k];
    const Tensor& cov = coverage[s.source];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sx = x + s.dx, sy = y + s.dy;
        if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
        vol.valid[k * plane + static_cast<std::size_t>(y) * w + x] = cov[static_cast<std::size_t>(sy) * w + sx];
      }
  }
  vol.scores = ag::shifted_dot(pa, mapped, shifts, vol.valid);
  return vol;
}

}  // namespace regcd
