#pragma once

#include <array>
#include <vector>

#include "regcd/autograd.hpp"
#include "regcd/rng.hpp"

namespace regcd {

// r x r candidate displacements m_k (coarse pixels), k row-major over (dy, dx).
class DisplacementLattice {
 public:
  DisplacementLattice(int r, double delta);

  int r() const noexcept { return r_; }
  double delta() const noexcept { return delta_; }
  int bins() const noexcept { return r_ * r_; }
  int center() const noexcept { return (bins() - 1) / 2; }
  // Half-width of the covered range, (r - 1) * delta / 2.
  double range() const noexcept { return (r_ - 1) * delta_ / 2.0; }
  const std::array<double, 2>& offset(int k) const { return offsets_.at(static_cast<std::size_t>(k)); }
  // Bin holding -m_k.
  int mirror(int k) const noexcept { return bins() - 1 - k; }
  // {2, r^2}: row 0 = horizontal components, row 1 = vertical.
  Tensor offsets_matrix() const;

 private:
  int r_;
  double delta_;
  std::vector<std::array<double, 2>> offsets_;
};

// phi(f) = [cos(W f); sin(W f)] / sqrt(D_f) with fixed Gaussian W / length_scale.
class FourierMap {
 public:
  FourierMap(int channels, int num_features, double length_scale, std::uint64_t seed);

  int channels() const noexcept { return projection_.dim(1); }
  int num_features() const noexcept { return projection_.dim(0); }
  const Tensor& projection() const noexcept { return projection_; }

  // f {C, ...} -> {2 D_f, ...}.
  Var operator()(const Var& f) const;
  std::vector<double> map(const std::vector<double>& f) const;

 private:
  Tensor projection_;  // {D_f, C}
};

struct CorrelationVolume {
  Var scores;    // {r^2, h, w}
  Tensor valid;  // {r^2, h, w}
};

// scores(x, k) = phi(n(f_A(x)))^T phi(n(B_k(x))) where B_k bilinearly samples
// f_B at x + m_k and n() is L2 normalization over channels.
CorrelationVolume build_volume(const Var& fa, const Var& fb, const DisplacementLattice& lattice, const FourierMap& phi);

}  // namespace regcd
