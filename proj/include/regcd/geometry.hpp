#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "regcd/tensor.hpp"

// Coordinates are 0-indexed pixel centers: x is the column, y the row, and
// (0, 0) is the center of the top-left pixel.
namespace regcd {

struct PixelGrid {
  int height = 1;
  int width = 1;

  PixelGrid() = default;
  PixelGrid(int height, int width);

  bool contains(double x, double y) const noexcept {
    return x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1;
  }
  bool operator==(const PixelGrid&) const = default;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Uniform sampling ranges for the synthetic perturbation; defaults are the
// standard protocol (translation in pixels, rotation in degrees).
struct PerturbationRanges {
  Interval dx{-25.0, 25.0};
  Interval dy{-25.0, 25.0};
  Interval theta_deg{-30.0, 30.0};
  Interval scale{0.80, 1.25};

  void validate() const;
  static PerturbationRanges identity() { return {{0, 0}, {0, 0}, {0, 0}, {1, 1}}; }
  static PerturbationRanges translation(double lo, double hi) { return {{lo, hi}, {lo, hi}, {0, 0}, {1, 1}}; }
};

struct AffineParams {
  double dx = 0.0;
  double dy = 0.0;
  double theta_deg = 0.0;
  double scale = 1.0;
};

// 2x3 matrix [a b tx; c d ty] mapping (x, y) -> (a x + b y + tx, c x + d y + ty).
class AffineTransform {
 public:
  AffineTransform() : m_{1, 0, 0, 0, 1, 0} {}
  explicit AffineTransform(const std::array<double, 6>& m) : m_(m) {}

  static AffineTransform identity() { return AffineTransform(); }
  static AffineTransform translation(double dx, double dy) { return AffineTransform({1, 0, dx, 0, 1, dy}); }
  // Scale by s, rotate by theta about the grid center, then translate.
  static AffineTransform from_params(const AffineParams& p, const PixelGrid& grid);

  std::array<double, 2> apply(double x, double y) const noexcept {
    return {m_[0] * x + m_[1] * y + m_[2], m_[3] * x + m_[4] * y + m_[5]};
  }
  double determinant() const noexcept { return m_[0] * m_[4] - m_[1] * m_[3]; }
  AffineTransform inverse() const;
  // (this ∘ inner)(x) = this(inner(x))
  AffineTransform compose(const AffineTransform& inner) const;

  const std::array<double, 6>& matrix() const noexcept { return m_; }

 private:
  std::array<double, 6> m_;
};

// Per-pixel displacement {2, H, W} (channel 0 horizontal) plus validity {1, H, W}.
struct DenseFlow {
  Tensor uv;
  Tensor valid;

  DenseFlow() = default;
  explicit DenseFlow(const PixelGrid& grid);
  DenseFlow(Tensor uv, Tensor valid);

  PixelGrid grid() const { return {uv.dim(1), uv.dim(2)}; }
  double u(int y, int x) const { return uv.at(0, y, x); }
  double v(int y, int x) const { return uv.at(1, y, x); }
  bool is_valid(int y, int x) const { return valid.at(0, y, x) != 0.0; }

  static DenseFlow constant(const PixelGrid& grid, double u, double v);
};

struct WarpResult {
  Tensor values;   // {C, H, W}
  Tensor covered;  // {1, H, W}
};

// Draws translation, rotation and scale uniformly from `ranges` using a
// generator seeded with `seed`.
AffineParams sample_affine_params(std::uint64_t seed, const PerturbationRanges& ranges);
AffineTransform sample_affine(std::uint64_t seed, const PerturbationRanges& ranges, const PixelGrid& grid);

// Ground-truth flow for I_B(x) = I_B0(A(x)): U(x) = A^{-1}(x) - x, invalid
// where A^{-1}(x) leaves the grid.
DenseFlow flow_from_affine(const AffineTransform& transform, const PixelGrid& grid);

// Bilinear sampling of f at x + U(x); uncovered samples are zero.
WarpResult warp(const Tensor& field, const DenseFlow& flow);

// Samples f at A(x) for every pixel x (resampling under the generation convention).
WarpResult warp_affine(const Tensor& field, const AffineTransform& transform);

// Resamples the flow grid by `factor` and multiplies displacements by it.
// A target pixel is valid only if every source pixel contributing to it is.
DenseFlow scale_flow(const DenseFlow& flow, double factor);
DenseFlow scale_flow_to(const DenseFlow& flow, int height, int width, double factor);

}  // namespace regcd
