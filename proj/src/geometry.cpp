#include "regcd/geometry.hpp"

#include <cmath>
#include <numbers>

#include "regcd/detail/resample.hpp"
#include "regcd/error.hpp"
#include "regcd/ops.hpp"
#include "regcd/rng.hpp"

namespace regcd {

PixelGrid::PixelGrid(int height, int width) : height(height), width(width) {
  if (height < 1 || width < 1)
    throw ValidationError("pixel grid must be at least 1x1, got " + std::to_string(height) + "x" +
                          std::to_string(width));
}

void PerturbationRanges::validate() const {
  auto check = [](const Interval& i, const char* name) {
    if (!(i.lo <= i.hi) || !std::isfinite(i.lo) || !std::isfinite(i.hi))
      throw ValidationError(std::string("perturbation range ") + name + " must satisfy lo <= hi");
  };
  check(dx, "dx");
  check(dy, "dy");
  check(theta_deg, "theta");
  check(scale, "scale");
  if (scale.lo <= 0.0)
    throw ValidationError("perturbation scale lower bound must be > 0, got " + std::to_string(scale.lo));
}

AffineTransform AffineTransform::from_params(const AffineParams& p, const PixelGrid& grid) {
  const double theta = p.theta_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta) * p.scale;
  const double s = std::sin(theta) * p.scale;
  const double cx = 0.5 * (grid.width - 1);
  const double cy = 0.5 * (grid.height - 1);
  // x' = s R (x - center) + center + t
  return AffineTransform({c, -s, cx - (c * cx - s * cy) + p.dx, s, c, cy - (s * cx + c * cy) + p.dy});
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  if (det == 0.0 || !std::isfinite(det)) throw ValidationError("affine transform is not invertible");
  const double a = m_[4] / det, b = -m_[1] / det;
  const double c = -m_[3] / det, d = m_[0] / det;
  return AffineTransform({a, b, -(a * m_[2] + b * m_[5]), c, d, -(c * m_[2] + d * m_[5])});
}

AffineTransform AffineTransform::compose(const AffineTransform& inner) const {
  const auto& o = m_;
  const auto& i = inner.m_;
  return AffineTransform({o[0] * i[0] + o[1] * i[3], o[0] * i[1] + o[1] * i[4], o[0] * i[2] + o[1] * i[5] + o[2],
                          o[3] * i[0] + o[4] * i[3], o[3] * i[1] + o[4] * i[4], o[3] * i[2] + o[4] * i[5] + o[5]});
}

DenseFlow::DenseFlow(const PixelGrid& grid)
    : uv({2, grid.height, grid.width}), valid({1, grid.height, grid.width}, 1.0) {}

DenseFlow::DenseFlow(Tensor uv_in, Tensor valid_in) : uv(std::move(uv_in)), valid(std::move(valid_in)) {
  if (uv.rank() != 3 || uv.dim(0) != 2) throw ValidationError("flow field must be {2,H,W}, got " + shape_str(uv.shape()));
  if (valid.rank() != 3 || valid.dim(0) != 1 || valid.dim(1) != uv.dim(1) || valid.dim(2) != uv.dim(2))
    throw ValidationError("flow validity " + shape_str(valid.shape()) + " does not match " + shape_str(uv.shape()));
}

DenseFlow DenseFlow::constant(const PixelGrid& grid, double u, double v) {
  DenseFlow flow(grid);
  const std::size_t plane = flow.uv.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    flow.uv[i] = u;
    flow.uv[plane + i] = v;
  }
  return flow;
}

AffineParams sample_affine_params(std::uint64_t seed, const PerturbationRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  AffineParams p;
  p.dx = rng.uniform(ranges.dx.lo, ranges.dx.hi);
  p.dy = rng.uniform(ranges.dy.lo, ranges.dy.hi);
  p.theta_deg = rng.uniform(ranges.theta_deg.lo, ranges.theta_deg.hi);
  p.scale = rng.uniform(ranges.scale.lo, ranges.scale.hi);
  return p;
}

AffineTransform sample_affine(std::uint64_t seed, const PerturbationRanges& ranges, const PixelGrid& grid) {
  return AffineTransform::from_params(sample_affine_params(seed, ranges), grid);
}

DenseFlow flow_from_affine(const AffineTransform& transform, const PixelGrid& grid) {
  const AffineTransform inv = transform.inverse();
  DenseFlow flow(grid);
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto [sx, sy] = inv.apply(x, y);
      flow.uv.at(0, y, x) = sx - x;
      flow.uv.at(1, y, x) = sy - y;
      flow.valid.at(0, y, x) = grid.contains(sx, sy) ? 1.0 : 0.0;
    }
  return flow;
}

WarpResult warp(const Tensor& field, const DenseFlow& flow) {
  NoGradGuard no_grad;
  auto out = ag::warp(ag::constant(field), ag::constant(flow.uv));
  return {out.values.value(), std::move(out.covered)};
}

WarpResult warp_affine(const Tensor& field, const AffineTransform& transform) {
  if (field.rank() != 3) throw ValidationError("warp_affine: expected {C,H,W}");
  DenseFlow displacement(PixelGrid(field.dim(1), field.dim(2)));
  for (int y = 0; y < field.dim(1); ++y)
    for (int x = 0; x < field.dim(2); ++x) {
      const auto [sx, sy] = transform.apply(x, y);
      displacement.uv.at(0, y, x) = sx - x;
      displacement.uv.at(1, y, x) = sy - y;
    }
  return warp(field, displacement);
}

DenseFlow scale_flow_to(const DenseFlow& flow, int height, int width, double factor) {
  if (!(factor > 0.0)) throw ValidationError("scale_flow: factor must be > 0");
  const PixelGrid src = flow.grid();
  PixelGrid dst(height, width);
  if (dst == src && factor == 1.0) return flow;
  const auto ty = detail::resize_taps(src.height, dst.height);
  const auto tx = detail::resize_taps(src.width, dst.width);
  DenseFlow out(dst);
  for (int y = 0; y < dst.height; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < dst.width; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < 2; ++c) {
        const double v = a.w0 * (b.w0 * flow.uv.at(c, a.i0, b.i0) + b.w1 * flow.uv.at(c, a.i0, b.i1)) +
                         a.w1 * (b.w0 * flow.uv.at(c, a.i1, b.i0) + b.w1 * flow.uv.at(c, a.i1, b.i1));
        out.uv.at(c, y, x) = v * factor;
      }
      bool ok = true;
      auto tap = [&](double w, int yy, int xx) {
        if (w > 0.0 && !flow.is_valid(yy, xx)) ok = false;
      };
      tap(a.w0 * b.w0, a.i0, b.i0);
      tap(a.w0 * b.w1, a.i0, b.i1);
      tap(a.w1 * b.w0, a.i1, b.i0);
      tap(a.w1 * b.w1, a.i1, b.i1);
      out.valid.at(0, y, x) = ok ? 1.0 : 0.0;
    }
  }
  return out;
}

DenseFlow scale_flow(const DenseFlow& flow, double factor) {
  if (!(factor > 0.0)) throw ValidationError("scale_flow: factor must be > 0");
  const PixelGrid src = flow.grid();
  const int h = std::max(1, static_cast<int>(std::lround(src.height * factor)));
  const int w = std::max(1, static_cast<int>(std::lround(src.width * factor)));
  return scale_flow_to(flow, h, w, factor);
}

}  // namespace regcd
