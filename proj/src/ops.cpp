#include "regcd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "regcd/detail/resample.hpp"
#include "regcd/error.hpp"

namespace regcd::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using detail::Taps;
using detail::resize_taps;

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }
bool needs(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank)
    throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_str(a.shape()));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(std::move(y), {a}, [df](Node& n) {
    Node& in = input(n, 0);
    Tensor& g = in.grad_buffer();
    const Tensor& x = in.value;
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * df(x[i], n.value[i]);
  });
}

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* cols) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * plane;
        const double* src = x + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, double* x) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * plane;
        double* dst = x + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* srow = row + static_cast<std::size_t>(oy) * wo;
          double* drow = dst + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!needs(n, k)) continue;
      Tensor& g = input(n, k).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (needs(n, 1)) {
      Tensor& g = input(n, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return make_result(std::move(y), {a, b}, [](Node& n) {
    const Tensor& av = input(n, 0).value;
    const Tensor& bv = input(n, 1).value;
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (needs(n, 1)) {
      Tensor& g = input(n, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var cos(const Var& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var sin(const Var& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  Tensor y({1}, a.value().sum());
  return make_result(std::move(y), {a}, [](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const double s = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return scale(sum(a), count > 0 ? 1.0 / count : 0.0);
}

Var masked_mean(const Var& a, const Tensor& mask) {
  if (mask.size() != a.value().size())
    throw ValidationError("masked_mean: mask " + shape_str(mask.shape()) + " vs value " + shape_str(a.shape()));
  double total = 0.0;
  double count = 0.0;
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i] != 0.0) {
      total += x[i];
      count += 1.0;
    }
  }
  Tensor y({1}, count > 0 ? total / count : 0.0);
  return make_result(std::move(y), {a}, [mask, count](Node& n) {
    if (count == 0) return;
    Tensor& g = input(n, 0).grad_buffer();
    const double s = n.grad[0] / count;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i] != 0.0) g[i] += s;
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw ValidationError("mul_scalar: scalar operand must have one element");
  Tensor y = a.value();
  const double sv = s.value()[0];
  for (double& v : y.values()) v *= sv;
  return make_result(std::move(y), {a, s}, [](Node& n) {
    const double sv = input(n, 1).value[0];
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * sv;
    }
    if (needs(n, 1)) {
      const Tensor& av = input(n, 0).value;
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += n.grad[i] * av[i];
      input(n, 1).grad_buffer()[0] += acc;
    }
  });
}

Var add_channel(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  if (v.value().size() != static_cast<std::size_t>(xv.channels()))
    throw ValidationError("add_channel: " + shape_str(v.shape()) + " vs " + shape_str(x.shape()));
  Tensor y = xv;
  const std::size_t plane = xv.plane();
  for (int c = 0; c < xv.channels(); ++c) {
    const double b = v.value()[static_cast<std::size_t>(c)];
    double* row = y.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) row[p] += b;
  }
  return make_result(std::move(y), {x, v}, [plane](Node& n) {
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (needs(n, 1)) {
      Tensor& g = input(n, 1).grad_buffer();
      for (std::size_t c = 0; c < g.size(); ++c) {
        double acc = 0.0;
        const double* row = n.grad.data() + c * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
        g[c] += acc;
      }
    }
  });
}

Var mul_channel(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  if (v.value().size() != static_cast<std::size_t>(xv.channels()))
    throw ValidationError("mul_channel: " + shape_str(v.shape()) + " vs " + shape_str(x.shape()));
  Tensor y = xv;
  const std::size_t plane = xv.plane();
  for (int c = 0; c < xv.channels(); ++c) {
    const double s = v.value()[static_cast<std::size_t>(c)];
    double* row = y.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) row[p] *= s;
  }
  return make_result(std::move(y), {x, v}, [plane](Node& n) {
    const Tensor& xv = input(n, 0).value;
    const Tensor& vv = input(n, 1).value;
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t c = 0; c < vv.size(); ++c)
        for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] += n.grad[c * plane + p] * vv[c];
    }
    if (needs(n, 1)) {
      Tensor& g = input(n, 1).grad_buffer();
      for (std::size_t c = 0; c < vv.size(); ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += n.grad[c * plane + p] * xv[c * plane + p];
        g[c] += acc;
      }
    }
  });
}

Var channel_mean(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  Tensor y({xv.channels()});
  for (int c = 0; c < xv.channels(); ++c) {
    double acc = 0.0;
    const double* row = xv.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) acc += row[p];
    y[static_cast<std::size_t>(c)] = acc / static_cast<double>(plane);
  }
  return make_result(std::move(y), {x}, [plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t c = 0; c < n.value.size(); ++c) {
      const double s = n.grad[c] / static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] += s;
    }
  });
}

Var sum_channels(const Var& x) {
  const Tensor& xv = x.value();
  Shape shape = xv.shape();
  shape[0] = 1;
  Tensor y(shape);
  const std::size_t plane = xv.plane();
  for (int c = 0; c < xv.channels(); ++c) {
    const double* row = xv.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) y[p] += row[p];
  }
  return make_result(std::move(y), {x}, [plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const std::size_t channels = g.size() / plane;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] += n.grad[p];
  });
}

Var mul_plane(const Var& x, const Var& m) {
  const Tensor& xv = x.value();
  const Tensor& mv = m.value();
  const std::size_t plane = xv.plane();
  if (mv.size() != plane || mv.channels() != 1)
    throw ValidationError("mul_plane: " + shape_str(m.shape()) + " vs " + shape_str(x.shape()));
  Tensor y = xv;
  for (int c = 0; c < xv.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] *= mv[p];
  return make_result(std::move(y), {x, m}, [plane](Node& n) {
    const Tensor& xv = input(n, 0).value;
    const Tensor& mv = input(n, 1).value;
    const std::size_t channels = xv.size() / plane;
    if (needs(n, 0)) {
      Tensor& g = input(n, 0).grad_buffer();
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] += n.grad[c * plane + p] * mv[p];
    }
    if (needs(n, 1)) {
      Tensor& g = input(n, 1).grad_buffer();
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) g[p] += n.grad[c * plane + p] * xv[c * plane + p];
    }
  });
}

Var log_softmax_channels(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  const int channels = xv.channels();
  Tensor y(xv.shape());
  std::vector<double> peak(plane, -INFINITY), total(plane, 0.0);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) peak[p] = std::max(peak[p], xv[c * plane + p]);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) total[p] += std::exp(xv[c * plane + p] - peak[p]);
  for (std::size_t p = 0; p < plane; ++p) total[p] = peak[p] + std::log(total[p]);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] = xv[c * plane + p] - total[p];
  return make_result(std::move(y), {x}, [plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const std::size_t channels = g.size() / plane;
    std::vector<double> gsum(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) gsum[p] += n.grad[c * plane + p];
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = c * plane + p;
        g[i] += n.grad[i] - std::exp(n.value[i]) * gsum[p];
      }
  });
}

Var softmax_channels(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  const int channels = xv.channels();
  Tensor y(xv.shape());
  std::vector<double> peak(plane, -INFINITY), total(plane, 0.0);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) peak[p] = std::max(peak[p], xv[c * plane + p]);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      y[i] = std::exp(xv[i] - peak[p]);
      total[p] += y[i];
    }
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] /= total[p];
  return make_result(std::move(y), {x}, [plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const std::size_t channels = g.size() / plane;
    std::vector<double> dot(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) dot[p] += n.grad[c * plane + p] * n.value[c * plane + p];
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = c * plane + p;
        g[i] += n.value[i] * (n.grad[i] - dot[p]);
      }
  });
}

Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  const int channels = xv.channels();
  if (gamma.value().size() != static_cast<std::size_t>(channels) || beta.value().size() != gamma.value().size())
    throw ValidationError("layer_norm_channels: affine size does not match " + shape_str(x.shape()));
  std::vector<double> mu(plane, 0.0), inv_std(plane, 0.0);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) mu[p] += xv[c * plane + p];
  for (std::size_t p = 0; p < plane; ++p) mu[p] /= channels;
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const double d = xv[c * plane + p] - mu[p];
      inv_std[p] += d * d;
    }
  for (std::size_t p = 0; p < plane; ++p) inv_std[p] = 1.0 / std::sqrt(inv_std[p] / channels + eps);

  Tensor normalized(xv.shape());
  Tensor y(xv.shape());
  for (int c = 0; c < channels; ++c) {
    const double gc = gamma.value()[static_cast<std::size_t>(c)];
    const double bc = beta.value()[static_cast<std::size_t>(c)];
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      normalized[i] = (xv[i] - mu[p]) * inv_std[p];
      y[i] = gc * normalized[i] + bc;
    }
  }
  return make_result(std::move(y), {x, gamma, beta},
                     [normalized = std::move(normalized), inv_std = std::move(inv_std), plane](Node& n) {
                       const Tensor& gv = input(n, 1).value;
                       const std::size_t channels = gv.size();
                       if (needs(n, 1) || needs(n, 2)) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           double dg = 0.0, db = 0.0;
                           for (std::size_t p = 0; p < plane; ++p) {
                             const std::size_t i = c * plane + p;
                             dg += n.grad[i] * normalized[i];
                             db += n.grad[i];
                           }
                           if (needs(n, 1)) input(n, 1).grad_buffer()[c] += dg;
                           if (needs(n, 2)) input(n, 2).grad_buffer()[c] += db;
                         }
                       }
                       if (needs(n, 0)) {
                         Tensor& g = input(n, 0).grad_buffer();
                         std::vector<double> mean_d(plane, 0.0), mean_dn(plane, 0.0);
                         for (std::size_t c = 0; c < channels; ++c)
                           for (std::size_t p = 0; p < plane; ++p) {
                             const std::size_t i = c * plane + p;
                             const double d = n.grad[i] * gv[c];
                             mean_d[p] += d;
                             mean_dn[p] += d * normalized[i];
                           }
                         for (std::size_t p = 0; p < plane; ++p) {
                           mean_d[p] /= static_cast<double>(channels);
                           mean_dn[p] /= static_cast<double>(channels);
                         }
                         for (std::size_t c = 0; c < channels; ++c)
                           for (std::size_t p = 0; p < plane; ++p) {
                             const std::size_t i = c * plane + p;
                             const double d = n.grad[i] * gv[c];
                             g[i] += inv_std[p] * (d - mean_d[p] - normalized[i] * mean_dn[p]);
                           }
                       }
                     });
}

Var l2_normalize_channels(const Var& x, double eps) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  const int channels = xv.channels();
  std::vector<double> norm(plane, eps * eps);
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) norm[p] += xv[c * plane + p] * xv[c * plane + p];
  for (double& v : norm) v = std::sqrt(v);
  Tensor y(xv.shape());
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] = xv[c * plane + p] / norm[p];
  return make_result(std::move(y), {x}, [norm = std::move(norm), plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const std::size_t channels = g.size() / plane;
    std::vector<double> dot(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) dot[p] += n.grad[c * plane + p] * n.value[c * plane + p];
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = c * plane + p;
        g[i] += (n.grad[i] - n.value[i] * dot[p]) / norm[p];
      }
  });
}

Var norm_channels(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t plane = xv.plane();
  Shape shape = xv.shape();
  shape[0] = 1;
  Tensor y(shape);
  for (int c = 0; c < xv.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p) y[p] += xv[c * plane + p] * xv[c * plane + p];
  for (std::size_t p = 0; p < plane; ++p) y[p] = std::sqrt(y[p]);
  return make_result(std::move(y), {x}, [plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    const Tensor& xv = input(n, 0).value;
    const std::size_t channels = g.size() / plane;
    for (std::size_t p = 0; p < plane; ++p) {
      if (n.value[p] == 0.0) continue;
      const double s = n.grad[p] / n.value[p];
      for (std::size_t c = 0; c < channels; ++c) g[c * plane + p] += s * xv[c * plane + p];
    }
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int ar = a.value().dim(0), ac = a.value().dim(1);
  const int br = b.value().dim(0), bc = b.value().dim(1);
  const int m = transpose_a ? ac : ar;
  const int k = transpose_a ? ar : ac;
  const int k2 = transpose_b ? bc : br;
  const int n = transpose_b ? br : bc;
  if (k != k2) throw ValidationError("matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(k2));
  Tensor y({m, n});
  {
    ConstMatMap A(a.value().data(), ar, ac);
    ConstMatMap B(b.value().data(), br, bc);
    MatMap Y(y.data(), m, n);
    if (!transpose_a && !transpose_b) Y.noalias() = A * B;
    else if (transpose_a && !transpose_b) Y.noalias() = A.transpose() * B;
    else if (!transpose_a && transpose_b) Y.noalias() = A * B.transpose();
    else Y.noalias() = A.transpose() * B.transpose();
  }
  return make_result(std::move(y), {a, b}, [=](Node& node) {
    ConstMatMap G(node.grad.data(), m, n);
    ConstMatMap A(input(node, 0).value.data(), ar, ac);
    ConstMatMap B(input(node, 1).value.data(), br, bc);
    if (needs(node, 0)) {
      MatMap GA(input(node, 0).grad_buffer().data(), ar, ac);
      // Y = op(A) op(B);  dop(A) = G op(B)^T
      if (!transpose_a) {
        if (!transpose_b) GA.noalias() += G * B.transpose();
        else GA.noalias() += G * B;
      } else {
        if (!transpose_b) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
    }
    if (needs(node, 1)) {
      MatMap GB(input(node, 1).grad_buffer().data(), br, bc);
      // dop(B) = op(A)^T G
      if (!transpose_b) {
        if (!transpose_a) GB.noalias() += A.transpose() * G;
        else GB.noalias() += A * G;
      } else {
        if (!transpose_a) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require_rank(w, 2, "linear");
  const Tensor& xv = x.value();
  const int cin = xv.channels();
  const int cout = w.value().dim(0);
  if (w.value().dim(1) != cin)
    throw ValidationError("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  const int plane = static_cast<int>(xv.plane());
  Shape shape = xv.shape();
  shape[0] = cout;
  Tensor y(shape);
  {
    ConstMatMap X(xv.data(), cin, plane);
    ConstMatMap W(w.value().data(), cout, cin);
    MatMap Y(y.data(), cout, plane);
    Y.noalias() = W * X;
    if (bias.defined()) {
      if (bias.value().size() != static_cast<std::size_t>(cout)) throw ValidationError("linear: bias size mismatch");
      for (int c = 0; c < cout; ++c) Y.row(c).array() += bias.value()[static_cast<std::size_t>(c)];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(y), std::move(inputs), [=](Node& n) {
    ConstMatMap G(n.grad.data(), cout, plane);
    if (needs(n, 0)) {
      ConstMatMap W(input(n, 1).value.data(), cout, cin);
      MatMap GX(input(n, 0).grad_buffer().data(), cin, plane);
      GX.noalias() += W.transpose() * G;
    }
    if (needs(n, 1)) {
      ConstMatMap X(input(n, 0).value.data(), cin, plane);
      MatMap GW(input(n, 1).grad_buffer().data(), cout, cin);
      GW.noalias() += G * X.transpose();
    }
    if (has_bias && needs(n, 2)) {
      Tensor& gb = input(n, 2).grad_buffer();
      for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += G.row(c).sum();
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin || wv.dim(3) != k)
    throw ValidationError("conv2d: weight " + shape_str(wv.shape()) + " vs input " + shape_str(xv.shape()));
  if (stride < 1 || pad < 0) throw ValidationError("conv2d: invalid stride/padding");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ValidationError("conv2d: input " + shape_str(xv.shape()) + " too small for kernel");
  const int patch = cin * k * k;
  const int plane = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor y({cout, ho, wo});
  {
    Storage cols;
    const double* colp = xv.data();
    if (!pointwise) {
      cols.resize(static_cast<std::size_t>(patch) * plane);
      im2col(xv.data(), cin, h, wd, k, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    ConstMatMap C(colp, patch, plane);
    ConstMatMap W(wv.data(), cout, patch);
    MatMap Y(y.data(), cout, plane);
    Y.noalias() = W * C;
    if (bias.defined()) {
      if (bias.value().size() != static_cast<std::size_t>(cout)) throw ValidationError("conv2d: bias size mismatch");
      for (int c = 0; c < cout; ++c) Y.row(c).array() += bias.value()[static_cast<std::size_t>(c)];
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(y), std::move(inputs), [=](Node& n) {
    const Tensor& xv = input(n, 0).value;
    ConstMatMap G(n.grad.data(), cout, plane);
    Storage cols;
    const double* colp = xv.data();
    if (!pointwise && needs(n, 1)) {
      cols.resize(static_cast<std::size_t>(patch) * plane);
      im2col(xv.data(), cin, h, wd, k, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    if (needs(n, 1)) {
      ConstMatMap C(colp, patch, plane);
      MatMap GW(input(n, 1).grad_buffer().data(), cout, patch);
      GW.noalias() += G * C.transpose();
    }
    if (has_bias && needs(n, 2)) {
      Tensor& gb = input(n, 2).grad_buffer();
      for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += G.row(c).sum();
    }
    if (needs(n, 0)) {
      ConstMatMap W(input(n, 1).value.data(), cout, patch);
      Tensor& gx = input(n, 0).grad_buffer();
      if (pointwise) {
        MatMap GX(gx.data(), patch, plane);
        GX.noalias() += W.transpose() * G;
      } else {
        RowMat dcols = W.transpose() * G;
        col2im(dcols.data(), cin, h, wd, k, stride, pad, ho, wo, gx.data());
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_channels: no inputs");
  const std::size_t plane = parts[0].value().plane();
  Shape shape = parts[0].shape();
  int channels = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size() || p.value().plane() != plane)
      throw ValidationError("concat_channels: incompatible " + shape_str(s) + " vs " + shape_str(shape));
    channels += p.value().channels();
  }
  shape[0] = channels;
  Tensor y(shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    std::copy(p.value().data(), p.value().data() + p.value().size(), y.data() + offset);
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(y), std::move(inputs), [offsets](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!needs(n, k)) continue;
      Tensor& g = input(n, k).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[offsets[k] + i];
    }
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  const Tensor& xv = x.value();
  if (begin < 0 || end > xv.channels() || begin >= end)
    throw ValidationError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                          ") outside " + shape_str(xv.shape()));
  const std::size_t plane = xv.plane();
  Shape shape = xv.shape();
  shape[0] = end - begin;
  Tensor y(shape);
  std::copy(xv.data() + begin * plane, xv.data() + end * plane, y.data());
  return make_result(std::move(y), {x}, [begin, plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[begin * plane + i] += n.grad[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_result(std::move(y), {x}, [](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank(x, 3, "resize_bilinear");
  const Tensor& xv = x.value();
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (out_h < 1 || out_w < 1) throw ValidationError("resize_bilinear: empty output");
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  Tensor y({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < out_h; ++oy) {
      const Taps& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Taps& b = tx[static_cast<std::size_t>(ox)];
        y.at(ch, oy, ox) = a.w0 * (b.w0 * xv.at(ch, a.i0, b.i0) + b.w1 * xv.at(ch, a.i0, b.i1)) +
                           a.w1 * (b.w0 * xv.at(ch, a.i1, b.i0) + b.w1 * xv.at(ch, a.i1, b.i1));
      }
    }
  return make_result(std::move(y), {x}, [ty = std::move(ty), tx = std::move(tx), c, out_h, out_w](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < out_h; ++oy) {
        const Taps& a = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const Taps& b = tx[static_cast<std::size_t>(ox)];
          const double d = n.grad.at(ch, oy, ox);
          g.at(ch, a.i0, b.i0) += d * a.w0 * b.w0;
          g.at(ch, a.i0, b.i1) += d * a.w0 * b.w1;
          g.at(ch, a.i1, b.i0) += d * a.w1 * b.w0;
          g.at(ch, a.i1, b.i1) += d * a.w1 * b.w1;
        }
      }
  });
}

Var avg_pool2(const Var& x) {
  require_rank(x, 3, "avg_pool2");
  const Tensor& xv = x.value();
  const int c = xv.dim(0), h = xv.dim(1) / 2, w = xv.dim(2) / 2;
  if (h < 1 || w < 1) throw ValidationError("avg_pool2: input too small " + shape_str(xv.shape()));
  Tensor y({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx)
        y.at(ch, yy, xx) = 0.25 * (xv.at(ch, 2 * yy, 2 * xx) + xv.at(ch, 2 * yy, 2 * xx + 1) +
                                   xv.at(ch, 2 * yy + 1, 2 * xx) + xv.at(ch, 2 * yy + 1, 2 * xx + 1));
  return make_result(std::move(y), {x}, [c, h, w](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const double d = 0.25 * n.grad.at(ch, yy, xx);
          g.at(ch, 2 * yy, 2 * xx) += d;
          g.at(ch, 2 * yy, 2 * xx + 1) += d;
          g.at(ch, 2 * yy + 1, 2 * xx) += d;
          g.at(ch, 2 * yy + 1, 2 * xx + 1) += d;
        }
  });
}

namespace {

struct Sample {
  bool covered;
  int x0, x1, y0, y1;
  double fx, fy;
};

Sample locate(double sx, double sy, int h, int w) {
  Sample s{};
  s.covered = sx >= 0.0 && sy >= 0.0 && sx <= w - 1 && sy <= h - 1;
  if (!s.covered) return s;
  s.x0 = std::min(static_cast<int>(std::floor(sx)), std::max(w - 2, 0));
  s.y0 = std::min(static_cast<int>(std::floor(sy)), std::max(h - 2, 0));
  s.x1 = std::min(s.x0 + 1, w - 1);
  s.y1 = std::min(s.y0 + 1, h - 1);
  s.fx = sx - s.x0;
  s.fy = sy - s.y0;
  return s;
}

}  // namespace

WarpOutput warp(const Var& f, const Var& flow) {
  require_rank(f, 3, "warp");
  require_rank(flow, 3, "warp");
  const Tensor& fv = f.value();
  const Tensor& uv = flow.value();
  const int c = fv.dim(0), h = fv.dim(1), w = fv.dim(2);
  if (uv.dim(0) != 2 || uv.dim(1) != h || uv.dim(2) != w)
    throw ValidationError("warp: flow " + shape_str(uv.shape()) + " does not match field " + shape_str(fv.shape()));
  Tensor y({c, h, w});
  Tensor covered({1, h, w});
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const Sample s = locate(xx + uv.at(0, yy, xx), yy + uv.at(1, yy, xx), h, w);
      if (!s.covered) continue;
      covered.at(0, yy, xx) = 1.0;
      for (int ch = 0; ch < c; ++ch) {
        y.at(ch, yy, xx) = (1 - s.fy) * ((1 - s.fx) * fv.at(ch, s.y0, s.x0) + s.fx * fv.at(ch, s.y0, s.x1)) +
                           s.fy * ((1 - s.fx) * fv.at(ch, s.y1, s.x0) + s.fx * fv.at(ch, s.y1, s.x1));
      }
    }
  Var values = make_result(std::move(y), {f, flow}, [c, h, w](Node& n) {
    const Tensor& fv = input(n, 0).value;
    const Tensor& uv = input(n, 1).value;
    const bool gf = needs(n, 0), gu = needs(n, 1);
    Tensor* df = gf ? &input(n, 0).grad_buffer() : nullptr;
    Tensor* du = gu ? &input(n, 1).grad_buffer() : nullptr;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const Sample s = locate(xx + uv.at(0, yy, xx), yy + uv.at(1, yy, xx), h, w);
        if (!s.covered) continue;
        double gx = 0.0, gy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double d = n.grad.at(ch, yy, xx);
          if (d == 0.0) continue;
          const double v00 = fv.at(ch, s.y0, s.x0), v01 = fv.at(ch, s.y0, s.x1);
          const double v10 = fv.at(ch, s.y1, s.x0), v11 = fv.at(ch, s.y1, s.x1);
          if (gf) {
            df->at(ch, s.y0, s.x0) += d * (1 - s.fy) * (1 - s.fx);
            df->at(ch, s.y0, s.x1) += d * (1 - s.fy) * s.fx;
            df->at(ch, s.y1, s.x0) += d * s.fy * (1 - s.fx);
            df->at(ch, s.y1, s.x1) += d * s.fy * s.fx;
          }
          gx += d * ((1 - s.fy) * (v01 - v00) + s.fy * (v11 - v10));
          gy += d * ((1 - s.fx) * (v10 - v00) + s.fx * (v11 - v01));
        }
        if (gu) {
          du->at(0, yy, xx) += gx;
          du->at(1, yy, xx) += gy;
        }
      }
  });
  return {std::move(values), std::move(covered)};
}

Var local_correlation(const Var& fa, const Var& fb, int radius) {
  require_rank(fa, 3, "local_correlation");
  require_same_shape(fa, fb, "local_correlation");
  if (radius < 0) throw ValidationError("local_correlation: negative radius");
  const Tensor& av = fa.value();
  const Tensor& bv = fb.value();
  const int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  const int side = 2 * radius + 1;
  const double norm = 1.0 / c;
  Tensor y({side * side, h, w});
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int k = (dy + radius) * side + (dx + radius);
      for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy)
        for (int xx = std::max(0, -dx); xx < std::min(w, w - dx); ++xx) {
          double acc = 0.0;
          for (int ch = 0; ch < c; ++ch) acc += av.at(ch, yy, xx) * bv.at(ch, yy + dy, xx + dx);
          y.at(k, yy, xx) = acc * norm;
        }
    }
  return make_result(std::move(y), {fa, fb}, [=](Node& n) {
    const Tensor& av = input(n, 0).value;
    const Tensor& bv = input(n, 1).value;
    Tensor* ga = needs(n, 0) ? &input(n, 0).grad_buffer() : nullptr;
    Tensor* gb = needs(n, 1) ? &input(n, 1).grad_buffer() : nullptr;
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const int k = (dy + radius) * side + (dx + radius);
        for (int yy = std::max(0, -dy); yy < std::min(h, h - dy); ++yy)
          for (int xx = std::max(0, -dx); xx < std::min(w, w - dx); ++xx) {
            const double d = n.grad.at(k, yy, xx) * norm;
            if (d == 0.0) continue;
            for (int ch = 0; ch < c; ++ch) {
              if (ga) ga->at(ch, yy, xx) += d * bv.at(ch, yy + dy, xx + dx);
              if (gb) gb->at(ch, yy + dy, xx + dx) += d * av.at(ch, yy, xx);
            }
          }
      }
  });
}

Var masked_standardize_channels(const Var& x, const Tensor& mask, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || mask.shape() != xv.shape())
    throw ValidationError("masked_standardize_channels: mask must match " + shape_str(xv.shape()));
  const int c = xv.dim(0);
  const std::size_t plane = xv.size() / c;
  Tensor y(xv.shape());
  std::vector<double> inv_std(plane, 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    double n = 0.0, sum = 0.0;
    for (int ch = 0; ch < c; ++ch)
      if (mask[ch * plane + p] != 0.0) n += 1.0, sum += xv[ch * plane + p];
    if (n == 0.0) continue;
    const double mu = sum / n;
    double var = 0.0;
    for (int ch = 0; ch < c; ++ch)
      if (mask[ch * plane + p] != 0.0) var += (xv[ch * plane + p] - mu) * (xv[ch * plane + p] - mu);
    inv_std[p] = 1.0 / std::sqrt(var / n + eps * eps);
    for (int ch = 0; ch < c; ++ch)
      if (mask[ch * plane + p] != 0.0) y[ch * plane + p] = (xv[ch * plane + p] - mu) * inv_std[p];
  }
  Tensor yc = y;
  return make_result(std::move(y), {x}, [mask, yc = std::move(yc), inv_std = std::move(inv_std), c, plane](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t p = 0; p < plane; ++p) {
      double cnt = 0.0, mean_g = 0.0, mean_gy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = ch * plane + p;
        if (mask[i] == 0.0) continue;
        cnt += 1.0;
        mean_g += n.grad[i];
        mean_gy += n.grad[i] * yc[i];
      }
      if (cnt == 0.0) continue;
      mean_g /= cnt;
      mean_gy /= cnt;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t i = ch * plane + p;
        if (mask[i] != 0.0) g[i] += inv_std[p] * (n.grad[i] - mean_g - yc[i] * mean_gy);
      }
    }
  });
}

Var shifted_dot(const Var& a, std::span<const Var> sources, const std::vector<IntegerShift>& shifts, const Tensor& mask) {
  require_rank(a, 3, "shifted_dot");
  for (const Var& s : sources) require_same_shape(a, s, "shifted_dot");
  const int c = a.value().dim(0), h = a.value().dim(1), w = a.value().dim(2);
  const int bins = static_cast<int>(shifts.size());
  if (mask.shape() != Shape{bins, h, w}) throw ValidationError("shifted_dot: mask must be " + shape_str({bins, h, w}));
  for (const IntegerShift& s : shifts)
    if (s.source < 0 || s.source >= static_cast<int>(sources.size())) throw ValidationError("shifted_dot: bad source index");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  // Visits every in-grid (k, y, x) with its source pixel offset.
  auto sweep = [=](auto&& body) {
    for (int k = 0; k < bins; ++k) {
      const IntegerShift s = shifts[k];
      const int shift = s.dy * w + s.dx;
      for (int yy = std::max(0, -s.dy); yy < std::min(h, h - s.dy); ++yy)
        for (int xx = std::max(0, -s.dx); xx < std::min(w, w - s.dx); ++xx) {
          const std::size_t p = static_cast<std::size_t>(yy) * w + xx;
          const double m = mask[k * plane + p];
          if (m != 0.0) body(k, s.source, p, p + shift, m);
        }
    }
  };
  Tensor y({bins, h, w});
  const double* av = a.value().data();
  sweep([&](int k, int src, std::size_t p, std::size_t q, double m) {
    const double* bv = sources[src].value().data();
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) acc += av[ch * plane + p] * bv[ch * plane + q];
    y[k * plane + p] = acc * m;
  });
  std::vector<Var> inputs{a};
  inputs.insert(inputs.end(), sources.begin(), sources.end());
  return make_result(std::move(y), std::move(inputs), [=](Node& n) {
    const double* av = input(n, 0).value.data();
    double* ga = needs(n, 0) ? input(n, 0).grad_buffer().data() : nullptr;
    std::vector<const double*> bv;
    std::vector<double*> gb;
    for (std::size_t i = 1; i < n.inputs.size(); ++i) {
      bv.push_back(input(n, i).value.data());
      gb.push_back(needs(n, i) ? input(n, i).grad_buffer().data() : nullptr);
    }
    sweep([&](int k, int src, std::size_t p, std::size_t q, double m) {
      const double d = n.grad[k * plane + p] * m;
      if (d == 0.0) return;
      for (int ch = 0; ch < c; ++ch) {
        if (ga) ga[ch * plane + p] += d * bv[src][ch * plane + q];
        if (gb[src]) gb[src][ch * plane + q] += d * av[ch * plane + p];
      }
    });
  });
}

Var bce_with_logits(const Var& logits, const Tensor& target, const Tensor& mask) {
  const Tensor& s = logits.value();
  if (target.size() != s.size() || mask.size() != s.size())
    throw ValidationError("bce_with_logits: target/mask do not match logits " + shape_str(s.shape()));
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double z = s[i];
    total += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
    count += 1.0;
  }
  Tensor y({1}, count > 0 ? total / count : 0.0);
  return make_result(std::move(y), {logits}, [target, mask, count](Node& n) {
    if (count == 0) return;
    Tensor& g = input(n, 0).grad_buffer();
    const Tensor& s = input(n, 0).value;
    const double scale = n.grad[0] / count;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (mask[i] == 0.0) continue;
      const double z = s[i];
      const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      g[i] += scale * (p - target[i]);
    }
  });
}

}  // namespace regcd::ag
