#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "regcd/autograd.hpp"
#include "regcd/rng.hpp"

namespace regcd::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Largest relative error between the analytic gradient of `f` and central
// differences, over every entry of every input. Relative error uses
// max(|a|, |n|, floor) as the denominator.
inline double gradcheck(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                        double step = 1e-5, double floor = 1e-4) {
  std::vector<Var> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  Var out = f(vars);
  backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor analytic = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          probe.emplace_back(std::move(t), false);
        }
        return f(probe).value()[0];
      };
      const double numeric = (eval(step) - eval(-step)) / (2 * step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

}  // namespace regcd::testing
