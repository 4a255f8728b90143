#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace regcd::detail {

struct Taps {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-center resampling taps along one axis with edge clamping:
// output sample o reads input coordinate (o + 0.5) * in / out - 0.5.
inline std::vector<Taps> resize_taps(int in, int out) {
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

}  // namespace regcd::detail
