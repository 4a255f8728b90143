#pragma once

#include <memory>

#include "regcd/config.hpp"
#include "regcd/data.hpp"
#include "regcd/encoder.hpp"

namespace regcd::testing {

// A model small enough for unit tests: 32x32 images, 8 channels everywhere.
inline RunConfig tiny_config() {
  RunConfig c;
  c.seed = 17;
  c.encoder.timesteps = {5, 20};
  c.encoder.widths = {8, 8, 8, 8, 8};
  c.encoder.denoiser.widths = {4, 4, 6, 6, 8};
  c.encoder.denoiser.embed_dim = 8;
  c.matcher.num_features = 16;
  c.flow.r = 5;
  c.flow.delta = 0.5;
  c.flow.width = 16;
  c.flow.blocks = 1;
  c.flow.heads = 2;
  c.flow.mlp_ratio = 2;
  c.flow.refine_hidden = 4;
  c.flow.coarse_scale = 2;
  c.cd.decoder_widths = {8, 8, 8, 8, 8};
  c.train.warmup = 2;
  c.train.ramp = 2;
  c.train.batch = 1;
  c.train.accumulation = 2;
  c.train.max_iterations = 6;
  c.train.lr = 1e-3;
  c.train.eval_every = 0;
  return c;
}

inline std::shared_ptr<ToyDenoiser> tiny_denoiser(const RunConfig& c) {
  return std::make_shared<ToyDenoiser>(c.encoder.denoiser, 3);
}

inline std::vector<SamplePair> tiny_samples(int n, std::uint64_t seed = 5) {
  std::vector<SamplePair> out;
  PerturbationRanges ranges = PerturbationRanges::identity();
  ranges.dx = ranges.dy = {-3, 3};
  for (const ToyItem& item : make_toy_corpus(n, 32, seed))
    out.push_back(generate_pair(item.image_a, item.image_b0, item.change, seed + out.size(), ranges));
  return out;
}

}  // namespace regcd::testing
