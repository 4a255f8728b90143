#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "regcd/autograd.hpp"
#include "regcd/rng.hpp"

namespace regcd::nn {

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

Var parameter(Tensor value);
Tensor normal_tensor(Shape shape, Rng& rng, double stddev);

struct Conv2d {
  Var weight;  // {Cout, Cin, k, k}
  Var bias;    // {Cout}
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  // He-normal weights, zero bias.
  Conv2d(int in, int out, int kernel, int stride, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Linear {
  Var weight;  // {Cout, Cin}
  Var bias;    // {Cout}

  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0);
  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  explicit LayerNorm(int channels);
  Var operator()(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

std::size_t count_parameters(const ParamList& params);
void zero_grads(const ParamList& params);

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW() = default;
  AdamW(const ParamList& params, Options options);

  // Applies one update with `lr` to every parameter using its accumulated
  // gradient scaled by `grad_scale`, then clears gradients.
  // Entries with active[k] == false keep their value and moments.
  void step(const ParamList& params, double lr, double grad_scale = 1.0, const std::vector<bool>& active = {});

  std::int64_t steps() const noexcept { return t_; }
  // Moment buffers in parameter order: m_0, v_0, m_1, v_1, ...
  std::vector<Tensor>& moments() noexcept { return moments_; }
  const std::vector<Tensor>& moments() const noexcept { return moments_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }
  // Updates applied to each parameter; drives its bias correction.
  std::vector<std::int64_t>& counts() noexcept { return counts_; }
  const std::vector<std::int64_t>& counts() const noexcept { return counts_; }

 private:
  Options o_;
  std::int64_t t_ = 0;
  std::vector<std::int64_t> counts_;
  std::vector<Tensor> moments_;
};

// Versioned tensor container: "RGCD", uint32 version, uint64 header length,
// UTF-8 JSON header, then float64 payloads in header order; little-endian.
struct TensorArchive {
  std::string header_json = "{}";  // free-form metadata stored under "meta"
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

void store_params(TensorArchive& archive, const ParamList& params);
// Copies values into existing parameters; names and shapes must match.
void load_params(const TensorArchive& archive, const ParamList& params);

}  // namespace regcd::nn
