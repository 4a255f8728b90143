#include "regcd/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "regcd/error.hpp"
#include "regcd/ops.hpp"

namespace regcd::nn {

Var parameter(Tensor value) { return Var(std::move(value), true); }

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  rng.fill_normal(t.values());
  for (double& v : t.values()) v *= stddev;
  return t;
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, Rng& rng) : stride(stride_), pad(kernel / 2) {
  weight = parameter(normal_tensor({out, in, kernel, kernel}, rng, std::sqrt(2.0 / (in * kernel * kernel))));
  bias = parameter(Tensor({out}));
}

Var Conv2d::operator()(const Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear::Linear(int in, int out, Rng& rng, double gain) {
  weight = parameter(normal_tensor({out, in}, rng, gain / std::sqrt(static_cast<double>(in))));
  bias = parameter(Tensor({out}));
}

Var Linear::operator()(const Var& x) const { return ag::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int channels) : gamma(parameter(Tensor({channels}, 1.0))), beta(parameter(Tensor({channels}))) {}

Var LayerNorm::operator()(const Var& x) const { return ag::layer_norm_channels(x, gamma, beta); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

AdamW::AdamW(const ParamList& params, Options options) : o_(options) {
  for (const auto& p : params) {
    moments_.emplace_back(p.var.shape());
    moments_.emplace_back(p.var.shape());
  }
  counts_.assign(params.size(), 0);
}

void AdamW::step(const ParamList& params, double lr, double grad_scale, const std::vector<bool>& active) {
  if (moments_.size() != 2 * params.size()) throw ValidationError("optimizer state does not match parameter list");
  if (!active.empty() && active.size() != params.size()) throw ValidationError("optimizer mask does not match parameter list");
  ++t_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var p = params[k].var;
    if (!active.empty() && !active[k]) {
      p.zero_grad();
      continue;
    }
    const double n = static_cast<double>(++counts_[k]);
    const double c1 = 1.0 - std::pow(o_.beta1, n);
    const double c2 = 1.0 - std::pow(o_.beta2, n);
    Tensor& w = p.mutable_value();
    Tensor& m = moments_[2 * k];
    Tensor& v = moments_[2 * k + 1];
    const auto& node = p.node();
    const bool has = node->has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? node->grad[i] * grad_scale : 0.0;
      m[i] = o_.beta1 * m[i] + (1 - o_.beta1) * g;
      v[i] = o_.beta2 * v[i] + (1 - o_.beta2) * g * g;
      w[i] -= lr * o_.weight_decay * w[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o_.eps);
    }
    p.zero_grad();
  }
}

const Tensor& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValidationError("archive has no tensor '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  using nlohmann::json;
  json entries = json::array();
  for (const auto& [name, t] : archive.tensors) entries.push_back({{"name", name}, {"shape", t.shape()}});
  const json header = {{"tensors", entries}, {"meta", json::parse(archive.header_json)}};
  const std::string h = header.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    const std::uint32_t version = kArchiveVersion;
    const std::uint64_t len = h.size();
    out.write("RGCD", 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, t] : archive.tensors)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    out.flush();
    if (!out) throw IoError("short write to '" + tmp.string() + "' (disk full?)");
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (b.size() < 16) throw CorruptFileError("'" + path.string() + "' is truncated", b.size());
  if (std::memcmp(b.data(), "RGCD", 4) != 0) throw CorruptFileError("'" + path.string() + "' is not an archive", 0);
  std::uint32_t version;
  std::uint64_t len;
  std::memcpy(&version, b.data() + 4, 4);
  std::memcpy(&len, b.data() + 8, 8);
  if (version != kArchiveVersion)
    throw CorruptFileError("'" + path.string() + "' has unsupported version " + std::to_string(version), 4);
  if (16 + len > b.size()) throw CorruptFileError("'" + path.string() + "' header is truncated", b.size());
  TensorArchive a;
  json header;
  try {
    header = json::parse(std::string(b.data() + 16, len));
  } catch (const json::exception& e) {
    throw CorruptFileError("'" + path.string() + "' header: " + e.what(), 16);
  }
  a.header_json = header.at("meta").dump();
  std::size_t off = 16 + len;
  for (const auto& e : header.at("tensors")) {
    Tensor t(e.at("shape").get<Shape>());
    const std::size_t bytes = t.size() * sizeof(double);
    if (off + bytes > b.size())
      throw CorruptFileError("'" + path.string() + "' payload truncated: expected " + std::to_string(off + bytes) +
                                 " bytes, got " + std::to_string(b.size()),
                             b.size());
    std::memcpy(t.data(), b.data() + off, bytes);
    off += bytes;
    a.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  if (off != b.size()) throw CorruptFileError("'" + path.string() + "' has trailing bytes", off);
  return a;
}

void store_params(TensorArchive& archive, const ParamList& params) {
  for (const auto& p : params) archive.tensors.emplace_back(p.name, p.var.value());
}

void load_params(const TensorArchive& archive, const ParamList& params) {
  for (const auto& p : params) {
    const Tensor& t = archive.get(p.name);
    if (t.shape() != p.var.shape())
      throw ValidationError("parameter '" + p.name + "' has shape " + shape_str(p.var.shape()) + ", archive holds " +
                            shape_str(t.shape()));
    Var v = p.var;
    v.mutable_value() = t;
  }
}

}  // namespace regcd::nn
