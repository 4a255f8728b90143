#include "regcd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "regcd/error.hpp"
#include "regcd/hash.hpp"
#include "regcd/io.hpp"
#include "regcd/rng.hpp"

namespace regcd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

void check_same_grid(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ValidationError(std::string(what) + ": dimension mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

ToyShape random_shape(Rng& rng, int size, const ToyCorpusOptions& o) {
  ToyShape s;
  s.kind = rng.uniform() < 0.6 ? ToyShape::Kind::Rect : ToyShape::Kind::Ellipse;
  const int lo = std::max(2, static_cast<int>(std::lround(o.min_extent * size)));
  const int hi = std::max(lo, static_cast<int>(std::lround(o.max_extent * size)));
  s.w = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  s.h = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  s.x0 = static_cast<double>(rng.below(static_cast<std::uint64_t>(size - static_cast<int>(s.w) + 1)));
  s.y0 = static_cast<double>(rng.below(static_cast<std::uint64_t>(size - static_cast<int>(s.h) + 1)));
  const bool bright = rng.uniform() < 0.5;
  const double base = bright ? rng.uniform(0.75, 0.95) : rng.uniform(0.05, 0.25);
  for (double& c : s.color) c = std::clamp(base + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  return s;
}

Tensor textured_background(int size, std::uint64_t seed) {
  Tensor lum = value_noise(size, 1, derive_seed(seed, 0));
  Tensor chroma = value_noise(size, 3, derive_seed(seed, 1));
  Tensor bg({3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        bg.at(c, y, x) = std::clamp(0.2 + 0.6 * lum.at(0, y, x) + 0.2 * (chroma.at(c, y, x) - 0.5), 0.0, 1.0);
  return bg;
}

json ranges_json(const PerturbationRanges& r) {
  return {{"dx", {r.dx.lo, r.dx.hi}},
          {"dy", {r.dy.lo, r.dy.hi}},
          {"theta", {r.theta_deg.lo, r.theta_deg.hi}},
          {"scale", {r.scale.lo, r.scale.hi}}};
}

PerturbationRanges ranges_from_json(const json& j) {
  auto iv = [&](const char* k) { return Interval{j.at(k).at(0).get<double>(), j.at(k).at(1).get<double>()}; };
  return {iv("dx"), iv("dy"), iv("theta"), iv("scale")};
}

json params_json(const AffineParams& p) {
  return {{"dx", p.dx}, {"dy", p.dy}, {"theta_deg", p.theta_deg}, {"scale", p.scale}};
}

AffineParams params_from_json(const json& j) {
  return {j.at("dx").get<double>(), j.at("dy").get<double>(), j.at("theta_deg").get<double>(),
          j.at("scale").get<double>()};
}

}  // namespace

Tensor value_noise(int size, int channels, std::uint64_t seed) {
  if (size < 1) throw ValidationError("value_noise: size must be >= 1");
  Tensor out({channels, size, size});
  Rng rng(seed);
  double total = 0.0;
  double amplitude = 1.0;
  for (int cells = 2; cells <= std::max(2, size / 4); cells *= 2, amplitude *= 0.5) {
    const int n = cells + 1;
    std::vector<double> lattice(static_cast<std::size_t>(channels) * n * n);
    for (double& v : lattice) v = rng.uniform();
    const double step = static_cast<double>(cells) / size;
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < size; ++y) {
        const double fy = (y + 0.5) * step;
        const int iy = std::min(static_cast<int>(fy), cells - 1);
        const double ty = smoothstep(fy - iy);
        for (int x = 0; x < size; ++x) {
          const double fx = (x + 0.5) * step;
          const int ix = std::min(static_cast<int>(fx), cells - 1);
          const double tx = smoothstep(fx - ix);
          auto at = [&](int yy, int xx) { return lattice[(static_cast<std::size_t>(c) * n + yy) * n + xx]; };
          const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
          const double bot = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
          out.at(c, y, x) += amplitude * (top * (1 - ty) + bot * ty);
        }
      }
    total += amplitude;
  }
  for (double& v : out.values()) v /= total;
  return out;
}

Tensor shape_footprint(const ToyShape& s, int height, int width) {
  Tensor m({1, height, width});
  const double cx = s.x0 + (s.w - 1) / 2.0, cy = s.y0 + (s.h - 1) / 2.0;
  const double rx = s.w / 2.0, ry = s.h / 2.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      bool in;
      if (s.kind == ToyShape::Kind::Rect) {
        in = x >= s.x0 && x < s.x0 + s.w && y >= s.y0 && y < s.y0 + s.h;
      } else {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        in = dx * dx + dy * dy <= 1.0;
      }
      m.at(0, y, x) = in ? 1.0 : 0.0;
    }
  return m;
}

void paint_shape(Tensor& image, const ToyShape& shape) {
  const Tensor m = shape_footprint(shape, image.dim(1), image.dim(2));
  for (int c = 0; c < image.dim(0); ++c)
    for (int y = 0; y < image.dim(1); ++y)
      for (int x = 0; x < image.dim(2); ++x)
        if (m.at(0, y, x) != 0.0) image.at(c, y, x) = shape.color[static_cast<std::size_t>(c % 3)];
}

ToyItem render_toy_pair(const Tensor& background_a, const Tensor& background_b, const std::vector<ToyShape>& common,
                        const std::vector<ToyShape>& removed, const std::vector<ToyShape>& added) {
  check_same_grid(background_a, background_b, "render_toy_pair");
  ToyItem item{background_a, background_b, Tensor({1, background_a.dim(1), background_a.dim(2)})};
  for (const auto& s : common) {
    paint_shape(item.image_a, s);
    paint_shape(item.image_b0, s);
  }
  auto mark = [&](const ToyShape& s) {
    const Tensor m = shape_footprint(s, item.change.dim(1), item.change.dim(2));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i] != 0.0) item.change[i] = 1.0;
  };
  for (const auto& s : removed) {
    paint_shape(item.image_a, s);
    mark(s);
  }
  for (const auto& s : added) {
    paint_shape(item.image_b0, s);
    mark(s);
  }
  return item;
}

ToyItem make_toy_item(int size, std::uint64_t seed, const ToyCorpusOptions& o) {
  if (size < 32) throw ValidationError("toy corpus size must be >= 32, got " + std::to_string(size));
  if (o.min_shapes < 0 || o.max_shapes < o.min_shapes || o.min_changes < 0 || o.max_changes < o.min_changes)
    throw ValidationError("toy corpus shape counts must satisfy 0 <= min <= max");
  Rng rng(derive_seed(seed, 2));
  const Tensor bg = textured_background(size, derive_seed(seed, 1));
  Tensor bg_b = bg;
  const double gain = 1.0 + rng.uniform(-o.photometric_jitter, o.photometric_jitter);
  const double offset = rng.uniform(-o.photometric_jitter, o.photometric_jitter);
  for (double& v : bg_b.values()) v = std::clamp(v * gain + offset, 0.0, 1.0);

  const int n_common = o.min_shapes + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_shapes - o.min_shapes + 1)));
  const int n_change = o.min_changes + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_changes - o.min_changes + 1)));
  std::vector<ToyShape> common, removed, added;
  for (int i = 0; i < n_common; ++i) common.push_back(random_shape(rng, size, o));
  for (int i = 0; i < n_change; ++i) {
    ToyShape s = random_shape(rng, size, o);
    (rng.uniform() < 0.5 ? removed : added).push_back(s);
  }
  return render_toy_pair(bg, bg_b, common, removed, added);
}

std::vector<ToyItem> make_toy_corpus(int n, int size, std::uint64_t seed, const ToyCorpusOptions& options) {
  std::vector<ToyItem> items;
  items.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) items.push_back(make_toy_item(size, derive_seed(seed, static_cast<std::uint64_t>(i)), options));
  return items;
}

std::vector<ToyItem> load_image_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir / "a")) throw IoError("corpus directory '" + dir.string() + "' has no 'a' subdirectory");
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(dir / "a"))
    if (e.path().extension() == ".png") names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  std::vector<ToyItem> items;
  for (const auto& name : names) {
    ToyItem item{read_png(dir / "a" / name), read_png(dir / "b" / name), read_mask_png(dir / "mask" / name)};
    if (item.image_a.dim(0) != 3 || item.image_b0.dim(0) != 3)
      throw ValidationError("corpus image '" + name.string() + "' is not RGB");
    check_same_grid(item.image_a, item.image_b0, "corpus pair");
    check_same_grid(item.image_a, item.change, "corpus mask");
    items.push_back(std::move(item));
  }
  return items;
}

SamplePair dihedral(const SamplePair& pair, int code) {
  const int h = pair.image_a.dim(1), w = pair.image_a.dim(2);
  const bool mx = code & 1, my = code & 2, tr = (code & 4) && h == w;
  if (!mx && !my && !tr) return pair;
  auto remap = [&](const Tensor& src, bool flow) {
    Tensor out(src.shape());
    for (int c = 0; c < src.dim(0); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sx = mx ? w - 1 - x : x, sy = my ? h - 1 - y : y;
          int cs = c;
          double v;
          if (tr) {
            if (flow) cs = 1 - c;
            v = src.at(cs, sx, sy);
          } else {
            v = src.at(cs, sy, sx);
          }
          if (flow && ((c == 0 && mx) || (c == 1 && my))) v = -v;
          out.at(c, y, x) = v;
        }
    return out;
  };
  SamplePair out = pair;
  out.image_a = remap(pair.image_a, false);
  out.image_b = remap(pair.image_b, false);
  out.change = remap(pair.change, false);
  out.flow = DenseFlow(remap(pair.flow.uv, true), remap(pair.flow.valid, false));
  return out;
}

SamplePair generate_pair(const Tensor& image_a, const Tensor& image_b0, const Tensor& change, std::uint64_t seed,
                         const PerturbationRanges& ranges) {
  check_same_grid(image_a, image_b0, "generate_pair");
  check_same_grid(image_a, change, "generate_pair");
  const PixelGrid grid(image_a.dim(1), image_a.dim(2));
  SamplePair s;
  s.seed = seed;
  s.params = sample_affine_params(seed, ranges);
  s.transform = AffineTransform::from_params(s.params, grid);
  s.image_a = image_a;
  s.image_b = warp_affine(image_b0, s.transform).values;
  s.flow = flow_from_affine(s.transform, grid);
  s.change = change;
  return s;
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

void write_sample(const fs::path& dir, const std::string& id, const SamplePair& s) {
  for (const char* sub : {"a", "b", "flow", "mask", "valid", "meta"}) fs::create_directories(dir / sub);
  write_png(dir / "a" / (id + ".png"), s.image_a);
  write_png(dir / "b" / (id + ".png"), s.image_b);
  write_flow_file(dir / "flow" / (id + ".flo"), s.flow.uv);
  write_mask_png(dir / "mask" / (id + ".png"), s.change);
  write_mask_png(dir / "valid" / (id + ".png"), s.flow.valid);
  const auto& m = s.transform.matrix();
  const json meta = {{"id", id},
                     {"seed", s.seed},
                     {"params", params_json(s.params)},
                     {"matrix", std::vector<double>(m.begin(), m.end())}};
  write_text_file(dir / "meta" / (id + ".json"), meta.dump(2) + "\n");
}

SamplePair read_sample(const fs::path& dir, const std::string& id) {
  SamplePair s;
  s.image_a = read_png(dir / "a" / (id + ".png"));
  s.image_b = read_png(dir / "b" / (id + ".png"));
  s.flow = DenseFlow(read_flow_file(dir / "flow" / (id + ".flo")), read_mask_png(dir / "valid" / (id + ".png")));
  s.change = read_mask_png(dir / "mask" / (id + ".png"));
  json meta;
  try {
    meta = json::parse(read_text_file(dir / "meta" / (id + ".json")));
    s.seed = meta.at("seed").get<std::uint64_t>();
    s.params = params_from_json(meta.at("params"));
    const auto m = meta.at("matrix").get<std::vector<double>>();
    if (m.size() != 6) throw ValidationError("matrix must have 6 entries");
    s.transform = AffineTransform({m[0], m[1], m[2], m[3], m[4], m[5]});
  } catch (const json::exception& e) {
    throw CorruptFileError("sample metadata '" + id + "': " + e.what(), 0);
  }
  if (s.image_a.dim(0) != 3 || s.image_b.dim(0) != 3) throw ValidationError("sample " + id + " images must be RGB");
  check_same_grid(s.image_a, s.image_b, ("sample " + id).c_str());
  check_same_grid(s.image_a, s.flow.uv, ("sample " + id).c_str());
  check_same_grid(s.image_a, s.change, ("sample " + id).c_str());
  return s;
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) {
  json records = json::array();
  for (const auto& r : m.records)
    records.push_back({{"id", r.id},
                       {"seed", r.seed},
                       {"params", params_json(r.params)},
                       {"matrix", std::vector<double>(r.matrix.begin(), r.matrix.end())},
                       {"files",
                        {{"a", "a/" + r.id + ".png"},
                         {"b", "b/" + r.id + ".png"},
                         {"flow", "flow/" + r.id + ".flo"},
                         {"mask", "mask/" + r.id + ".png"},
                         {"valid", "valid/" + r.id + ".png"},
                         {"meta", "meta/" + r.id + ".json"}}}});
  const json j = {{"root", m.root},
                  {"split", m.split},
                  {"generator", m.generator},
                  {"global_seed", m.global_seed},
                  {"size", m.size},
                  {"corpus", m.corpus},
                  {"ranges", ranges_json(m.ranges)},
                  {"config_hash", m.config_hash},
                  {"records", records}};
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("missing manifest '" + path.string() + "'");
  DatasetManifest m;
  try {
    const json j = json::parse(read_text_file(path));
    m.root = j.at("root").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.generator = j.at("generator").get<std::string>();
    m.global_seed = j.at("global_seed").get<std::uint64_t>();
    m.size = j.at("size").get<int>();
    m.corpus = j.at("corpus").get<std::string>();
    m.ranges = ranges_from_json(j.at("ranges"));
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.seed = r.at("seed").get<std::uint64_t>();
      rec.params = params_from_json(r.at("params"));
      const auto mat = r.at("matrix").get<std::vector<double>>();
      if (mat.size() != 6) throw ValidationError("manifest matrix must have 6 entries");
      std::copy(mat.begin(), mat.end(), rec.matrix.begin());
      m.records.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw CorruptFileError("manifest '" + path.string() + "': " + e.what(), 0);
  }
  return m;
}

std::uint64_t corpus_seed(std::uint64_t global_seed, const std::string& split, int index) {
  return derive_seed(global_seed, fnv1a64(split), 2 * static_cast<std::uint64_t>(index));
}

std::uint64_t perturbation_seed(std::uint64_t global_seed, const std::string& split, int index) {
  return derive_seed(global_seed, fnv1a64(split), 2 * static_cast<std::uint64_t>(index) + 1);
}

DatasetManifest generate_dataset(const fs::path& root, const GenerateOptions& o) {
  o.ranges.validate();
  if (o.n < 0) throw ValidationError("sample count must be >= 0");
  if (o.split.empty() || o.split.find('/') != std::string::npos) throw ValidationError("invalid split name");
  std::vector<ToyItem> dir_items;
  if (o.corpus == "dir") {
    dir_items = load_image_corpus(o.corpus_dir);
    if (static_cast<int>(dir_items.size()) < o.n)
      throw ValidationError("corpus directory holds " + std::to_string(dir_items.size()) + " pairs, " +
                            std::to_string(o.n) + " requested");
  } else if (o.corpus != "toy") {
    throw UsageError("unknown corpus '" + o.corpus + "' (expected toy or dir)");
  }

  DatasetManifest m;
  m.root = root.string();
  m.split = o.split;
  m.global_seed = o.seed;
  m.size = o.size;
  m.corpus = o.corpus;
  m.ranges = o.ranges;
  const json cfg = {{"corpus", o.corpus},
                    {"n", o.n},
                    {"size", o.size},
                    {"seed", o.seed},
                    {"split", o.split},
                    {"ranges", ranges_json(o.ranges)},
                    {"toy",
                     {{"min_shapes", o.toy.min_shapes},
                      {"max_shapes", o.toy.max_shapes},
                      {"min_changes", o.toy.min_changes},
                      {"max_changes", o.toy.max_changes},
                      {"min_extent", o.toy.min_extent},
                      {"max_extent", o.toy.max_extent},
                      {"photometric_jitter", o.toy.photometric_jitter}}},
                    {"generator", kGeneratorVersion}};
  m.config_hash = hex64(fnv1a64(cfg.dump()));

  const fs::path dir = root / o.split;
  fs::create_directories(dir);
  for (int i = 0; i < o.n; ++i) {
    const ToyItem item = o.corpus == "toy" ? make_toy_item(o.size, corpus_seed(o.seed, o.split, i), o.toy)
                                           : dir_items[static_cast<std::size_t>(i)];
    const SamplePair pair =
        generate_pair(item.image_a, item.image_b0, item.change, perturbation_seed(o.seed, o.split, i), o.ranges);
    const std::string id = sample_id(i);
    write_sample(dir, id, pair);
    m.records.push_back({id, pair.seed, pair.params, pair.transform.matrix()});
  }
  write_manifest(dir, m);
  return m;
}

std::vector<SamplePair> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  const DatasetManifest m = read_manifest(dir);
  std::vector<SamplePair> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    SamplePair s = read_sample(dir, r.id);
    if (!out.empty() && !(s.grid() == out.front().grid()))
      throw ValidationError("sample " + r.id + " has a different size than the rest of split " + split);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace regcd
