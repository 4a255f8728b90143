#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "regcd/geometry.hpp"

namespace regcd {

inline constexpr const char* kGeneratorVersion = "regcd-generator/1";

// ---- Procedural toy corpus -------------------------------------------------

struct ToyShape {
  enum class Kind { Rect, Ellipse };
  Kind kind = Kind::Rect;
  // Rect: pixel centers with x0 <= x < x0 + w and y0 <= y < y0 + h.
  // Ellipse: inscribed in the same box.
  double x0 = 0, y0 = 0, w = 1, h = 1;
  std::array<double, 3> color{1, 1, 1};
};

struct ToyCorpusOptions {
  int min_shapes = 3;  // unchanged shapes present in both images
  int max_shapes = 6;
  int min_changes = 1;  // shapes present in exactly one image
  int max_changes = 3;
  double min_extent = 0.125;  // shape side as a fraction of the image size
  double max_extent = 0.25;
  double photometric_jitter = 0.03;
};

// A co-registered pair before perturbation; the mask marks changed pixels.
struct ToyItem {
  Tensor image_a;   // {3, H, W}
  Tensor image_b0;  // {3, H, W}
  Tensor change;    // {1, H, W}
};

// Multi-octave value noise in [0, 1], {channels, size, size}.
Tensor value_noise(int size, int channels, std::uint64_t seed);
Tensor shape_footprint(const ToyShape& shape, int height, int width);
void paint_shape(Tensor& image, const ToyShape& shape);

// Paints `common` on both backgrounds, then `removed` on A and `added` on B.
// The change mask is the union of the removed and added footprints.
ToyItem render_toy_pair(const Tensor& background_a, const Tensor& background_b, const std::vector<ToyShape>& common,
                        const std::vector<ToyShape>& removed, const std::vector<ToyShape>& added);

ToyItem make_toy_item(int size, std::uint64_t seed, const ToyCorpusOptions& options = {});
std::vector<ToyItem> make_toy_corpus(int n, int size, std::uint64_t seed, const ToyCorpusOptions& options = {});

// Loads {a, b, mask}/<name>.png triples from a directory, sorted by name.
std::vector<ToyItem> load_image_corpus(const std::filesystem::path& dir);

// ---- Supervised pairs --------------------------------------------------------

struct SamplePair {
  Tensor image_a;  // {3, H, W}
  Tensor image_b;  // {3, H, W}, perturbed
  DenseFlow flow;  // B -> A ground truth with validity
  Tensor change;   // {1, H, W}, frame A
  std::uint64_t seed = 0;
  AffineParams params;
  AffineTransform transform;

  PixelGrid grid() const { return {image_a.dim(1), image_a.dim(2)}; }
};

// image_b(x) = image_b0(A(x)) with A = sample_affine(seed, ranges).
SamplePair generate_pair(const Tensor& image_a, const Tensor& image_b0, const Tensor& change, std::uint64_t seed,
                         const PerturbationRanges& ranges);

// One of the eight flips/transposes of a square pair (code bit 0: mirror x,
// bit 1: mirror y, bit 2: transpose), applied to images, masks and flow
// alike so the ground truth stays exact. Non-square pairs ignore bit 2.
SamplePair dihedral(const SamplePair& pair, int code);

// ---- On-disk layout: root/split/{a,b,flow,mask,valid,meta}/NNNNNN.* ---------

std::string sample_id(int index);
void write_sample(const std::filesystem::path& split_dir, const std::string& id, const SamplePair& pair);
SamplePair read_sample(const std::filesystem::path& split_dir, const std::string& id);

struct ManifestRecord {
  std::string id;
  std::uint64_t seed = 0;
  AffineParams params;
  std::array<double, 6> matrix{};
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::string generator = kGeneratorVersion;
  std::uint64_t global_seed = 0;
  int size = 0;
  std::string corpus;
  PerturbationRanges ranges;
  std::string config_hash;
  std::vector<ManifestRecord> records;
};

void write_manifest(const std::filesystem::path& split_dir, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& split_dir);

struct GenerateOptions {
  std::string corpus = "toy";  // toy | dir
  std::filesystem::path corpus_dir;
  int n = 200;
  int size = 64;
  std::uint64_t seed = 0;
  std::string split = "train";
  PerturbationRanges ranges;
  ToyCorpusOptions toy;
};

// Seeds of sample i of a split; independent of generation order.
std::uint64_t corpus_seed(std::uint64_t global_seed, const std::string& split, int index);
std::uint64_t perturbation_seed(std::uint64_t global_seed, const std::string& split, int index);

DatasetManifest generate_dataset(const std::filesystem::path& root, const GenerateOptions& options);

// Reads every sample listed in the manifest and checks the pair invariants.
std::vector<SamplePair> load_split(const std::filesystem::path& root, const std::string& split);

}  // namespace regcd
