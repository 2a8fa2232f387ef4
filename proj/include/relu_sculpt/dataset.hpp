#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "relu_sculpt/tensor.hpp"

namespace relu_sculpt {

/// Labelled samples. `images` has shape [N, ...sample_shape].
struct Dataset {
  Tensor images;
  std::vector<std::uint32_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  Shape sample_shape() const;
  std::size_t sample_size() const;
  std::span<const float> sample(std::size_t i) const;
  /// Throws FormatError unless N matches and every label < class_count.
  void validate() const;
  /// Samples at `indices`, in that order.
  Dataset select(std::span<const std::size_t> indices) const;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// K isotropic unit-variance Gaussian clusters of `per_class` points in R^dims.
/// Centers sit on scaled basis vectors (K <= dims) or along the first axis,
/// so every pair of centers is at least `separation` apart.
Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dims, double separation, std::uint64_t seed);
/// K interleaved 2-D spiral arms of `per_class` points each.
Dataset gen_spirals(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed);

/// Seed-deterministic sample of n items without replacement, allocated across
/// classes proportionally (exact when divisible), returned in shuffled order.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);
std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed);
/// Stratified disjoint split covering the dataset.
DatasetSplit split(const Dataset& ds, const SplitSpec& spec);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (3 x 32 x 32, channel-planar, row-major).
inline constexpr std::size_t kCifarRecordBytes = 3073;

struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, 3072> pixels{};
  friend bool operator==(const CifarRecord&, const CifarRecord&) = default;
};

struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

std::vector<CifarRecord> parse_cifar10_records(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar10_records(std::span<const CifarRecord> records);
std::vector<CifarRecord> read_cifar10_records(const std::filesystem::path& path);
void write_cifar10_records(const std::filesystem::path& path, std::span<const CifarRecord> records);
/// Pixels scaled to [0,1], then (x - mean[c]) / std[c].
Dataset load_cifar10_bin(const std::filesystem::path& path, const Normalization& norm = {});
Dataset cifar10_to_dataset(std::span<const CifarRecord> records, const Normalization& norm = {});
/// Quantizes a [3,32,32] dataset with <= 10 classes into CIFAR records using a
/// global min-max affine map to 0..255.
std::vector<CifarRecord> dataset_to_cifar10(const Dataset& ds);

}  // namespace relu_sculpt
