#include "relu_sculpt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "relu_sculpt/detail/bytes.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/rng.hpp"

namespace relu_sculpt {

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  return s.empty() ? Shape{} : Shape(s.begin() + 1, s.end());
}

std::size_t Dataset::sample_size() const { return element_count(sample_shape()); }

std::span<const float> Dataset::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return images.values().subspan(i * n, n);
}

void Dataset::validate() const {
  if (images.rank() < 2 || images.shape()[0] != labels.size()) {
    throw FormatError("dataset: image tensor does not hold one sample per label");
  }
  for (std::uint32_t l : labels) {
    if (l >= class_count) throw FormatError("dataset: label " + std::to_string(l) + " >= class count");
  }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  const std::size_t n = sample_size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<float> data;
  data.reserve(indices.size() * n);
  Dataset out;
  out.class_count = class_count;
  for (std::size_t idx : indices) {
    const auto s = sample(idx);
    data.insert(data.end(), s.begin(), s.end());
    out.labels.push_back(labels.at(idx));
  }
  out.images = Tensor(shape, std::move(data));
  return out;
}

Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dims, double separation,
                  std::uint64_t seed) {
  if (classes < 2) throw PreconditionError("gen_blobs: need at least 2 classes");
  if (per_class < 1) throw PreconditionError("gen_blobs: per_class must be positive");
  if (dims < 1) throw PreconditionError("gen_blobs: dims must be positive");
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dims, 0.0));
  for (std::size_t k = 0; k < classes; ++k) {
    if (classes <= dims) {
      centers[k][k] = separation / std::numbers::sqrt2;  // |e_i - e_j| * s / sqrt2 = s
    } else {
      centers[k][0] = static_cast<double>(k) * separation;
    }
  }
  rng::Stream stream(seed, "blobs");
  Dataset ds;
  ds.class_count = classes;
  std::vector<float> data;
  data.reserve(classes * per_class * dims);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t d = 0; d < dims; ++d) data.push_back(static_cast<float>(centers[k][d] + stream.normal()));
      ds.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  ds.images = Tensor({classes * per_class, dims}, std::move(data));
  return ds;
}

Dataset gen_spirals(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  if (classes < 2) throw PreconditionError("gen_spirals: need at least 2 classes");
  if (per_class < 1) throw PreconditionError("gen_spirals: empty dataset (per_class = 0)");
  rng::Stream stream(seed, "spirals");
  Dataset ds;
  ds.class_count = classes;
  std::vector<float> data;
  data.reserve(classes * per_class * 2);
  constexpr double kTurnSpan = 2.5 * std::numbers::pi;
  for (std::size_t k = 0; k < classes; ++k) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      const double r = (static_cast<double>(i) + 0.5) / static_cast<double>(per_class);
      const double angle = phase + kTurnSpan * r;
      const double nx = noise > 0.0 ? noise * stream.normal() : 0.0;
      const double ny = noise > 0.0 ? noise * stream.normal() : 0.0;
      data.push_back(static_cast<float>(r * std::cos(angle) + nx));
      data.push_back(static_cast<float>(r * std::sin(angle) + ny));
      ds.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  ds.images = Tensor({classes * per_class, 2}, std::move(data));
  return ds;
}

std::vector<std::size_t> subset_indices(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw PreconditionError("subset: n must be positive");
  if (n > ds.size()) {
    throw PreconditionError("subset: requested " + std::to_string(n) + " of " + std::to_string(ds.size()) + " samples");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  // Largest-remainder allocation of n across classes.
  const std::size_t N = ds.size();
  std::vector<std::size_t> alloc(ds.class_count);
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder, class)
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    const std::size_t num = n * by_class[k].size();
    alloc[k] = num / N;
    assigned += alloc[k];
    remainders.emplace_back(num % N, k);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n; ++j) {
    const std::size_t k = remainders[j % remainders.size()].second;
    if (alloc[k] < by_class[k].size()) {
      ++alloc[k];
      ++assigned;
    }
  }

  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    rng::Stream stream(seed, "subset-class", {k});
    rng::shuffle(std::span<std::size_t>(by_class[k]), stream);
    out.insert(out.end(), by_class[k].begin(), by_class[k].begin() + static_cast<std::ptrdiff_t>(alloc[k]));
  }
  rng::Stream order(seed, "subset-order");
  rng::shuffle(std::span<std::size_t>(out), order);
  return out;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const auto idx = subset_indices(ds, n, seed);
  return ds.select(idx);
}

DatasetSplit split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw PreconditionError("split: train_fraction must lie in (0, 1]");
  }
  if (ds.empty()) throw PreconditionError("split: empty dataset");
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(ds.size()))), 1, ds.size());
  auto train_idx = subset_indices(ds, n_train, spec.seed);
  std::vector<bool> in_train(ds.size(), false);
  for (std::size_t i : train_idx) in_train[i] = true;
  std::vector<std::size_t> test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!in_train[i]) test_idx.push_back(i);
  }
  return {ds.select(train_idx), ds.select(test_idx)};
}

std::vector<CifarRecord> parse_cifar10_records(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 binary: size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  std::vector<CifarRecord> out(bytes.size() / kCifarRecordBytes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto rec = bytes.subspan(r * kCifarRecordBytes, kCifarRecordBytes);
    if (rec[0] > 9) throw FormatError("CIFAR-10 binary: record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    out[r].label = rec[0];
    std::copy(rec.begin() + 1, rec.end(), out[r].pixels.begin());
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar10_records(std::span<const CifarRecord> records) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size() * kCifarRecordBytes);
  for (const auto& r : records) {
    out.push_back(r.label);
    out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  }
  return out;
}

std::vector<CifarRecord> read_cifar10_records(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return parse_cifar10_records(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_cifar10_records(const std::filesystem::path& path, std::span<const CifarRecord> records) {
  detail::write_file(path, encode_cifar10_records(records));
}

Dataset cifar10_to_dataset(std::span<const CifarRecord> records, const Normalization& norm) {
  Dataset ds;
  ds.class_count = 10;
  std::vector<float> data;
  data.reserve(records.size() * 3072);
  for (const auto& r : records) {
    for (std::size_t i = 0; i < 3072; ++i) {
      const std::size_t c = i / 1024;
      data.push_back((static_cast<float>(r.pixels[i]) / 255.0f - norm.mean[c]) / norm.std[c]);
    }
    ds.labels.push_back(r.label);
  }
  ds.images = Tensor({records.size(), 3, 32, 32}, std::move(data));
  return ds;
}

Dataset load_cifar10_bin(const std::filesystem::path& path, const Normalization& norm) {
  const auto records = read_cifar10_records(path);
  return cifar10_to_dataset(records, norm);
}

std::vector<CifarRecord> dataset_to_cifar10(const Dataset& ds) {
  if (ds.sample_shape() != Shape{3, 32, 32}) throw PreconditionError("CIFAR export needs [3,32,32] samples");
  if (ds.class_count > 10) throw PreconditionError("CIFAR export supports at most 10 classes");
  const auto values = ds.images.values();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const float lo = values.empty() ? 0.0f : *lo_it;
  const float span = values.empty() || *hi_it == lo ? 1.0f : *hi_it - lo;
  std::vector<CifarRecord> out(ds.size());
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out[r].label = static_cast<std::uint8_t>(ds.labels[r]);
    const auto s = ds.sample(r);
    for (std::size_t i = 0; i < 3072; ++i) {
      out[r].pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp((s[i] - lo) / span, 0.0f, 1.0f) * 255.0f));
    }
  }
  return out;
}

}  // namespace relu_sculpt
