#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "relu_sculpt/network.hpp"
#include "relu_sculpt/tensor.hpp"

namespace relu_sculpt {

template <typename T>
struct LayerParameters {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  friend bool operator==(const LayerParameters&, const LayerParameters&) = default;
};

/// Trainable weights keyed by spec layer index. Layers without weights hold
/// no entry. conv2d weights are [out, in, k, k]; linear weights are
/// [out, in]; residual shortcuts are [out, in, 1, 1].
template <typename T>
class BasicParameters {
 public:
  BasicParameters() = default;

  /// All-zero parameters shaped for `net`.
  static BasicParameters zeros(const Network& net);
  /// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases.
  static BasicParameters kaiming_uniform(const Network& net, std::uint64_t seed);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  bool has(std::size_t layer) const noexcept { return layer < layers_.size() && layers_[layer].has_value(); }
  LayerParameters<T>& at(std::size_t layer) { return layers_.at(layer).value(); }
  const LayerParameters<T>& at(std::size_t layer) const { return layers_.at(layer).value(); }

  /// Weight then bias of every parameterized layer in index order.
  std::vector<std::span<T>> spans();
  std::vector<std::span<const T>> spans() const;
  std::size_t scalar_count() const;

  void fill(T value);
  bool all_finite() const;
  /// Throws ShapeError unless every tensor matches `net`.
  void check_matches(const Network& net) const;

  template <typename U>
  BasicParameters<U> cast() const {
    BasicParameters<U> out;
    out.layers_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i]) out.layers_[i] = LayerParameters<U>{layers_[i]->weight.template cast<U>(), layers_[i]->bias.template cast<U>()};
    }
    return out;
  }

  friend bool operator==(const BasicParameters&, const BasicParameters&) = default;

 private:
  template <typename>
  friend class BasicParameters;

  std::vector<std::optional<LayerParameters<T>>> layers_;
};

using Parameters = BasicParameters<float>;
using ParametersD = BasicParameters<double>;

extern template class BasicParameters<float>;
extern template class BasicParameters<double>;

/// Checkpoint codec: "RSW1", then per parameterized layer: u32 layer index,
/// u64 element count, little-endian float32 weight values followed by bias.
std::vector<std::uint8_t> serialize_parameters(const Parameters& params);
Parameters deserialize_parameters(std::span<const std::uint8_t> bytes, const Network& net);
void save_parameters(const std::filesystem::path& path, const Parameters& params);
Parameters load_parameters(const std::filesystem::path& path, const Network& net);

}  // namespace relu_sculpt
