#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "relu_sculpt/tensor.hpp"

#include <json.hpp>

namespace relu_sculpt {

/// Function computed at a maskable site whose mask bit is 0.
struct Replacement {
  enum class Kind { identity, poly };
  Kind kind = Kind::identity;
  // poly: a*v^2 + b*v + c
  double a = 0.25;
  double b = 0.5;
  double c = 0.0;

  static Replacement identity() { return {}; }
  static Replacement poly(double a, double b, double c) { return {Kind::poly, a, b, c}; }

  template <typename T>
  T value(T v) const noexcept {
    return kind == Kind::identity ? v : T(a) * v * v + T(b) * v + T(c);
  }
  template <typename T>
  T derivative(T v) const noexcept {
    return kind == Kind::identity ? T(1) : T(2 * a) * v + T(b);
  }

  friend bool operator==(const Replacement&, const Replacement&) = default;
};

namespace layers {

struct Conv2d {
  std::size_t in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};
struct Linear {
  std::size_t in = 0, out = 0;
  friend bool operator==(const Linear&, const Linear&) = default;
};
struct MaskableActivation {
  std::optional<std::size_t> site_count;  // inferred when absent, validated when present
  Replacement replacement;
  friend bool operator==(const MaskableActivation&, const MaskableActivation&) = default;
};
struct AvgPool {
  std::size_t k = 2;
  bool global = false;  // average the whole H x W map; k is unused
  friend bool operator==(const AvgPool&, const AvgPool&) = default;
};
struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};
struct ResidualBegin {
  std::string tag;
  friend bool operator==(const ResidualBegin&, const ResidualBegin&) = default;
};
/// 1x1 strided convolution applied to the skip path of a residual_add.
struct Shortcut {
  std::size_t out_ch = 0, stride = 1;
  friend bool operator==(const Shortcut&, const Shortcut&) = default;
};
struct ResidualAdd {
  std::string tag;
  std::optional<Shortcut> shortcut;
  friend bool operator==(const ResidualAdd&, const ResidualAdd&) = default;
};

}  // namespace layers

using Layer = std::variant<layers::Conv2d, layers::Linear, layers::MaskableActivation, layers::AvgPool,
                           layers::Flatten, layers::ResidualBegin, layers::ResidualAdd>;

std::string layer_type_name(const Layer& layer);

/// File a spec was read from and the line on which each layer starts.
struct SpecOrigin {
  std::filesystem::path file;
  std::vector<std::size_t> layer_lines;
  /// "file:line" for layer i, or just the file name when the line is unknown.
  std::string locate(std::size_t layer) const;
};

struct NetworkSpec {
  std::vector<Layer> layers;
  std::optional<Shape> input_shape;
  std::optional<SpecOrigin> origin;  // set by load_network_spec; ignored by ==
  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.layers == b.layers && a.input_shape == b.input_shape;
  }
};

/// Per-layer output shapes; throws ShapeError naming the first inconsistent layer.
std::vector<Shape> infer_shapes(const NetworkSpec& spec, const Shape& input_shape);

NetworkSpec network_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const NetworkSpec& spec);
/// Reads a spec document; errors carry file:line (syntax errors also the column).
NetworkSpec load_network_spec(const std::filesystem::path& path);

/// A spec bound to an input shape with every shape resolved.
class Network {
 public:
  Network(NetworkSpec spec, Shape input_shape);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const Layer& layer(std::size_t i) const { return spec_.layers[i]; }
  std::size_t layer_count() const noexcept { return spec_.layers.size(); }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const;
  const Shape& layer_output_shape(std::size_t i) const { return shapes_[i]; }
  const Shape& layer_input_shape(std::size_t i) const { return i == 0 ? input_shape_ : shapes_[i - 1]; }

  /// Spec indices of the maskable activation layers, in order.
  const std::vector<std::size_t>& maskable_layers() const noexcept { return maskable_; }
  /// Ordinal of a maskable layer given its spec index.
  std::size_t mask_ordinal(std::size_t layer_index) const;
  std::vector<std::size_t> site_counts() const;
  std::size_t total_sites() const noexcept { return total_sites_; }
  /// For a residual_add at `add_index`, the layer index of its residual_begin.
  std::size_t residual_partner(std::size_t add_index) const { return partner_[add_index]; }
  std::size_t class_count() const;

 private:
  NetworkSpec spec_;
  Shape input_shape_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> maskable_;
  std::vector<std::size_t> ordinal_;
  std::vector<std::size_t> partner_;
  std::size_t total_sites_ = 0;
};

}  // namespace relu_sculpt
