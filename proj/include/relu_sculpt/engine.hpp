#pragma once

// Forward and reverse-mode evaluation of a Network. Every maskable site
// computes
//
//     out = g * max(0, v) + (1 - g) * r(v)
//
// where r is the layer's replacement (identity or fixed polynomial) and g the
// site's gate. Binary ReluMasks use g in {0, 1}; the selective baseline uses
// continuous gates in [0, 1]. The engine is instantiated for float (default)
// and double (gradient checks and bound audits).

#include <cstddef>
#include <span>
#include <vector>

#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"
#include "relu_sculpt/tensor.hpp"

namespace relu_sculpt {

/// Per-site gate values, one vector per maskable layer.
template <typename T>
struct BasicSoftMask {
  std::vector<std::vector<T>> layers;

  static BasicSoftMask filled(const Network& net, T value);
  static BasicSoftMask from_mask(const ReluMask& m);

  std::size_t total_sites() const noexcept;
  void fill(T value);
  void clamp01();
  /// Sum of |alpha| over every site.
  double l1() const;
  std::vector<std::span<T>> spans();
  bool same_shape(const BasicSoftMask& other) const;

  template <typename U>
  BasicSoftMask<U> cast() const {
    BasicSoftMask<U> out;
    for (const auto& l : layers) out.layers.emplace_back(l.begin(), l.end());
    return out;
  }
  friend bool operator==(const BasicSoftMask&, const BasicSoftMask&) = default;
};

using SoftMask = BasicSoftMask<float>;
using SoftMaskD = BasicSoftMask<double>;

/// Reusable activation storage for one sample.
template <typename T>
struct Trace {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> outputs;   // per layer
  std::vector<std::vector<T>> columns;   // im2col buffers (conv2d / shortcut)
  std::vector<BasicTensor<T>> shortcut;  // projected skip tensors
  // backward scratch
  std::vector<BasicTensor<T>> grads;
  std::vector<std::vector<T>> column_grads;

  const BasicTensor<T>& logits() const { return outputs.empty() ? input : outputs.back(); }
};

/// Runs the network on one sample, storing every intermediate in `trace`.
template <typename T>
const BasicTensor<T>& forward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& gates,
                              std::span<const T> x, Trace<T>& trace);

/// Logits for a binary mask.
template <typename T>
BasicTensor<T> forward(const Network& net, const BasicParameters<T>& params, const ReluMask& mask,
                       std::span<const T> x);
/// Logits for a soft mask (alpha * ReLU(v) + (1 - alpha) * r(v)).
template <typename T>
BasicTensor<T> soft_forward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& alpha,
                            std::span<const T> x);

/// Softmax cross-entropy with max subtraction.
template <typename T>
T loss_ce(std::span<const T> logits, std::size_t label);
/// Same loss; also writes d loss / d logits = softmax - onehot.
template <typename T>
T loss_ce_grad(std::span<const T> logits, std::size_t label, std::span<T> dlogits);

/// Reverse pass over a trace produced by forward() on the same sample.
/// Adds scale * dL/dtheta into `grads` and, when non-null, scale * dL/dgate
/// into `gate_grads`. Returns the (unscaled) loss.
template <typename T>
T backward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& gates, Trace<T>& trace,
           std::size_t label, BasicParameters<T>& grads, BasicSoftMask<T>* gate_grads = nullptr, T scale = T(1));

/// Index of the largest logit; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> logits);

/// Correctly classified samples. Read-only; `threads` > 1 splits the dataset.
std::size_t count_correct(const Network& net, const Parameters& params, const SoftMask& gates, const Dataset& ds,
                          std::size_t threads = 1);
/// Accuracy in percent; throws PreconditionError on an empty dataset.
double evaluate_accuracy(const Network& net, const Parameters& params, const ReluMask& mask, const Dataset& ds,
                         std::size_t threads = 1);
double evaluate_accuracy(const Network& net, const Parameters& params, const SoftMask& gates, const Dataset& ds,
                         std::size_t threads = 1);

/// Mean cross-entropy over the dataset, computed in double precision.
double mean_loss(const Network& net, const ParametersD& params, const SoftMaskD& gates, const Dataset& ds);

}  // namespace relu_sculpt
