#include "relu_sculpt/kernels.hpp"

#include <algorithm>

namespace relu_sculpt::kernels {
namespace {

template <typename T>
T dot_scalar(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_scalar(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gate_identity_scalar(const T* v, const T* g, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = g[i] * std::max(v[i], T(0)) + (T(1) - g[i]) * v[i];
  }
}

const KernelTable kScalar{
    &dot_scalar<float>,           &dot_scalar<double>,           &axpy_scalar<float>,
    &axpy_scalar<double>,         &gate_identity_scalar<float>, &gate_identity_scalar<double>,
};

}  // namespace

namespace detail {
const KernelTable& scalar_table() { return kScalar; }
}  // namespace detail

}  // namespace relu_sculpt::kernels
