#pragma once

// Inner-loop arithmetic kernels. Each kernel has a scalar reference
// implementation and, on x86-64, an AVX2+FMA variant. The variant is picked
// once at startup from CPUID and can be overridden with RELU_SCULPT_KERNELS
// (values: "scalar", "avx2") or select_isa().
//
// Within one ISA every kernel has a fixed reduction order, so results are
// bitwise reproducible run to run. Across ISAs results agree only to rounding.

#include <cstddef>
#include <span>
#include <string_view>

namespace relu_sculpt::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
  // out = g * max(v, 0) + (1 - g) * v, i.e. the soft gate with identity replacement
  void (*gate_identity_f32)(const float* v, const float* g, float* out, std::size_t n);
  void (*gate_identity_f64)(const double* v, const double* g, double* out, std::size_t n);
};

const KernelTable& table(Isa isa);
const KernelTable& active();
Isa active_isa() noexcept;
bool isa_supported(Isa isa) noexcept;
/// Throws PreconditionError if the CPU lacks the requested ISA.
void select_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;

inline float dot(std::span<const float> a, std::span<const float> b) {
  return active().dot_f32(a.data(), b.data(), a.size());
}
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot_f64(a.data(), b.data(), a.size());
}
inline void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  active().axpy_f32(alpha, x.data(), y.data(), x.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy_f64(alpha, x.data(), y.data(), x.size());
}
inline void gate_identity(std::span<const float> v, std::span<const float> g, std::span<float> out) {
  active().gate_identity_f32(v.data(), g.data(), out.data(), v.size());
}
inline void gate_identity(std::span<const double> v, std::span<const double> g, std::span<double> out) {
  active().gate_identity_f64(v.data(), g.data(), out.data(), v.size());
}

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace relu_sculpt::kernels
