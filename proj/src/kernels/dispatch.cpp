#include <atomic>
#include <cstdlib>
#include <string>

#include "relu_sculpt/error.hpp"
#include "relu_sculpt/kernels.hpp"

namespace relu_sculpt::kernels {

#if !defined(RELU_SCULPT_HAVE_AVX2)
namespace detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace detail
#endif

namespace {

Isa detect() {
  if (const char* forced = std::getenv("RELU_SCULPT_KERNELS")) {
    const std::string v(forced);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(detect())};
  return ptr;
}

}  // namespace

bool isa_supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(RELU_SCULPT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return detail::avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (isa == Isa::avx2 && isa_supported(Isa::avx2)) return *detail::avx2_table();
  if (isa == Isa::avx2) throw PreconditionError("AVX2 kernels are not available on this CPU");
  return detail::scalar_table();
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() noexcept {
  return current().load(std::memory_order_relaxed) == &detail::scalar_table() ? Isa::scalar : Isa::avx2;
}

void select_isa(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace relu_sculpt::kernels
