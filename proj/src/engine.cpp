#include "relu_sculpt/engine.hpp"

#include <algorithm>
#include <cmath>
#include <variant>

#include "relu_sculpt/error.hpp"
#include "relu_sculpt/kernels.hpp"
#include "relu_sculpt/parallel.hpp"

namespace relu_sculpt {

// ---------------------------------------------------------------------------
// Soft masks

template <typename T>
BasicSoftMask<T> BasicSoftMask<T>::filled(const Network& net, T value) {
  BasicSoftMask m;
  for (std::size_t n : net.site_counts()) m.layers.emplace_back(n, value);
  return m;
}

template <typename T>
BasicSoftMask<T> BasicSoftMask<T>::from_mask(const ReluMask& mask) {
  BasicSoftMask m;
  for (std::size_t l = 0; l < mask.layer_count(); ++l) {
    std::vector<T> g(mask.site_count(l));
    for (std::size_t s = 0; s < g.size(); ++s) g[s] = mask.test(l, s) ? T(1) : T(0);
    m.layers.push_back(std::move(g));
  }
  return m;
}

template <typename T>
std::size_t BasicSoftMask<T>::total_sites() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

template <typename T>
void BasicSoftMask<T>::fill(T value) {
  for (auto& l : layers) std::fill(l.begin(), l.end(), value);
}

template <typename T>
void BasicSoftMask<T>::clamp01() {
  for (auto& l : layers) {
    for (T& v : l) v = std::clamp(v, T(0), T(1));
  }
}

template <typename T>
double BasicSoftMask<T>::l1() const {
  double s = 0.0;
  for (const auto& l : layers) {
    for (T v : l) s += std::abs(static_cast<double>(v));
  }
  return s;
}

template <typename T>
std::vector<std::span<T>> BasicSoftMask<T>::spans() {
  std::vector<std::span<T>> out;
  for (auto& l : layers) out.emplace_back(l);
  return out;
}

template <typename T>
bool BasicSoftMask<T>::same_shape(const BasicSoftMask& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].size() != other.layers[i].size()) return false;
  }
  return true;
}

template struct BasicSoftMask<float>;
template struct BasicSoftMask<double>;

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

struct ConvGeometry {
  std::size_t in_ch, height, width, kernel, stride, pad, out_ch, out_h, out_w;
  std::size_t patch() const { return in_ch * kernel * kernel; }
  std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry geometry(const layers::Conv2d& c, const Shape& in, const Shape& out) {
  return {c.in_ch, in[1], in[2], c.kernel, c.stride, c.pad, c.out_ch, out[1], out[2]};
}

ConvGeometry shortcut_geometry(const layers::Shortcut& s, const Shape& in, const Shape& out) {
  return {in[0], in[1], in[2], 1, s.stride, 0, s.out_ch, out[1], out[2]};
}

// cols[p][c*k*k + ki*k + kj] = in[c][oy*s + ki - pad][ox*s + kj - pad] (0 outside).
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> in, std::vector<T>& cols) {
  const std::size_t K = g.patch();
  cols.assign(g.pixels() * K, T(0));
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      T* row = cols.data() + (oy * g.out_w + ox) * K;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            row[(c * g.kernel + ki) * g.kernel + kj] = in[(c * g.height + static_cast<std::size_t>(y)) * g.width +
                                                          static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const std::vector<T>& dcols, std::span<T> dx) {
  const std::size_t K = g.patch();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const T* row = dcols.data() + (oy * g.out_w + ox) * K;
      for (std::size_t c = 0; c < g.in_ch; ++c) {
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const std::ptrdiff_t x =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dx[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] +=
                row[(c * g.kernel + ki) * g.kernel + kj];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, const LayerParameters<T>& p, std::span<const T> in, std::vector<T>& cols,
                  std::span<T> out) {
  im2col(g, in, cols);
  const std::size_t K = g.patch();
  const std::size_t P = g.pixels();
  const T* w = p.weight.data();
  for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
    const std::span<const T> wrow(w + oc * K, K);
    for (std::size_t px = 0; px < P; ++px) {
      out[oc * P + px] = p.bias[oc] + kernels::dot(wrow, std::span<const T>(cols.data() + px * K, K));
    }
  }
}

// Adds parameter gradients (scaled) into `gp` and, when dx is non-empty, the
// input gradient (unscaled) into dx.
template <typename T>
void conv_backward(const ConvGeometry& g, const LayerParameters<T>& p, const std::vector<T>& cols,
                   std::span<const T> gout, LayerParameters<T>& gp, std::vector<T>& dcols, std::span<T> dx, T scale) {
  const std::size_t K = g.patch();
  const std::size_t P = g.pixels();
  const bool want_dx = !dx.empty();
  if (want_dx) dcols.assign(P * K, T(0));
  for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
    const std::span<const T> wrow(p.weight.data() + oc * K, K);
    const std::span<T> gwrow(gp.weight.data() + oc * K, K);
    T bias_acc = 0;
    for (std::size_t px = 0; px < P; ++px) {
      const T go = gout[oc * P + px];
      if (go == T(0)) continue;
      bias_acc += go;
      kernels::axpy(scale * go, std::span<const T>(cols.data() + px * K, K), gwrow);
      if (want_dx) kernels::axpy(go, wrow, std::span<T>(dcols.data() + px * K, K));
    }
    gp.bias[oc] += scale * bias_acc;
  }
  if (want_dx) col2im_add(g, dcols, dx);
}

template <typename T>
void linear_forward(const layers::Linear& l, const LayerParameters<T>& p, std::span<const T> in, std::span<T> out) {
  for (std::size_t o = 0; o < l.out; ++o) {
    out[o] = p.bias[o] + kernels::dot(std::span<const T>(p.weight.data() + o * l.in, l.in), in);
  }
}

template <typename T>
void linear_backward(const layers::Linear& l, const LayerParameters<T>& p, std::span<const T> in,
                     std::span<const T> gout, LayerParameters<T>& gp, std::span<T> dx, T scale) {
  const bool want_dx = !dx.empty();
  for (std::size_t o = 0; o < l.out; ++o) {
    const T go = gout[o];
    if (go == T(0)) continue;
    gp.bias[o] += scale * go;
    kernels::axpy(scale * go, in, std::span<T>(gp.weight.data() + o * l.in, l.in));
    if (want_dx) kernels::axpy(go, std::span<const T>(p.weight.data() + o * l.in, l.in), dx);
  }
}

template <typename T>
void activation_forward(const Replacement& r, std::span<const T> v, std::span<const T> gate, std::span<T> out) {
  if (r.kind == Replacement::Kind::identity) {
    kernels::gate_identity(v, gate, out);
    return;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = gate[i] * std::max(v[i], T(0)) + (T(1) - gate[i]) * r.value(v[i]);
  }
}

template <typename T>
void activation_backward(const Replacement& r, std::span<const T> v, std::span<const T> gate, std::span<const T> gout,
                         std::span<T> dx, std::vector<T>* gate_grad, T scale) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T relu_d = v[i] > T(0) ? T(1) : T(0);
    if (!dx.empty()) dx[i] += gout[i] * (gate[i] * relu_d + (T(1) - gate[i]) * r.derivative(v[i]));
    if (gate_grad) (*gate_grad)[i] += scale * gout[i] * (std::max(v[i], T(0)) - r.value(v[i]));
  }
}

std::pair<std::size_t, std::size_t> pool_window(const layers::AvgPool& p, const Shape& in_shape) {
  return p.global ? std::pair{in_shape[1], in_shape[2]} : std::pair{p.k, p.k};
}

template <typename T>
void avgpool_forward(std::size_t kh, std::size_t kw, const Shape& in_shape, const Shape& out_shape,
                     std::span<const T> in, std::span<T> out) {
  const std::size_t H = in_shape[1], W = in_shape[2], OH = out_shape[1], OW = out_shape[2];
  const T inv = T(1) / static_cast<T>(kh * kw);
  for (std::size_t c = 0; c < in_shape[0]; ++c) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        T acc = 0;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          for (std::size_t dx = 0; dx < kw; ++dx) acc += in[(c * H + oy * kh + dy) * W + ox * kw + dx];
        }
        out[(c * OH + oy) * OW + ox] = acc * inv;
      }
    }
  }
}

template <typename T>
void avgpool_backward(std::size_t kh, std::size_t kw, const Shape& in_shape, const Shape& out_shape,
                      std::span<const T> gout, std::span<T> dx) {
  const std::size_t H = in_shape[1], W = in_shape[2], OH = out_shape[1], OW = out_shape[2];
  const T inv = T(1) / static_cast<T>(kh * kw);
  for (std::size_t c = 0; c < in_shape[0]; ++c) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const T g = gout[(c * OH + oy) * OW + ox] * inv;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          for (std::size_t dxi = 0; dxi < kw; ++dxi) dx[(c * H + oy * kh + dy) * W + ox * kw + dxi] += g;
        }
      }
    }
  }
}

template <typename T>
void prepare(const Network& net, Trace<T>& trace) {
  const std::size_t L = net.layer_count();
  if (trace.outputs.size() != L) {
    trace.outputs.assign(L, {});
    trace.columns.assign(L, {});
    trace.shortcut.assign(L, {});
    trace.grads.assign(L, {});
    trace.column_grads.assign(L, {});
  }
  if (trace.input.shape() != net.input_shape()) trace.input.reshape_for_overwrite(net.input_shape());
  for (std::size_t i = 0; i < L; ++i) {
    if (trace.outputs[i].shape() != net.layer_output_shape(i)) {
      trace.outputs[i].reshape_for_overwrite(net.layer_output_shape(i));
    }
  }
}

template <typename T>
void check_gates(const Network& net, const BasicSoftMask<T>& gates) {
  const auto counts = net.site_counts();
  if (gates.layers.size() != counts.size()) throw ShapeError("mask has a different number of maskable layers");
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (gates.layers[l].size() != counts[l]) {
      throw ShapeError(net.maskable_layers()[l], "mask site count does not match the activation");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
const BasicTensor<T>& forward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& gates,
                              std::span<const T> x, Trace<T>& trace) {
  if (x.size() != element_count(net.input_shape())) {
    throw ShapeError("input has " + std::to_string(x.size()) + " elements, network expects " +
                     to_string(net.input_shape()));
  }
  check_gates(net, gates);
  prepare(net, trace);
  std::copy(x.begin(), x.end(), trace.input.data());
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const BasicTensor<T>& in = i == 0 ? trace.input : trace.outputs[i - 1];
    BasicTensor<T>& out = trace.outputs[i];
    const Layer& layer = net.layer(i);
    if (const auto* c = std::get_if<layers::Conv2d>(&layer)) {
      conv_forward(geometry(*c, in.shape(), out.shape()), params.at(i), in.values(), trace.columns[i], out.values());
    } else if (const auto* l = std::get_if<layers::Linear>(&layer)) {
      linear_forward(*l, params.at(i), in.values(), out.values());
    } else if (const auto* a = std::get_if<layers::MaskableActivation>(&layer)) {
      const auto& g = gates.layers[net.mask_ordinal(i)];
      activation_forward(a->replacement, in.values(), std::span<const T>(g), out.values());
    } else if (const auto* p = std::get_if<layers::AvgPool>(&layer)) {
      const auto [kh, kw] = pool_window(*p, in.shape());
      avgpool_forward(kh, kw, in.shape(), out.shape(), in.values(), out.values());
    } else if (const auto* add = std::get_if<layers::ResidualAdd>(&layer)) {
      const BasicTensor<T>& skip = trace.outputs[net.residual_partner(i)];
      std::span<const T> s = skip.values();
      if (add->shortcut) {
        BasicTensor<T>& proj = trace.shortcut[i];
        if (proj.shape() != out.shape()) proj.reshape_for_overwrite(out.shape());
        conv_forward(shortcut_geometry(*add->shortcut, skip.shape(), out.shape()), params.at(i), s, trace.columns[i],
                     proj.values());
        s = proj.values();
      }
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[k] + s[k];
    } else {
      // flatten, residual_begin: pass-through
      std::copy(in.values().begin(), in.values().end(), out.data());
    }
  }
  return trace.logits();
}

template <typename T>
BasicTensor<T> forward(const Network& net, const BasicParameters<T>& params, const ReluMask& mask,
                       std::span<const T> x) {
  Trace<T> trace;
  return forward(net, params, BasicSoftMask<T>::from_mask(mask), x, trace);
}

template <typename T>
BasicTensor<T> soft_forward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& alpha,
                            std::span<const T> x) {
  Trace<T> trace;
  return forward(net, params, alpha, x, trace);
}

template <typename T>
T loss_ce(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw PreconditionError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                            " classes");
  }
  const T m = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (T v : logits) sum += std::exp(v - m);
  return m + std::log(sum) - logits[label];
}

template <typename T>
T loss_ce_grad(std::span<const T> logits, std::size_t label, std::span<T> dlogits) {
  const T loss = loss_ce(logits, label);
  const T m = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    dlogits[k] = std::exp(logits[k] - m);
    sum += dlogits[k];
  }
  for (std::size_t k = 0; k < logits.size(); ++k) dlogits[k] /= sum;
  dlogits[label] -= T(1);
  return loss;
}

template <typename T>
T backward(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& gates, Trace<T>& trace,
           std::size_t label, BasicParameters<T>& grads, BasicSoftMask<T>* gate_grads, T scale) {
  const std::size_t L = net.layer_count();
  if (L == 0) throw PreconditionError("cannot differentiate an empty network");
  if (gate_grads && !gate_grads->same_shape(gates)) throw ShapeError("gate gradient shape mismatch");
  for (std::size_t i = 0; i < L; ++i) {
    if (trace.grads[i].shape() != net.layer_output_shape(i)) trace.grads[i].reshape_for_overwrite(net.layer_output_shape(i));
    trace.grads[i].fill(T(0));
  }
  const T loss = loss_ce_grad<T>(std::span<const T>(trace.outputs[L - 1].values()), label, trace.grads[L - 1].values());

  for (std::size_t i = L; i-- > 0;) {
    const BasicTensor<T>& in = i == 0 ? trace.input : trace.outputs[i - 1];
    const std::span<const T> gout = trace.grads[i].values();
    const std::span<T> dx = i == 0 ? std::span<T>() : trace.grads[i - 1].values();
    const Layer& layer = net.layer(i);
    if (const auto* c = std::get_if<layers::Conv2d>(&layer)) {
      conv_backward(geometry(*c, in.shape(), trace.outputs[i].shape()), params.at(i), trace.columns[i], gout,
                    grads.at(i), trace.column_grads[i], dx, scale);
    } else if (const auto* l = std::get_if<layers::Linear>(&layer)) {
      linear_backward(*l, params.at(i), in.values(), gout, grads.at(i), dx, scale);
    } else if (const auto* a = std::get_if<layers::MaskableActivation>(&layer)) {
      const std::size_t ord = net.mask_ordinal(i);
      activation_backward(a->replacement, in.values(), std::span<const T>(gates.layers[ord]), gout, dx,
                          gate_grads ? &gate_grads->layers[ord] : nullptr, scale);
    } else if (const auto* p = std::get_if<layers::AvgPool>(&layer)) {
      const auto [kh, kw] = pool_window(*p, in.shape());
      if (!dx.empty()) avgpool_backward(kh, kw, in.shape(), trace.outputs[i].shape(), gout, dx);
    } else if (const auto* add = std::get_if<layers::ResidualAdd>(&layer)) {
      const std::size_t begin = net.residual_partner(i);
      if (!dx.empty()) {
        for (std::size_t k = 0; k < gout.size(); ++k) dx[k] += gout[k];
      }
      const std::span<T> dskip = trace.grads[begin].values();
      if (add->shortcut) {
        const BasicTensor<T>& skip = trace.outputs[begin];
        conv_backward(shortcut_geometry(*add->shortcut, skip.shape(), trace.outputs[i].shape()), params.at(i),
                      trace.columns[i], gout, grads.at(i), trace.column_grads[i], dskip, scale);
      } else {
        for (std::size_t k = 0; k < gout.size(); ++k) dskip[k] += gout[k];
      }
    } else if (!dx.empty()) {
      for (std::size_t k = 0; k < gout.size(); ++k) dx[k] += gout[k];
    }
  }
  return loss;
}

template <typename T>
std::size_t argmax(std::span<const T> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

#define RELU_SCULPT_INSTANTIATE(T)                                                                                   \
  template const BasicTensor<T>& forward<T>(const Network&, const BasicParameters<T>&, const BasicSoftMask<T>&,       \
                                            std::span<const T>, Trace<T>&);                                            \
  template BasicTensor<T> forward<T>(const Network&, const BasicParameters<T>&, const ReluMask&, std::span<const T>); \
  template BasicTensor<T> soft_forward<T>(const Network&, const BasicParameters<T>&, const BasicSoftMask<T>&,         \
                                          std::span<const T>);                                                         \
  template T loss_ce<T>(std::span<const T>, std::size_t);                                                              \
  template T loss_ce_grad<T>(std::span<const T>, std::size_t, std::span<T>);                                           \
  template T backward<T>(const Network&, const BasicParameters<T>&, const BasicSoftMask<T>&, Trace<T>&, std::size_t,  \
                         BasicParameters<T>&, BasicSoftMask<T>*, T);                                                   \
  template std::size_t argmax<T>(std::span<const T>);

RELU_SCULPT_INSTANTIATE(float)
RELU_SCULPT_INSTANTIATE(double)
#undef RELU_SCULPT_INSTANTIATE

// ---------------------------------------------------------------------------
// Dataset-level evaluation

std::size_t count_correct(const Network& net, const Parameters& params, const SoftMask& gates, const Dataset& ds,
                          std::size_t threads) {
  std::vector<std::size_t> correct(std::max<std::size_t>(1, threads), 0);
  parallel_chunks(ds.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    Trace<float> trace;
    std::size_t n = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& logits = forward(net, params, gates, ds.sample(i), trace);
      if (argmax(logits.values()) == ds.labels[i]) ++n;
    }
    correct[worker] = n;
  });
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  return total;
}

double evaluate_accuracy(const Network& net, const Parameters& params, const SoftMask& gates, const Dataset& ds,
                         std::size_t threads) {
  if (ds.empty()) throw PreconditionError("evaluate_accuracy: empty dataset");
  return 100.0 * static_cast<double>(count_correct(net, params, gates, ds, threads)) / static_cast<double>(ds.size());
}

double evaluate_accuracy(const Network& net, const Parameters& params, const ReluMask& mask, const Dataset& ds,
                         std::size_t threads) {
  return evaluate_accuracy(net, params, SoftMask::from_mask(mask), ds, threads);
}

double mean_loss(const Network& net, const ParametersD& params, const SoftMaskD& gates, const Dataset& ds) {
  if (ds.empty()) throw PreconditionError("mean_loss: empty dataset");
  Trace<double> trace;
  std::vector<double> x;
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto s = ds.sample(i);
    x.assign(s.begin(), s.end());
    const auto& logits = forward(net, params, gates, std::span<const double>(x), trace);
    sum += loss_ce(logits.values(), ds.labels[i]);
  }
  return sum / static_cast<double>(ds.size());
}

}  // namespace relu_sculpt
