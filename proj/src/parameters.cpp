#include "relu_sculpt/parameters.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "relu_sculpt/detail/bytes.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/rng.hpp"

namespace relu_sculpt {

namespace detail {

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(path.string() + ": write failed");
}

}  // namespace detail

namespace {

struct ParamShape {
  Shape weight;
  std::size_t bias = 0;
  std::size_t fan_in = 0;
};

std::optional<ParamShape> param_shape(const Network& net, std::size_t i) {
  const Layer& layer = net.layer(i);
  if (const auto* c = std::get_if<layers::Conv2d>(&layer)) {
    return ParamShape{{c->out_ch, c->in_ch, c->kernel, c->kernel}, c->out_ch, c->in_ch * c->kernel * c->kernel};
  }
  if (const auto* l = std::get_if<layers::Linear>(&layer)) return ParamShape{{l->out, l->in}, l->out, l->in};
  if (const auto* a = std::get_if<layers::ResidualAdd>(&layer); a && a->shortcut) {
    const std::size_t in = net.layer_output_shape(net.residual_partner(i))[0];
    return ParamShape{{a->shortcut->out_ch, in, 1, 1}, a->shortcut->out_ch, in};
  }
  return std::nullopt;
}

}  // namespace

template <typename T>
BasicParameters<T> BasicParameters<T>::zeros(const Network& net) {
  BasicParameters p;
  p.layers_.resize(net.layer_count());
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (auto s = param_shape(net, i)) p.layers_[i] = LayerParameters<T>{BasicTensor<T>(s->weight), BasicTensor<T>({s->bias})};
  }
  return p;
}

template <typename T>
BasicParameters<T> BasicParameters<T>::kaiming_uniform(const Network& net, std::uint64_t seed) {
  BasicParameters p = zeros(net);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (!p.layers_[i]) continue;
    const auto s = param_shape(net, i);
    const double bound = std::sqrt(6.0 / static_cast<double>(s->fan_in));
    rng::Stream stream(seed, "init", {i});
    for (T& w : p.layers_[i]->weight.values()) w = static_cast<T>(stream.uniform(-bound, bound));
  }
  return p;
}

template <typename T>
std::vector<std::span<T>> BasicParameters<T>::spans() {
  std::vector<std::span<T>> out;
  for (auto& l : layers_) {
    if (!l) continue;
    out.push_back(l->weight.values());
    out.push_back(l->bias.values());
  }
  return out;
}

template <typename T>
std::vector<std::span<const T>> BasicParameters<T>::spans() const {
  std::vector<std::span<const T>> out;
  for (const auto& l : layers_) {
    if (!l) continue;
    out.push_back(l->weight.values());
    out.push_back(l->bias.values());
  }
  return out;
}

template <typename T>
std::size_t BasicParameters<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& s : spans()) n += s.size();
  return n;
}

template <typename T>
void BasicParameters<T>::fill(T value) {
  for (auto s : spans()) std::fill(s.begin(), s.end(), value);
}

template <typename T>
bool BasicParameters<T>::all_finite() const {
  for (const auto& l : layers_) {
    if (l && (!l->weight.all_finite() || !l->bias.all_finite())) return false;
  }
  return true;
}

template <typename T>
void BasicParameters<T>::check_matches(const Network& net) const {
  if (layers_.size() != net.layer_count()) throw ShapeError("parameters cover a different number of layers");
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto s = param_shape(net, i);
    if (s.has_value() != layers_[i].has_value()) throw ShapeError(i, "parameter presence does not match layer type");
    if (s && (layers_[i]->weight.shape() != s->weight || layers_[i]->bias.size() != s->bias)) {
      throw ShapeError(i, "parameter shape mismatch");
    }
  }
}

template class BasicParameters<float>;
template class BasicParameters<double>;

std::vector<std::uint8_t> serialize_parameters(const Parameters& params) {
  detail::Bytes out;
  detail::put_magic(out, "RSW1");
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    if (!params.has(i)) continue;
    const auto& l = params.at(i);
    detail::put_u32(out, static_cast<std::uint32_t>(i));
    detail::put_u64(out, l.weight.size() + l.bias.size());
    for (float v : l.weight.values()) detail::put_f32(out, v);
    for (float v : l.bias.values()) detail::put_f32(out, v);
  }
  return out;
}

Parameters deserialize_parameters(std::span<const std::uint8_t> bytes, const Network& net) {
  Parameters p = Parameters::zeros(net);
  std::vector<bool> seen(net.layer_count(), false);
  detail::Reader r(bytes, "RSW1 checkpoint");
  r.expect_magic("RSW1");
  while (!r.at_end()) {
    const std::uint32_t idx = r.u32();
    const std::uint64_t count = r.u64();
    if (!p.has(idx)) throw FormatError("RSW1 checkpoint: layer " + std::to_string(idx) + " has no parameters");
    if (seen[idx]) throw FormatError("RSW1 checkpoint: layer " + std::to_string(idx) + " appears twice");
    auto& l = p.at(idx);
    if (count != l.weight.size() + l.bias.size()) {
      throw FormatError("RSW1 checkpoint: layer " + std::to_string(idx) + " element count " + std::to_string(count) +
                        " does not match network (" + std::to_string(l.weight.size() + l.bias.size()) + ")");
    }
    for (float& v : l.weight.values()) v = r.f32();
    for (float& v : l.bias.values()) v = r.f32();
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (p.has(i) && !seen[i]) throw FormatError("RSW1 checkpoint: missing layer " + std::to_string(i));
  }
  return p;
}

void save_parameters(const std::filesystem::path& path, const Parameters& params) {
  detail::write_file(path, serialize_parameters(params));
}

Parameters load_parameters(const std::filesystem::path& path, const Network& net) {
  const auto bytes = detail::read_file(path);
  return deserialize_parameters(bytes, net);
}

}  // namespace relu_sculpt
