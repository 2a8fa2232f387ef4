#include "relu_sculpt/mask.hpp"

#include <algorithm>
#include <bit>

#include "relu_sculpt/detail/bytes.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/network.hpp"

namespace relu_sculpt {

namespace {

std::vector<ReluMask::LayerInfo> layer_infos(const Network& net) {
  std::vector<ReluMask::LayerInfo> out;
  const auto counts = net.site_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.push_back({static_cast<std::uint32_t>(net.maskable_layers()[i]), counts[i]});
  }
  return out;
}

std::size_t words_for(std::uint64_t sites) { return static_cast<std::size_t>((sites + 63) / 64); }

}  // namespace

ReluMask::ReluMask(std::vector<LayerInfo> layers, bool on) : layers_(std::move(layers)) {
  layout();
  if (on) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::uint64_t n = layers_[l].site_count;
      for (std::size_t w = 0; w < words_for(n); ++w) {
        const std::uint64_t bits_here = std::min<std::uint64_t>(64, n - 64 * w);
        words_[offsets_[l] + w] = bits_here == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits_here) - 1);
      }
    }
  }
  recount();
}

ReluMask ReluMask::from_predicate(std::vector<LayerInfo> layers,
                                  const std::function<bool(std::size_t, std::size_t)>& pred) {
  ReluMask m(std::move(layers), false);
  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    for (std::size_t s = 0; s < m.layers_[l].site_count; ++s) {
      if (pred(l, s)) m.words_[m.offsets_[l] + s / 64] |= std::uint64_t{1} << (s % 64);
    }
  }
  m.recount();
  return m;
}

ReluMask ReluMask::from_site_counts(std::span<const std::size_t> counts, bool on) {
  std::vector<LayerInfo> infos;
  for (std::size_t i = 0; i < counts.size(); ++i) infos.push_back({static_cast<std::uint32_t>(i), counts[i]});
  return ReluMask(std::move(infos), on);
}

void ReluMask::layout() {
  offsets_.clear();
  std::size_t words = 0;
  total_sites_ = 0;
  for (const auto& l : layers_) {
    offsets_.push_back(words);
    words += words_for(l.site_count);
    total_sites_ += l.site_count;
  }
  words_.assign(words, 0);
}

void ReluMask::recount() {
  cached_l0_ = 0;
  for (std::uint64_t w : words_) cached_l0_ += static_cast<std::size_t>(std::popcount(w));
}

std::size_t ReluMask::layer_l0(std::size_t layer) const {
  std::size_t n = 0;
  for (std::uint64_t w : layer_words(layer)) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::span<const std::uint64_t> ReluMask::layer_words(std::size_t layer) const {
  return std::span<const std::uint64_t>(words_).subspan(offsets_.at(layer), words_for(layers_[layer].site_count));
}

SiteRef ReluMask::flat_to_site(std::size_t i) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (i < layers_[l].site_count) return {static_cast<std::uint32_t>(l), i};
    i -= layers_[l].site_count;
  }
  throw PreconditionError("flat site index out of range");
}

bool ReluMask::test_flat(std::size_t i) const {
  const SiteRef s = flat_to_site(i);
  return test(s.layer, s.site);
}

std::vector<SiteRef> ReluMask::on_sites() const {
  std::vector<SiteRef> out;
  out.reserve(cached_l0_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto words = layer_words(l);
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t bits = words[w];
      while (bits) {
        const int b = std::countr_zero(bits);
        out.push_back({static_cast<std::uint32_t>(l), 64 * w + static_cast<std::size_t>(b)});
        bits &= bits - 1;
      }
    }
  }
  return out;
}

ReluMask all_ones(const Network& net) { return ReluMask(layer_infos(net), true); }
ReluMask all_zeros(const Network& net) { return ReluMask(layer_infos(net), false); }

RemovalSet sample_removal(const ReluMask& m, std::size_t k, rng::Stream& stream) {
  if (k > m.l0()) {
    throw PreconditionError("cannot sample " + std::to_string(k) + " sites from a mask with L0 " +
                            std::to_string(m.l0()));
  }
  std::vector<SiteRef> pool = m.on_sites();
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + stream.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

ReluMask apply_removal(const ReluMask& m, const RemovalSet& r) {
  ReluMask out = m;
  for (const SiteRef& s : r) {
    if (s.layer >= out.layers_.size() || s.site >= out.layers_[s.layer].site_count) {
      throw PreconditionError("removal site out of range");
    }
    std::uint64_t& word = out.words_[out.offsets_[s.layer] + s.site / 64];
    const std::uint64_t bit = std::uint64_t{1} << (s.site % 64);
    if (!(word & bit)) {
      throw PreconditionError("site (" + std::to_string(s.layer) + "," + std::to_string(s.site) + ") is already clear");
    }
    word &= ~bit;
  }
  out.cached_l0_ = m.cached_l0_ - r.size();
  return out;
}

std::size_t intersection_count(const ReluMask& a, const ReluMask& b) {
  if (!a.same_shape(b)) throw PreconditionError("masks have different shapes");
  std::size_t n = 0;
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    const auto wa = a.layer_words(l);
    const auto wb = b.layer_words(l);
    for (std::size_t w = 0; w < wa.size(); ++w) n += static_cast<std::size_t>(std::popcount(wa[w] & wb[w]));
  }
  return n;
}

double iou(const ReluMask& m1, const ReluMask& m2) {
  if (m1.l0() == 0) throw PreconditionError("iou: reference mask has zero budget");
  return static_cast<double>(intersection_count(m1, m2)) / static_cast<double>(m1.l0());
}

std::vector<std::pair<std::size_t, std::size_t>> per_layer_counts(const ReluMask& m) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t l = 0; l < m.layer_count(); ++l) out.emplace_back(m.layers()[l].layer_index, m.layer_l0(l));
  return out;
}

std::vector<std::uint8_t> serialize_mask(const ReluMask& m) {
  detail::Bytes out;
  detail::put_magic(out, "RMSK1");
  detail::put_u32(out, static_cast<std::uint32_t>(m.layer_count()));
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const auto& info = m.layers()[l];
    detail::put_u32(out, info.layer_index);
    detail::put_u64(out, info.site_count);
    const auto words = m.layer_words(l);
    const std::size_t nbytes = static_cast<std::size_t>((info.site_count + 7) / 8);
    for (std::size_t b = 0; b < nbytes; ++b) out.push_back(static_cast<std::uint8_t>(words[b / 8] >> (8 * (b % 8))));
  }
  detail::put_u64(out, m.l0());
  return out;
}

ReluMask deserialize_mask(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes, "RMSK1 mask");
  r.expect_magic("RMSK1");
  const std::uint32_t layer_count = r.u32();
  std::vector<ReluMask::LayerInfo> infos;
  std::vector<std::span<const std::uint8_t>> payloads;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint32_t idx = r.u32();
    const std::uint64_t sites = r.u64();
    if (sites / 8 > r.remaining()) throw FormatError("RMSK1 mask: layer payload longer than file");
    const auto payload = r.take(static_cast<std::size_t>((sites + 7) / 8));
    if (sites % 8 != 0 && (payload.back() >> (sites % 8)) != 0) {
      throw FormatError("RMSK1 mask: nonzero padding bits in layer " + std::to_string(l));
    }
    infos.push_back({idx, sites});
    payloads.push_back(payload);
  }
  const std::uint64_t declared = r.u64();
  if (!r.at_end()) throw FormatError("RMSK1 mask: trailing bytes after L0 trailer");
  ReluMask m = ReluMask::from_predicate(std::move(infos), [&](std::size_t l, std::size_t s) {
    return ((payloads[l][s / 8] >> (s % 8)) & 1U) != 0;
  });
  if (declared != m.l0()) {
    throw IntegrityError("RMSK1 mask: declared L0 " + std::to_string(declared) + " but payload popcount is " +
                         std::to_string(m.l0()));
  }
  return m;
}

void save_mask(const std::filesystem::path& path, const ReluMask& m) { detail::write_file(path, serialize_mask(m)); }

ReluMask load_mask(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return deserialize_mask(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

nlohmann::json mask_to_debug_json(const ReluMask& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    std::vector<int> bits(m.site_count(l));
    for (std::size_t s = 0; s < bits.size(); ++s) bits[s] = m.test(l, s) ? 1 : 0;
    layers.push_back({{"layer_index", m.layers()[l].layer_index}, {"site_count", m.site_count(l)}, {"bits", bits}});
  }
  return {{"format", "relu-mask-debug"}, {"l0", m.l0()}, {"layers", layers}};
}

}  // namespace relu_sculpt
