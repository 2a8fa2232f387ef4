#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relu_sculpt/rng.hpp"

namespace relu_sculpt {

class Network;

/// One maskable site: layer ordinal within the mask and element index.
struct SiteRef {
  std::uint32_t layer = 0;
  std::uint64_t site = 0;
  friend auto operator<=>(const SiteRef&, const SiteRef&) = default;
};

/// Sites sampled for removal; distinct and sorted.
using RemovalSet = std::vector<SiteRef>;

/// Binary ReLU mask: one bit per activation element of every maskable layer.
/// Bit 1 keeps the ReLU, bit 0 selects the layer's replacement function.
/// Values are immutable; every operation returns a new mask.
class ReluMask {
 public:
  struct LayerInfo {
    std::uint32_t layer_index = 0;  // spec layer index (or ordinal for free-standing masks)
    std::uint64_t site_count = 0;
    friend bool operator==(const LayerInfo&, const LayerInfo&) = default;
  };

  ReluMask() = default;
  ReluMask(std::vector<LayerInfo> layers, bool on);

  /// Mask whose bit (layer ordinal, site) is `pred(layer, site)`.
  static ReluMask from_predicate(std::vector<LayerInfo> layers,
                                 const std::function<bool(std::size_t, std::size_t)>& pred);
  /// Free-standing mask with layer_index equal to the ordinal.
  static ReluMask from_site_counts(std::span<const std::size_t> counts, bool on = true);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  std::size_t site_count(std::size_t layer) const { return layers_.at(layer).site_count; }
  std::size_t total_sites() const noexcept { return total_sites_; }
  std::size_t l0() const noexcept { return cached_l0_; }
  std::size_t layer_l0(std::size_t layer) const;

  bool test(std::size_t layer, std::size_t site) const {
    return (words_[offsets_[layer] + site / 64] >> (site % 64)) & 1U;
  }
  /// Bit at flat position `i`, counting layer 0's sites first.
  bool test_flat(std::size_t i) const;
  SiteRef flat_to_site(std::size_t i) const;

  std::span<const std::uint64_t> layer_words(std::size_t layer) const;
  std::vector<SiteRef> on_sites() const;
  bool same_shape(const ReluMask& other) const noexcept { return layers_ == other.layers_; }

  friend bool operator==(const ReluMask& a, const ReluMask& b) {
    return a.layers_ == b.layers_ && a.words_ == b.words_;
  }

 private:
  friend ReluMask apply_removal(const ReluMask& m, const RemovalSet& r);

  void layout();
  void recount();

  std::vector<LayerInfo> layers_;
  std::vector<std::size_t> offsets_;  // word offset per layer
  std::vector<std::uint64_t> words_;
  std::size_t total_sites_ = 0;
  std::size_t cached_l0_ = 0;
};

ReluMask all_ones(const Network& net);
ReluMask all_zeros(const Network& net);
inline std::size_t l0(const ReluMask& m) { return m.l0(); }

/// k distinct on-sites drawn uniformly without replacement.
RemovalSet sample_removal(const ReluMask& m, std::size_t k, rng::Stream& stream);
/// Clears every site of `r`; throws PreconditionError if one is already clear.
ReluMask apply_removal(const ReluMask& m, const RemovalSet& r);
/// ||m1 AND m2||_0 / ||m1||_0.
double iou(const ReluMask& m1, const ReluMask& m2);
std::size_t intersection_count(const ReluMask& a, const ReluMask& b);
std::vector<std::pair<std::size_t, std::size_t>> per_layer_counts(const ReluMask& m);

/// "RMSK1" | u32 layer count | per layer: u32 layer index, u64 site count,
/// LSB-first packed bits padded to a byte | u64 total L0 trailer.
std::vector<std::uint8_t> serialize_mask(const ReluMask& m);
ReluMask deserialize_mask(std::span<const std::uint8_t> bytes);
void save_mask(const std::filesystem::path& path, const ReluMask& m);
ReluMask load_mask(const std::filesystem::path& path);

/// Human-readable export: per-layer 0/1 arrays.
nlohmann::json mask_to_debug_json(const ReluMask& m);

}  // namespace relu_sculpt
