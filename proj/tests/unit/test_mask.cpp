#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "fixtures.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/mask.hpp"

using namespace relu_sculpt;

namespace {

ReluMask bits(std::initializer_list<int> v) {
  const std::vector<int> b(v);
  const std::size_t n = b.size();
  return ReluMask::from_predicate(ReluMask::from_site_counts(std::span<const std::size_t>(&n, 1)).layers(),
                                  [&](std::size_t, std::size_t s) { return b[s] != 0; });
}

ReluMask two_layer(bool on) {
  const std::vector<std::size_t> counts{8, 4};
  return ReluMask::from_site_counts(counts, on);
}

ReluMask random_mask(rng::Stream& s) {
  std::vector<std::size_t> counts(s.uniform_index(5));
  for (auto& c : counts) c = s.uniform_index(200);
  const double p = s.uniform01();
  const auto shape = ReluMask::from_site_counts(counts).layers();
  return ReluMask::from_predicate(shape, [&](std::size_t, std::size_t) { return s.uniform01() < p; });
}

}  // namespace

TEST_SUITE("mask") {
  TEST_CASE("all_ones counts element sites") {
    const auto net = fixtures::net_from_json(R"({"layers":[{"type":"maskable_activation"}]})", {2, 4, 4});
    CHECK(all_ones(net).l0() == 32);
    CHECK(all_zeros(net).l0() == 0);
    const auto empty = fixtures::net_from_json(R"({"layers":[{"type":"flatten"}]})", {2, 4, 4});
    CHECK(all_ones(empty).l0() == 0);
    CHECK(all_ones(empty).layer_count() == 0);
  }

  TEST_CASE("sample_removal examples") {
    const auto m = two_layer(true);
    rng::Stream a(1, "t"), b(1, "t");
    CHECK(sample_removal(m, 0, a).empty());
    const auto all = sample_removal(m, m.l0(), a);
    CHECK(all == m.on_sites());
    CHECK(sample_removal(m, 5, a) != sample_removal(m, 5, b));  // streams are now at different positions
    rng::Stream c(9, "t"), d(9, "t");
    const auto r = sample_removal(m, 5, c);
    CHECK(r == sample_removal(m, 5, d));
    CHECK(std::is_sorted(r.begin(), r.end()));
    CHECK(std::adjacent_find(r.begin(), r.end()) == r.end());
    CHECK_THROWS_AS(sample_removal(m, 13, c), PreconditionError);
  }

  TEST_CASE("sample_removal only draws on-sites") {
    rng::Stream s(3, "t");
    const auto m = apply_removal(two_layer(true), sample_removal(two_layer(true), 6, s));
    for (int i = 0; i < 50; ++i) {
      for (const auto& site : sample_removal(m, 3, s)) CHECK(m.test(site.layer, site.site));
    }
  }

  TEST_CASE("apply_removal examples") {
    const std::vector<std::size_t> counts{300, 200};
    const auto m = ReluMask::from_site_counts(counts);
    rng::Stream s(5, "t");
    const auto r = sample_removal(m, 100, s);
    const auto out = apply_removal(m, r);
    CHECK(m.l0() == 500);
    CHECK(out.l0() == 400);
    CHECK(iou(out, m) == 1.0);
    CHECK(intersection_count(out, m) == out.l0());
    CHECK(apply_removal(m, {}) == m);
    CHECK(serialize_mask(apply_removal(m, {})) == serialize_mask(m));
    CHECK(apply_removal(m, m.on_sites()) == ReluMask::from_site_counts(counts, false));
    CHECK_THROWS_AS(apply_removal(out, r), PreconditionError);
  }

  TEST_CASE("iou examples") {
    const auto a = bits({1, 1, 0, 0});
    const auto b = bits({1, 0, 1, 0});
    CHECK(iou(a, b) == 0.5);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, bits({0, 0, 1, 1})) == 0.0);
    CHECK_THROWS_AS(iou(bits({0, 0, 0, 0}), a), PreconditionError);
    CHECK_THROWS_AS(iou(a, bits({1, 1, 0})), PreconditionError);
  }

  TEST_CASE("per_layer_counts examples") {
    using V = std::vector<std::pair<std::size_t, std::size_t>>;
    CHECK(per_layer_counts(two_layer(true)) == V{{0, 8}, {1, 4}});
    CHECK(per_layer_counts(two_layer(false)) == V{{0, 0}, {1, 0}});
    const auto m = apply_removal(two_layer(true), {{0, 1}, {0, 4}, {0, 7}});
    CHECK(per_layer_counts(m) == V{{0, 5}, {1, 4}});
  }

  TEST_CASE("a 9-site layer takes 2 payload bytes") {
    const std::vector<std::size_t> nine{9};
    const auto bytes = serialize_mask(ReluMask::from_site_counts(nine));
    CHECK(bytes.size() == 5 + 4 + 4 + 8 + 2 + 8);
    CHECK(std::memcmp(bytes.data(), "RMSK1", 5) == 0);
    CHECK(bytes[21] == 0xFF);
    CHECK(bytes[22] == 0x01);
  }

  TEST_CASE("deserialization rejects corruption") {
    rng::Stream s(11, "t");
    const std::vector<std::size_t> counts{9, 20};
    const auto m = apply_removal(ReluMask::from_site_counts(counts), sample_removal(ReluMask::from_site_counts(counts), 7, s));
    auto bytes = serialize_mask(m);
    CHECK(deserialize_mask(bytes) == m);

    auto bad_l0 = bytes;
    bad_l0[bad_l0.size() - 8] ^= 0x01;
    CHECK_THROWS_AS(deserialize_mask(bad_l0), IntegrityError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_mask(bad_magic), FormatError);

    auto padded = bytes;
    padded[22] |= 0x80;  // bit beyond site 9 of layer 0
    CHECK_THROWS_AS(deserialize_mask(padded), FormatError);

    auto short_bytes = bytes;
    short_bytes.pop_back();
    CHECK_THROWS_AS(deserialize_mask(short_bytes), FormatError);

    auto long_bytes = bytes;
    long_bytes.push_back(0);
    CHECK_THROWS_AS(deserialize_mask(long_bytes), FormatError);
  }

  TEST_CASE("round trip over 1000 random masks") {
    rng::Stream s(2024, "roundtrip");
    for (int i = 0; i < 1000; ++i) {
      const auto m = random_mask(s);
      const auto back = deserialize_mask(serialize_mask(m));
      REQUIRE(back == m);
      REQUIRE(back.l0() == m.l0());
    }
  }

  TEST_CASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "relu_sculpt_mask_test.rmsk";
    rng::Stream s(8, "t");
    const auto m = random_mask(s);
    save_mask(path, m);
    CHECK(load_mask(path) == m);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_mask(path), Error);
  }

  TEST_CASE("debug JSON lists per-layer bits") {
    const auto j = mask_to_debug_json(apply_removal(two_layer(true), {{1, 2}}));
    CHECK(j.dump().find("[1,1,0,1]") != std::string::npos);
    CHECK(j.dump().find("\"l0\":11") != std::string::npos);
  }

  TEST_CASE("network masks carry spec layer indices") {
    const auto net = fixtures::tiny_mlp(5, 2);
    const auto m = all_ones(net);
    REQUIRE(m.layer_count() == 1);
    CHECK(m.layers()[0].layer_index == 1);
    CHECK(per_layer_counts(m)[0].first == 1);
  }
}
