#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "relu_sculpt/error.hpp"

using namespace relu_sculpt;
using fixtures::net_from_json;

namespace {

NetworkSpec spec_of(const std::string& layers) {
  return network_spec_from_json(nlohmann::json::parse(R"({"layers":[)" + layers + "]}"));
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("linear shape") {
    const auto shapes = infer_shapes(spec_of(R"({"type":"linear","in":4,"out":2})"), {4});
    CHECK(shapes.back() == Shape{2});
  }

  TEST_CASE("same-padding conv shape") {
    const auto shapes = infer_shapes(spec_of(R"({"type":"conv2d","in_ch":3,"out_ch":8,"kernel":3,"stride":1,"pad":1})"),
                                     {3, 32, 32});
    CHECK(shapes.back() == Shape{8, 32, 32});
  }

  TEST_CASE("strided conv and pooling shapes") {
    const auto shapes = infer_shapes(spec_of(R"({"type":"conv2d","in_ch":1,"out_ch":2,"kernel":3,"stride":2,"pad":1},
                                                {"type":"avg_pool","k":2},{"type":"flatten"})"),
                                     {1, 9, 9});
    CHECK(shapes[0] == Shape{2, 5, 5});
    CHECK(shapes[1] == Shape{2, 2, 2});
    CHECK(shapes[2] == Shape{8});
  }

  TEST_CASE("global pooling collapses the spatial map") {
    const auto shapes = infer_shapes(spec_of(R"({"type":"avg_pool","global":true})"), {4, 6, 5});
    CHECK(shapes.back() == Shape{4, 1, 1});
  }

  TEST_CASE("residual_add with mismatched shapes is rejected with the layer index") {
    const auto spec = spec_of(R"({"type":"residual_begin","tag":"a"},{"type":"linear","in":4,"out":3},
                                 {"type":"residual_add","tag":"a"})");
    try {
      infer_shapes(spec, {4});
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(e.layer_index() == 2);
    }
  }

  TEST_CASE("shortcut projection reconciles a residual") {
    const auto spec = spec_of(R"({"type":"residual_begin","tag":"a"},
                                 {"type":"conv2d","in_ch":2,"out_ch":4,"kernel":3,"stride":2,"pad":1},
                                 {"type":"residual_add","tag":"a","shortcut":{"out_ch":4,"stride":2}})");
    CHECK(infer_shapes(spec, {2, 8, 8}).back() == Shape{4, 4, 4});
  }

  TEST_CASE("unknown residual tags and duplicate tags are errors") {
    CHECK_THROWS_AS(infer_shapes(spec_of(R"({"type":"residual_add","tag":"x"})"), {4}), ShapeError);
    CHECK_THROWS_AS(infer_shapes(spec_of(R"({"type":"residual_begin","tag":"x"},{"type":"residual_begin","tag":"x"},
                                            {"type":"residual_add","tag":"x"})"),
                                 {4}),
                    ShapeError);
  }

  TEST_CASE("linear input size mismatch names the layer") {
    try {
      infer_shapes(spec_of(R"({"type":"linear","in":4,"out":2},{"type":"linear","in":3,"out":1})"), {4});
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(e.layer_index() == 1);
    }
  }

  TEST_CASE("declared site counts are validated and missing ones inferred") {
    const auto ok = net_from_json(R"({"layers":[{"type":"maskable_activation","site_count":32}]})", {2, 4, 4});
    CHECK(ok.total_sites() == 32);
    CHECK_THROWS_AS(net_from_json(R"({"layers":[{"type":"maskable_activation","site_count":31}]})", {2, 4, 4}),
                    ShapeError);
    const auto inferred = net_from_json(R"({"layers":[{"type":"maskable_activation"}]})", {2, 4, 4});
    CHECK(inferred.site_counts() == std::vector<std::size_t>{32});
  }

  TEST_CASE("strict JSON schema") {
    CHECK_THROWS_AS(spec_of(R"({"type":"linear","in":4,"out":2,"bias":false})"), FormatError);
    CHECK_THROWS_AS(spec_of(R"({"type":"dropout"})"), FormatError);
    CHECK_THROWS_AS(spec_of(R"({"type":"linear","in":0,"out":2})"), FormatError);
    CHECK_THROWS_AS(spec_of(R"({"type":"maskable_activation","replacement":"tanh"})"), FormatError);
    CHECK_THROWS_AS(network_spec_from_json(nlohmann::json::parse(R"({"layer":[]})")), FormatError);
  }

  TEST_CASE("replacements parse with defaults") {
    const auto spec = spec_of(R"({"type":"maskable_activation","replacement":"poly"},
                                 {"type":"maskable_activation","replacement":{"type":"poly","a":1,"b":0,"c":2}},
                                 {"type":"maskable_activation"})");
    const auto& p0 = std::get<layers::MaskableActivation>(spec.layers[0]).replacement;
    CHECK(p0 == Replacement::poly(0.25, 0.5, 0.0));
    const auto& p1 = std::get<layers::MaskableActivation>(spec.layers[1]).replacement;
    CHECK(p1 == Replacement::poly(1, 0, 2));
    CHECK(std::get<layers::MaskableActivation>(spec.layers[2]).replacement == Replacement::identity());
  }

  TEST_CASE("spec JSON round trip") {
    const std::string text = R"({"layers":[{"type":"conv2d","in_ch":1,"out_ch":2,"kernel":3,"stride":1,"pad":1},
      {"type":"maskable_activation","replacement":{"type":"poly","a":0.1,"b":0.2,"c":0.3}},
      {"type":"residual_begin","tag":"t"},{"type":"conv2d","in_ch":2,"out_ch":2,"kernel":1,"stride":1,"pad":0},
      {"type":"residual_add","tag":"t"},{"type":"avg_pool","k":2},{"type":"avg_pool","global":true},
      {"type":"flatten"},{"type":"linear","in":2,"out":3}],"input_shape":[1,4,4]})";
    const auto spec = network_spec_from_json(nlohmann::json::parse(text));
    CHECK(network_spec_from_json(to_json(spec)) == spec);
  }

  TEST_CASE("file errors carry the path and position") {
    const auto path = std::filesystem::temp_directory_path() / "relu_sculpt_bad_spec.json";
    {
      std::ofstream out(path);
      out << "{\n  \"layers\": [\n    {\"type\": \"linear\",, }\n  ]\n}\n";
    }
    try {
      load_network_spec(path);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      const std::string what = e.what();
      CHECK(what.find(path.string()) != std::string::npos);
      CHECK(what.find(":3:") != std::string::npos);
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("semantic and shape errors name the layer's line") {
    const auto path = std::filesystem::temp_directory_path() / "relu_sculpt_bad_layer.json";
    {
      std::ofstream out(path);
      out << "{\"name\": \"x\", \"layers\": [\n  {\"type\": \"linear\", \"in\": 2, \"out\": 4},\n"
             "  {\"type\": \"maskable_activation\", \"replacement\": \"identity\"},\n\n"
             "  {\"type\": \"linear\", \"in\": 5, \"out\": 3}\n]}\n";
    }
    const NetworkSpec spec = load_network_spec(path);
    REQUIRE(spec.origin);
    CHECK(spec.origin->layer_lines == std::vector<std::size_t>{2, 3, 5});
    try {
      Network net(spec, {2});
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(e.layer_index() == 2);
      CHECK(std::string(e.what()).find(path.string() + ":5: layer 2:") != std::string::npos);
    }
    {
      std::ofstream out(path);
      out << "{\"layers\": [\n  {\"type\": \"linear\", \"in\": 2, \"out\": 4},\n  {\"type\": \"conv9\"}\n]}\n";
    }
    try {
      load_network_spec(path);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(path.string() + ":3: layer 1:") != std::string::npos);
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("maskable layer bookkeeping") {
    const auto net = net_from_json(R"({"layers":[{"type":"linear","in":2,"out":8},{"type":"maskable_activation"},
      {"type":"linear","in":8,"out":4},{"type":"maskable_activation"},{"type":"linear","in":4,"out":2}]})",
                                   {2});
    CHECK(net.maskable_layers() == std::vector<std::size_t>{1, 3});
    CHECK(net.mask_ordinal(3) == 1);
    CHECK(net.total_sites() == 12);
    CHECK(net.class_count() == 2);
  }

  TEST_CASE("bundled ResNet18 spec") {
    const auto spec = load_network_spec(std::filesystem::path(RELU_SCULPT_SOURCE_DIR) / "networks/resnet18_cifar.json");
    const Network net(spec, {3, 32, 32});
    const auto counts = net.site_counts();
    const std::vector<std::size_t> expected{65536, 65536, 65536, 65536, 65536, 32768, 32768, 32768, 32768,
                                            16384, 16384, 16384, 16384, 8192,  8192,  8192,  8192};
    CHECK(counts == expected);
    CHECK(net.total_sites() == 557056);
    CHECK(net.output_shape() == Shape{10});
  }
}

TEST_SUITE("network") {
  TEST_CASE("parameters: kaiming init, codec and validation") {
    const auto net = net_from_json(R"({"layers":[{"type":"conv2d","in_ch":2,"out_ch":3,"kernel":3,"stride":1,"pad":1},
      {"type":"maskable_activation"},{"type":"flatten"},{"type":"linear","in":48,"out":2}]})",
                                   {2, 4, 4});
    const Parameters p = Parameters::kaiming_uniform(net, 9);
    CHECK(p.at(0).weight.shape() == Shape{3, 2, 3, 3});
    CHECK(p.at(3).weight.shape() == Shape{2, 48});
    const double bound = std::sqrt(6.0 / 18.0);
    for (float w : p.at(0).weight.values()) CHECK(std::abs(w) <= bound);
    for (float b : p.at(0).bias.values()) CHECK(b == 0.0f);
    CHECK(Parameters::kaiming_uniform(net, 9) == p);
    CHECK_FALSE(Parameters::kaiming_uniform(net, 10) == p);

    const auto bytes = serialize_parameters(p);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RSW1");
    CHECK(bytes.size() == 4 + 2 * (4 + 8) + 4 * (54 + 3 + 96 + 2));
    CHECK(deserialize_parameters(bytes, net) == p);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_parameters(truncated, net), FormatError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_parameters(bad_magic, net), FormatError);
    const auto other = net_from_json(R"({"layers":[{"type":"linear","in":2,"out":2}]})", {2});
    CHECK_THROWS_AS(deserialize_parameters(bytes, other), FormatError);
  }
}
