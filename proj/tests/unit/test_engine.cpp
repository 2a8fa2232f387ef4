#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/train.hpp"

using namespace relu_sculpt;
using fixtures::net_from_json;

namespace {

Network single_site(const std::string& replacement, std::size_t n = 1) {
  return net_from_json(R"({"layers":[{"type":"maskable_activation","replacement":)" + replacement + "}]}", {n});
}

ReluMask mask_of(const Network& net, std::vector<bool> bits) {
  return ReluMask::from_predicate(all_ones(net).layers(), [&](std::size_t, std::size_t s) { return bits[s]; });
}

template <typename T>
std::vector<T> logits_of(const Network& net, const BasicParameters<T>& p, const ReluMask& m, std::vector<T> x) {
  const auto out = forward(net, p, m, std::span<const T>(x));
  return {out.values().begin(), out.values().end()};
}

Dataset constant_dataset(std::vector<std::uint32_t> labels, std::size_t classes) {
  Dataset ds;
  ds.images = Tensor({labels.size(), 2}, 0.0f);
  ds.labels = std::move(labels);
  ds.class_count = classes;
  return ds;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("identity replacement on a cleared bit") {
    const auto net = single_site(R"("identity")");
    const auto p = Parameters::zeros(net);
    CHECK(logits_of<float>(net, p, all_zeros(net), {-3.0f}) == std::vector<float>{-3.0f});
  }

  TEST_CASE("relu on set bits") {
    const auto net = single_site(R"("identity")", 2);
    const auto p = Parameters::zeros(net);
    CHECK(logits_of<float>(net, p, all_ones(net), {-1.0f, 2.0f}) == std::vector<float>{0.0f, 2.0f});
  }

  TEST_CASE("polynomial replacement") {
    const auto net = single_site(R"({"type":"poly","a":0.25,"b":0.5,"c":0})");
    const auto p = Parameters::zeros(net);
    CHECK(logits_of<float>(net, p, all_zeros(net), {2.0f})[0] == doctest::Approx(2.0));
  }

  TEST_CASE("mixed mask applies per site") {
    const auto net = single_site(R"("identity")", 3);
    const auto p = Parameters::zeros(net);
    CHECK(logits_of<float>(net, p, mask_of(net, {true, false, true}), {-1.0f, -2.0f, 3.0f}) ==
          std::vector<float>{0.0f, -2.0f, 3.0f});
  }

  TEST_CASE("input and mask shape errors") {
    const auto net = fixtures::tiny_mlp(4, 2);
    const auto p = Parameters::zeros(net);
    std::vector<float> x(3, 0.0f);
    CHECK_THROWS_AS(forward(net, p, all_ones(net), std::span<const float>(x)), ShapeError);
    const auto wrong = ReluMask::from_site_counts(std::vector<std::size_t>{5});
    std::vector<float> ok(2, 0.0f);
    CHECK_THROWS_AS(forward(net, p, wrong, std::span<const float>(ok)), ShapeError);
  }

  TEST_CASE("cross-entropy values") {
    std::vector<double> uniform10(10, 0.3);
    CHECK(loss_ce<double>(uniform10, 4) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(loss_ce<double>(std::vector<double>{100.0, 0.0}, 0) < 1e-10);
    CHECK(loss_ce<double>(std::vector<double>{0.0, 0.0, 0.0}, 2) == doctest::Approx(1.098612).epsilon(1e-6));
    CHECK_THROWS_AS(loss_ce<double>(std::vector<double>{0.0, 0.0}, 2), PreconditionError);
    CHECK(std::isfinite(loss_ce<float>(std::vector<float>{1000.0f, -1000.0f}, 1)));
  }

  TEST_CASE("cross-entropy is shift invariant") {
    rng::Stream s(1);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> z(5), shifted(5);
      const double c = s.uniform(-50, 50);
      for (std::size_t k = 0; k < 5; ++k) {
        z[k] = s.normal();
        shifted[k] = z[k] + c;
      }
      CHECK(std::abs(loss_ce<double>(z, 3) - loss_ce<double>(shifted, 3)) <= 1e-12);
    }
  }

  TEST_CASE("zero input through a linear layer: bias gradient is softmax minus onehot") {
    const auto net = net_from_json(R"({"layers":[{"type":"linear","in":3,"out":4}]})", {3});
    auto p = fixtures::random_params_d(net, 3);
    const std::vector<double> x(3, 0.0);
    Trace<double> trace;
    const auto gates = SoftMaskD::filled(net, 1.0);
    const auto& logits = forward(net, p, gates, std::span<const double>(x), trace);
    std::vector<double> soft(4);
    double sum = 0;
    for (std::size_t k = 0; k < 4; ++k) sum += std::exp(logits[k]);
    for (std::size_t k = 0; k < 4; ++k) soft[k] = std::exp(logits[k]) / sum;
    auto grads = ParametersD::zeros(net);
    backward(net, p, gates, trace, 1, grads);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(grads.at(0).bias[k] == doctest::Approx(soft[k] - (k == 1 ? 1.0 : 0.0)).epsilon(1e-12));
    }
    for (double w : grads.at(0).weight.values()) CHECK(w == 0.0);
  }

  TEST_CASE("identity-replaced site passes its upstream gradient unchanged") {
    // act (identity, bit 0) -> linear(2,2): dL/dv must equal dL/d(out of act).
    const auto net = net_from_json(R"({"layers":[{"type":"linear","in":2,"out":2},{"type":"maskable_activation"},
                                                {"type":"linear","in":2,"out":2}]})",
                                   {2});
    const auto p = fixtures::random_params_d(net, 5);
    const auto gates = SoftMaskD::filled(net, 0.0);
    const std::vector<double> x{0.3, -0.7};
    Trace<double> trace;
    forward(net, p, gates, std::span<const double>(x), trace);
    auto grads = ParametersD::zeros(net);
    backward(net, p, gates, trace, 0, grads);
    for (std::size_t k = 0; k < 2; ++k) CHECK(trace.grads[0][k] == trace.grads[1][k]);
  }

  TEST_CASE("all-ones mask equals the plain relu network") {
    const auto net = fixtures::tiny_mlp(5, 3);
    const auto p = fixtures::random_params_d(net, 8);
    const std::vector<double> x{0.4, -1.1};
    std::vector<double> h(5), expect(3);
    const auto& w1 = p.at(0);
    const auto& w2 = p.at(2);
    for (std::size_t o = 0; o < 5; ++o) {
      h[o] = w1.bias[o] + w1.weight[o * 2] * x[0] + w1.weight[o * 2 + 1] * x[1];
      h[o] = std::max(h[o], 0.0);
    }
    for (std::size_t o = 0; o < 3; ++o) {
      expect[o] = w2.bias[o];
      for (std::size_t i = 0; i < 5; ++i) expect[o] += w2.weight[o * 5 + i] * h[i];
    }
    const auto got = logits_of<double>(net, p, all_ones(net), x);
    for (std::size_t o = 0; o < 3; ++o) CHECK(got[o] == doctest::Approx(expect[o]).epsilon(1e-12));
  }

  TEST_CASE("all-zeros mask with identity replacement makes the network affine") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const auto g = fixtures::random_gradient_case(seed);
      NetworkSpec spec = g.net.spec();
      for (auto& layer : spec.layers) {
        if (auto* a = std::get_if<layers::MaskableActivation>(&layer)) a->replacement = Replacement::identity();
      }
      const Network net(spec, g.net.input_shape());
      const ReluMask zeros = all_zeros(net);
      rng::Stream s(seed);
      std::vector<double> x1(g.x.size()), x2(g.x.size()), sum(g.x.size()), zero(g.x.size(), 0.0);
      for (std::size_t i = 0; i < x1.size(); ++i) {
        x1[i] = s.normal();
        x2[i] = s.normal();
        sum[i] = x1[i] + x2[i];
      }
      const auto f1 = logits_of<double>(net, g.params, zeros, x1);
      const auto f2 = logits_of<double>(net, g.params, zeros, x2);
      const auto f0 = logits_of<double>(net, g.params, zeros, zero);
      const auto f12 = logits_of<double>(net, g.params, zeros, sum);
      for (std::size_t k = 0; k < f1.size(); ++k) {
        CHECK(std::abs(f1[k] + f2[k] - f0[k] - f12[k]) <= 1e-5 * std::max(1.0, std::abs(f12[k])));
      }
    }
  }

  TEST_CASE("single-threaded forward is bitwise deterministic") {
    const auto net = fixtures::tiny_mlp(16, 3);
    const auto p = Parameters::kaiming_uniform(net, 2);
    const std::vector<float> x{0.25f, -0.5f};
    CHECK(logits_of<float>(net, p, all_ones(net), x) == logits_of<float>(net, p, all_ones(net), x));
  }

  TEST_CASE("accuracy of a constant-output network") {
    const auto net = fixtures::tiny_mlp(2, 2);
    auto p = Parameters::zeros(net);
    p.at(2).bias[0] = 1.0f;  // always predicts class 0
    CHECK(evaluate_accuracy(net, p, all_ones(net), constant_dataset({0, 0, 0}, 2)) == 100.0);
    CHECK(evaluate_accuracy(net, p, all_ones(net), constant_dataset({0, 1, 0, 1}, 2)) == 50.0);
  }

  TEST_CASE("argmax ties resolve to the lowest class") {
    const auto net = fixtures::tiny_mlp(2, 3);
    const auto p = Parameters::zeros(net);  // all logits equal
    CHECK(evaluate_accuracy(net, p, all_ones(net), constant_dataset({0, 0}, 3)) == 100.0);
    CHECK(evaluate_accuracy(net, p, all_ones(net), constant_dataset({2, 1}, 3)) == 0.0);
    CHECK(argmax<float>(std::vector<float>{1.0f, 3.0f, 3.0f}) == 1);
  }

  TEST_CASE("empty dataset is rejected") {
    const auto net = fixtures::tiny_mlp(2, 2);
    CHECK_THROWS_AS(evaluate_accuracy(net, Parameters::zeros(net), all_ones(net), constant_dataset({}, 2)),
                    PreconditionError);
  }

  TEST_CASE("trained tiny net accuracy matches a manual argmax count") {
    const auto net = fixtures::tiny_mlp(16, 2);
    const Dataset ds = gen_blobs(2, 32, 2, 2.0, 4);
    TrainConfig cfg;
    cfg.optimizer = AdamConfig{};
    cfg.lr_max = 0.01;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    const Parameters p = finetune(net, Parameters::kaiming_uniform(net, 1), all_ones(net), ds, cfg);
    CHECK(ds.size() == 64);
    const double acc = evaluate_accuracy(net, p, all_ones(net), ds);
    CHECK(acc == fixtures::manual_accuracy(net, p, all_ones(net), ds));
    CHECK(evaluate_accuracy(net, p, all_ones(net), ds, 4) == acc);
  }

  TEST_CASE("mean loss in double precision") {
    const auto net = fixtures::tiny_mlp(4, 3);
    const auto ds = gen_spirals(3, 5, 0.0, 1);
    const auto p = ParametersD::zeros(net);
    CHECK(mean_loss(net, p, SoftMaskD::filled(net, 1.0), ds) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
}
