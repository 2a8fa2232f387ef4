#include <doctest.h>

#include "fixtures.hpp"
#include "relu_sculpt/selective.hpp"

using namespace relu_sculpt;

TEST_SUITE("gradients") {
  TEST_CASE("analytic gradients match central differences on random tiny nets") {
    std::size_t tested = 0;
    for (std::uint64_t seed = 0; tested < 24; ++seed) {
      auto g = fixtures::random_gradient_case(seed);
      if (fixtures::min_kink_distance(g) < 1e-3) continue;
      CAPTURE(seed);
      CAPTURE(g.description);
      const auto e = fixtures::gradient_errors(g);
      CHECK(e.params <= 1e-6);
      CHECK(e.gates <= 1e-6);
      ++tested;
    }
  }

  TEST_CASE("gradient scale and accumulation") {
    auto g = fixtures::random_gradient_case(1);
    Trace<double> trace;
    forward(g.net, g.params, g.gates, std::span<const double>(g.x), trace);
    auto once = ParametersD::zeros(g.net);
    backward(g.net, g.params, g.gates, trace, g.label, once, static_cast<SoftMaskD*>(nullptr), 0.25);
    auto twice = ParametersD::zeros(g.net);
    backward(g.net, g.params, g.gates, trace, g.label, twice, static_cast<SoftMaskD*>(nullptr), 0.5);
    backward(g.net, g.params, g.gates, trace, g.label, twice, static_cast<SoftMaskD*>(nullptr), 0.5);
    const auto a = once.spans();
    const auto b = twice.spans();
    for (std::size_t s = 0; s < a.size(); ++s) {
      for (std::size_t i = 0; i < a[s].size(); ++i) CHECK(b[s][i] == doctest::Approx(4.0 * a[s][i]).epsilon(1e-12));
    }
  }

  TEST_CASE("snl loss gradient in alpha at interior points") {
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
      auto g = fixtures::random_gradient_case(seed);
      if (fixtures::min_kink_distance(g) < 1e-3) continue;
      const double lambda = 0.3;
      auto grads = ParametersD::zeros(g.net);
      auto ga = SoftMaskD::filled(g.net, 0.0);
      Trace<double> trace;
      forward(g.net, g.params, g.gates, std::span<const double>(g.x), trace);
      backward(g.net, g.params, g.gates, trace, g.label, grads, &ga, 1.0);
      SoftMaskD a = g.gates;
      const double h = 1e-5;
      for (std::size_t l = 0; l < a.layers.size(); ++l) {
        for (std::size_t i = 0; i < a.layers[l].size(); ++i) {
          const double keep = a.layers[l][i];
          a.layers[l][i] = keep + h;
          const double up = snl_loss<double>(g.net, g.params, a, g.x, g.label, lambda);
          a.layers[l][i] = keep - h;
          const double down = snl_loss<double>(g.net, g.params, a, g.x, g.label, lambda);
          a.layers[l][i] = keep;
          // d/d alpha of lambda * sum(alpha) is lambda
          CHECK(fixtures::relative_error(ga.layers[l][i] + lambda, (up - down) / (2 * h)) <= 1e-6);
        }
      }
    }
  }
}
