#include <doctest.h>

#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/oracle.hpp"

using namespace relu_sculpt;

namespace {

double manual_mean_ce(const TinyProblem& t, const ReluMask& m) {
  const auto p = t.params.cast<double>();
  double sum = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const auto s = t.data.sample(i);
    const std::vector<double> x(s.begin(), s.end());
    const auto logits = forward(t.net, p, m, std::span<const double>(x));
    double mx = -INFINITY;
    for (double v : logits.values()) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.values()) z += std::exp(v - mx);
    sum += std::log(z) + mx - logits.values()[t.data.labels[i]];
  }
  return sum / static_cast<double>(t.data.size());
}

std::string bit_string(const ReluMask& m) {
  std::string s;
  for (std::size_t i = 0; i < m.total_sites(); ++i) s += m.test_flat(i) ? '1' : '0';
  return s;
}

ReluMask from_string(const ReluMask& shape, const std::string& bits) {
  std::vector<std::size_t> offset{0};
  for (const auto& l : shape.layers()) offset.push_back(offset.back() + l.site_count);
  return ReluMask::from_predicate(shape.layers(), [&](std::size_t l, std::size_t s) { return bits[offset[l] + s] == '1'; });
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("P(m) is mean CE plus lambda times the budget") {
    auto t = fixtures::tiny_problem(0.0);
    const auto ones = all_ones(t.net);
    CHECK(p_of_m(t, ones) == doctest::Approx(manual_mean_ce(t, ones)).epsilon(1e-12));
    t.lambda = 1.0;
    CHECK(p_of_m(t, ones) == doctest::Approx(manual_mean_ce(t, ones) + 10.0).epsilon(1e-12));
    t.lambda = 0.1;
    const auto three = ReluMask::from_predicate(ones.layers(), [](std::size_t l, std::size_t s) { return l == 1 && s < 3; });
    CHECK(p_of_m(t, three) - manual_mean_ce(t, three) == doctest::Approx(0.3).epsilon(1e-12));
  }

  TEST_CASE("Psi adds half beta times the Hamming distance") {
    auto t = fixtures::tiny_problem(0.05);
    const auto ones = all_ones(t.net);
    const auto zeros = all_zeros(t.net);
    CHECK(psi(t, ones, ones, 3.0) == p_of_m(t, ones));
    CHECK(psi(t, zeros, ones, 3.0) == doctest::Approx(1.5 * 10 + p_of_m(t, zeros)));
    const auto five = from_string(ones, "1111100000");
    CHECK(psi(t, five, zeros, 2.0) == doctest::Approx(5.0 + p_of_m(t, five)));
  }

  TEST_CASE("brute force over a tabulated d=2 objective") {
    const std::vector<std::size_t> counts{2};
    const auto shape = ReluMask::from_site_counts(counts);
    const std::map<std::string, double> table{{"00", 3.0}, {"01", 1.0}, {"10", 2.0}, {"11", 4.0}};
    auto objective = [&](const ReluMask& m) { return table.at(bit_string(m)); };
    const auto opt = brute_force_min(shape, 2, 100, objective);
    CHECK(bit_string(opt.m_star) == "01");
    CHECK(opt.p_star == 1.0);
    CHECK(opt.enumerated == 4);
    CHECK(opt.sound);

    const auto b1 = brute_force_min(shape, 1, 100, objective);
    CHECK(b1.enumerated == 3);
    CHECK(bit_string(b1.m_star) == "01");
    const auto b0 = brute_force_min(shape, 0, 100, objective);
    CHECK(bit_string(b0.m_star) == "00");
    CHECK(b0.enumerated == 1);
  }

  TEST_CASE("ties resolve to the lexicographically smallest mask") {
    const std::vector<std::size_t> counts{3, 2};
    const auto shape = ReluMask::from_site_counts(counts);
    const auto flat = brute_force_min(shape, 5, 100, [](const ReluMask&) { return 7.0; });
    CHECK(flat.m_star.l0() == 0);
    const auto tie = brute_force_min(shape, 5, 100, [](const ReluMask& m) { return m.l0() == 1 ? 0.0 : 1.0; });
    CHECK(bit_string(tie.m_star) == "00001");
  }

  TEST_CASE("feasible counts and the enumeration cap") {
    CHECK(feasible_mask_count(10, 10) == 1024);
    CHECK(feasible_mask_count(10, 0) == 1);
    CHECK(feasible_mask_count(4, 2) == 11);
    const std::vector<std::size_t> counts{20};
    const auto shape = ReluMask::from_site_counts(counts);
    CHECK_THROWS_AS(brute_force_min(shape, 20, 1000, [](const ReluMask&) { return 0.0; }), EnumerationCapError);
    auto t = fixtures::tiny_problem(0.0);
    t.enumeration_cap = 100;
    CHECK_THROWS_AS(brute_force_opt(t, 10), EnumerationCapError);
  }

  TEST_CASE("brute force on the tiny problem is exhaustive") {
    const auto t = fixtures::tiny_problem(0.05);
    const auto opt = brute_force_opt(t, 10);
    CHECK(opt.enumerated == 1024);
    CHECK(opt.sound);
    const auto shape = all_ones(t.net);
    for (std::uint32_t bits = 0; bits < 1024; ++bits) {
      const auto m = ReluMask::from_predicate(shape.layers(), [&](std::size_t l, std::size_t s) {
        const std::size_t flat = l == 0 ? s : 6 + s;
        return (bits >> flat) & 1U;
      });
      REQUIRE(opt.p_star <= p_of_m(t, m));
    }
  }

  TEST_CASE("bound right-hand sides") {
    CHECK(bound_rhs(8, 6.0, 11, BoundVariant::expected) == 4.0);
    CHECK(bound_rhs(8, 6.0, 11, BoundVariant::probabilistic) == 8.0);
    CHECK(bound_rhs(10, 2.5, 0, BoundVariant::expected) == 25.0);
    CHECK(bound_rhs(10, 2.5, 0, BoundVariant::probabilistic) == 50.0);
    double prev = INFINITY;
    for (std::size_t t = 0; t < 50; ++t) {
      const double v = bound_rhs(7, 1.3, t, BoundVariant::expected);
      CHECK(v < prev);
      CHECK(bound_rhs(7, 1.3, t, BoundVariant::probabilistic) == 2.0 * v);
      prev = v;
    }
  }

  TEST_CASE("beta estimate") {
    auto t = fixtures::tiny_problem(0.0);
    const double b = estimate_beta(t, 50, 3);
    CHECK(std::isfinite(b));
    CHECK(b >= 0.0);
    t.params.at(4).weight = Tensor(t.params.at(4).weight.shape(), 0.0f);
    CHECK(estimate_beta(t, 50, 3) == 0.0);
  }

  TEST_CASE("audit with budget d has gap P(1) - P(m*)") {
    const auto t = fixtures::tiny_problem(0.0);
    BcdConfig c;
    c.drc = 2;
    c.rt = 5;
    c.seed = 1;
    const auto r = audit_run(t, 10, c, 2);
    CHECK(r.steps == 0);
    for (const auto& run : r.runs) {
      CHECK(run.final_l0 == 10);
      CHECK(run.gap == doctest::Approx(p_of_m(t, all_ones(t.net)) - r.p_star));
    }
  }

  TEST_CASE("audit report is reproducible and internally consistent") {
    auto t = fixtures::tiny_problem(0.05);
    t.beta = 1.0;
    BcdConfig c;
    c.drc = 1;
    c.rt = 4;
    c.seed = 5;
    const auto a = audit_run(t, 5, c, 3);
    const auto b = audit_run(t, 5, c, 3);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(audit_csv(a) == audit_csv(b));
    CHECK(a.steps == 5);
    CHECK(!a.beta_estimated);
    CHECK(a.psi0 == doctest::Approx(0.5 * a.m_star.l0() + p_of_m(t, all_zeros(t.net))));
    CHECK(a.eq3_rhs == bound_rhs(10, a.psi0, 5, BoundVariant::expected));
    CHECK(a.eq6_rhs == 2.0 * a.eq3_rhs);
    REQUIRE(a.runs.size() == 3);
    std::size_t ok = 0;
    for (const auto& r : a.runs) {
      CHECK(r.final_l0 == 5);
      CHECK(r.gap >= 0.0);
      ok += r.eq6_satisfied ? 1 : 0;
    }
    CHECK(a.eq6_satisfaction == doctest::Approx(ok / 3.0));
    CHECK(a.all_gaps_non_negative);
    CHECK(audit_csv(a).rfind("seed,gap,eq3_rhs,eq6_rhs,satisfied\n", 0) == 0);
    const auto j = to_json(a);
    for (const char* key : {"eq3_rhs_expected", "eq6_rhs_probabilistic", "eq6_satisfaction_fraction", "runs", "notes"}) {
      CHECK(j.contains(key));
    }
  }

  TEST_CASE("audit preconditions") {
    auto t = fixtures::tiny_problem(0.0);
    BcdConfig c;
    CHECK_THROWS_AS(audit_run(t, 11, c, 1), PreconditionError);
    t.d_max = 8;
    CHECK_THROWS_AS(audit_run(t, 5, c, 1), Error);
  }
}
