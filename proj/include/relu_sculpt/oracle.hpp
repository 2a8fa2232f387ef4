#pragma once

// Exhaustive optimality oracle for tiny masks and an auditor that compares
// BCD end points against it. The objective over binary masks is
//
//     P(m)   = mean CE of f_{theta,m} over the dataset + lambda * ||m||_1
//     Psi(m) = beta/2 * ||m* - m||^2 + P(m)
//
// with theta frozen. The coordinate-descent guarantees
//     E[P(m_T)] - P(m*) <= d * Psi(0) / (T + 1)
//     P(m_T) - P(m*)    <= 2 d * Psi(0) / (T + 1)   (probability > 1/2)
// assume convexity; here they are reported, not enforced.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relu_sculpt/bcd.hpp"
#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"

#include <json.hpp>

namespace relu_sculpt {

struct TinyProblem {
  Network net;
  Parameters params;  // frozen
  Dataset data;
  double lambda = 0.0;
  std::optional<double> beta;  // nullopt: estimated at audit time
  std::size_t d_max = 16;
  std::size_t enumeration_cap = std::size_t{1} << 16;

  std::size_t dimension() const { return net.total_sites(); }
};

double p_of_m(const TinyProblem& problem, const ReluMask& m);
double psi(const TinyProblem& problem, const ReluMask& m, const ReluMask& m_star, double beta);

struct OracleOptimum {
  ReluMask m_star;
  double p_star = 0.0;
  std::size_t enumerated = 0;
  bool sound = true;  // p_star <= P(m) for every enumerated m
};

/// Number of masks over d sites with at most `budget` live bits.
std::uint64_t feasible_mask_count(std::size_t d, std::size_t budget);

/// Minimizes `objective` over all masks shaped like `shape` with l0 <= budget.
/// Ties resolve to the lexicographically smallest bit string (flat site 0
/// first, 0 < 1). Throws EnumerationCapError beyond `cap` masks.
OracleOptimum brute_force_min(const ReluMask& shape, std::size_t budget, std::uint64_t cap,
                              const std::function<double(const ReluMask&)>& objective);
OracleOptimum brute_force_opt(const TinyProblem& problem, std::size_t budget);

enum class BoundVariant { expected, probabilistic };
double bound_rhs(std::size_t d, double psi0, std::size_t steps, BoundVariant variant);

/// Largest ||grad P(a1) - grad P(a2)|| / ||a1 - a2|| over sampled soft-mask pairs.
/// An empirical lower bound on the smoothness constant, not the constant itself.
double estimate_beta(const TinyProblem& problem, std::size_t n_samples, std::uint64_t seed);

struct SeedAudit {
  std::uint64_t seed = 0;
  std::size_t final_l0 = 0;
  double p_final = 0.0;
  double gap = 0.0;
  bool eq6_satisfied = false;
};

struct OracleReport {
  std::size_t d = 0;
  std::size_t budget = 0;
  std::size_t steps = 0;  // T
  double lambda = 0.0;
  double beta = 0.0;
  bool beta_estimated = false;
  ReluMask m_star;
  double p_star = 0.0;
  std::size_t enumerated = 0;
  bool oracle_sound = false;
  double psi0 = 0.0;
  double eq3_rhs = 0.0;
  double eq6_rhs = 0.0;
  std::vector<SeedAudit> runs;
  double mean_gap = 0.0;
  bool eq3_mean_satisfied = false;
  double eq6_satisfaction = 0.0;
  bool all_gaps_non_negative = false;
};

/// Runs BCD without finetuning from the all-ones mask down to `budget` for
/// seeds cfg.seed, cfg.seed + 1, ... and compares each end point with m*.
OracleReport audit_run(const TinyProblem& problem, std::size_t budget, const BcdConfig& cfg, std::size_t n_seeds);

nlohmann::json to_json(const OracleReport& report);
/// Columns: seed,gap,eq3_rhs,eq6_rhs,satisfied.
std::string audit_csv(const OracleReport& report);

}  // namespace relu_sculpt
