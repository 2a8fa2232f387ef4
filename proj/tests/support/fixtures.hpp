#pragma once

// Shared builders and independent oracles for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/engine.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/oracle.hpp"
#include "relu_sculpt/parameters.hpp"
#include "relu_sculpt/rng.hpp"

namespace fixtures {

using namespace relu_sculpt;

inline Network net_from_json(const std::string& text, Shape input) {
  return Network(network_spec_from_json(nlohmann::json::parse(text)), std::move(input));
}

inline ParametersD random_params_d(const Network& net, std::uint64_t seed, double scale = 0.5) {
  ParametersD p = ParametersD::zeros(net);
  rng::Stream s(seed, "fixture-params");
  for (auto span : p.spans()) {
    for (double& v : span) v = scale * s.normal();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle

struct GradientCase {
  Network net;
  ParametersD params;
  SoftMaskD gates;
  std::vector<double> x;
  std::size_t label = 0;
  std::string description;
};

inline std::string replacement_json(rng::Stream& s) {
  if (s.uniform01() < 0.5) return R"("identity")";
  return R"({"type":"poly","a":)" + std::to_string(s.uniform(-0.5, 0.5)) + R"(,"b":)" +
         std::to_string(s.uniform(0.2, 1.0)) + R"(,"c":)" + std::to_string(s.uniform(-0.2, 0.2)) + "}";
}

/// A random tiny network drawn from three families that together cover every
/// layer type (conv2d with stride/pad, linear, both replacements, avg_pool
/// with a window and global, flatten, residual blocks with and without a
/// projection shortcut).
inline GradientCase random_gradient_case(std::uint64_t seed) {
  rng::Stream s(seed, "gradient-case");
  const std::size_t family = seed % 3;
  const std::size_t classes = 2 + s.uniform_index(3);
  std::string layers;
  Shape input;
  auto act = [&] { return R"({"type":"maskable_activation","replacement":)" + replacement_json(s) + "},"; };
  if (family == 0) {
    const std::size_t in = 2 + s.uniform_index(3), h = 3 + s.uniform_index(4);
    input = {in};
    layers = R"({"type":"linear","in":)" + std::to_string(in) + R"(,"out":)" + std::to_string(h) + "}," + act() +
             R"({"type":"residual_begin","tag":"r"},{"type":"linear","in":)" + std::to_string(h) + R"(,"out":)" +
             std::to_string(h) + "}," + act() + R"({"type":"linear","in":)" + std::to_string(h) + R"(,"out":)" +
             std::to_string(h) + R"(},{"type":"residual_add","tag":"r"},)" + act() + R"({"type":"linear","in":)" +
             std::to_string(h) + R"(,"out":)" + std::to_string(classes) + "}";
  } else if (family == 1) {
    const std::size_t c = 1 + s.uniform_index(2), hw = 4 + 2 * s.uniform_index(2), oc = 2 + s.uniform_index(2);
    const std::size_t k = 1 + 2 * s.uniform_index(2), stride = 1 + s.uniform_index(2);
    const std::size_t pad = k / 2;
    const std::size_t out_hw = (hw + 2 * pad - k) / stride + 1;
    const std::size_t pooled = out_hw / 2;
    input = {c, hw, hw};
    layers = R"({"type":"conv2d","in_ch":)" + std::to_string(c) + R"(,"out_ch":)" + std::to_string(oc) +
             R"(,"kernel":)" + std::to_string(k) + R"(,"stride":)" + std::to_string(stride) + R"(,"pad":)" +
             std::to_string(pad) + "}," + act() +
             R"({"type":"residual_begin","tag":"a"},{"type":"conv2d","in_ch":)" + std::to_string(oc) +
             R"(,"out_ch":)" + std::to_string(oc) + R"(,"kernel":3,"stride":1,"pad":1},)" + act() +
             R"({"type":"residual_add","tag":"a"},{"type":"avg_pool","k":2},{"type":"flatten"},)" + act() +
             R"({"type":"linear","in":)" + std::to_string(oc * pooled * pooled) + R"(,"out":)" +
             std::to_string(classes) + "}";
  } else {
    const std::size_t c = 1 + s.uniform_index(2), hw = 4, oc = 2 + s.uniform_index(2);
    input = {c, hw, hw};
    layers = R"({"type":"conv2d","in_ch":)" + std::to_string(c) + R"(,"out_ch":)" + std::to_string(c) +
             R"(,"kernel":3,"pad":1},)" + act() + R"({"type":"residual_begin","tag":"d"},{"type":"conv2d","in_ch":)" +
             std::to_string(c) + R"(,"out_ch":)" + std::to_string(oc) + R"(,"kernel":3,"stride":2,"pad":1},)" + act() +
             R"({"type":"conv2d","in_ch":)" + std::to_string(oc) + R"(,"out_ch":)" + std::to_string(oc) +
             R"(,"kernel":3,"pad":1},{"type":"residual_add","tag":"d","shortcut":{"out_ch":)" + std::to_string(oc) +
             R"(,"stride":2}},)" + act() + R"({"type":"avg_pool","global":true},{"type":"flatten"},{"type":"linear","in":)" +
             std::to_string(oc) + R"(,"out":)" + std::to_string(classes) + "}";
  }
  GradientCase g{net_from_json(R"({"layers":[)" + layers + "]}", input), {}, {}, {}, 0,
                 "family " + std::to_string(family)};
  g.params = random_params_d(g.net, seed);
  g.gates = SoftMaskD::filled(g.net, 0.0);
  for (auto& l : g.gates.layers) {
    for (double& v : l) v = s.uniform(0.05, 0.95);
  }
  g.x.resize(element_count(g.net.input_shape()));
  for (double& v : g.x) v = s.normal();
  g.label = s.uniform_index(classes);
  return g;
}

/// Smallest |pre-activation| over every maskable site; finite differences are
/// only meaningful away from the ReLU kink.
inline double min_kink_distance(const GradientCase& g) {
  Trace<double> trace;
  forward(g.net, g.params, g.gates, std::span<const double>(g.x), trace);
  double m = INFINITY;
  for (std::size_t idx : g.net.maskable_layers()) {
    const auto& in = idx == 0 ? trace.input : trace.outputs[idx - 1];
    for (double v : in.values()) m = std::min(m, std::abs(v));
  }
  return m;
}

inline double loss_at(const GradientCase& g, const ParametersD& p, const SoftMaskD& gates) {
  Trace<double> trace;
  const auto& logits = forward(g.net, p, gates, std::span<const double>(g.x), trace);
  return loss_ce(logits.values(), g.label);
}

struct GradientErrors {
  double params = 0.0;  // max relative error over parameters
  double gates = 0.0;   // max relative error over gates
  std::size_t checked = 0;
};

inline double relative_error(double a, double n) { return std::abs(a - n) / std::max(1.0, std::max(std::abs(a), std::abs(n))); }

inline GradientErrors gradient_errors(const GradientCase& g, double h = 1e-5) {
  ParametersD grads = ParametersD::zeros(g.net);
  SoftMaskD gate_grads = SoftMaskD::filled(g.net, 0.0);
  Trace<double> trace;
  forward(g.net, g.params, g.gates, std::span<const double>(g.x), trace);
  backward(g.net, g.params, g.gates, trace, g.label, grads, &gate_grads, 1.0);

  GradientErrors e;
  ParametersD p = g.params;
  auto pspans = p.spans();
  const auto gspans = grads.spans();
  for (std::size_t s = 0; s < pspans.size(); ++s) {
    for (std::size_t i = 0; i < pspans[s].size(); ++i) {
      const double keep = pspans[s][i];
      pspans[s][i] = keep + h;
      const double up = loss_at(g, p, g.gates);
      pspans[s][i] = keep - h;
      const double down = loss_at(g, p, g.gates);
      pspans[s][i] = keep;
      e.params = std::max(e.params, relative_error(gspans[s][i], (up - down) / (2 * h)));
      ++e.checked;
    }
  }
  SoftMaskD gates = g.gates;
  for (std::size_t l = 0; l < gates.layers.size(); ++l) {
    for (std::size_t i = 0; i < gates.layers[l].size(); ++i) {
      const double keep = gates.layers[l][i];
      gates.layers[l][i] = keep + h;
      const double up = loss_at(g, g.params, gates);
      gates.layers[l][i] = keep - h;
      const double down = loss_at(g, g.params, gates);
      gates.layers[l][i] = keep;
      e.gates = std::max(e.gates, relative_error(gate_grads.layers[l][i], (up - down) / (2 * h)));
      ++e.checked;
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Classifier oracles

/// Accuracy (percent) of the closed-form nearest-centroid classifier fit on ds.
inline double nearest_centroid_accuracy(const Dataset& ds) {
  const std::size_t dim = ds.sample_size();
  std::vector<std::vector<double>> centroid(ds.class_count, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> n(ds.class_count, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.sample(i);
    for (std::size_t k = 0; k < dim; ++k) centroid[ds.labels[i]][k] += x[k];
    ++n[ds.labels[i]];
  }
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    for (double& v : centroid[c]) v /= static_cast<double>(std::max<std::size_t>(1, n[c]));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.sample(i);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < dim; ++k) d += (x[k] - centroid[c][k]) * (x[k] - centroid[c][k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == ds.labels[i] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Accuracy by running forward() per sample and counting argmax hits by hand.
inline double manual_accuracy(const Network& net, const Parameters& p, const ReluMask& m, const Dataset& ds) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto logits = forward(net, p, m, ds.sample(i));
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    correct += best == ds.labels[i] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Small networks

/// 2-D input -> linear(2,h) -> act -> linear(h,k).
inline Network tiny_mlp(std::size_t hidden, std::size_t classes, std::size_t in = 2) {
  return net_from_json(R"({"layers":[{"type":"linear","in":)" + std::to_string(in) + R"(,"out":)" +
                           std::to_string(hidden) + R"(},{"type":"maskable_activation"},{"type":"linear","in":)" +
                           std::to_string(hidden) + R"(,"out":)" + std::to_string(classes) + "}]}",
                       {in});
}

/// d = 10 oracle problem: 2 -> 6 -> act -> 4 -> act -> 3 on a small spiral set.
inline TinyProblem tiny_problem(double lambda, std::uint64_t seed = 7) {
  Network net = net_from_json(
      R"({"layers":[{"type":"linear","in":2,"out":6},{"type":"maskable_activation"},
                    {"type":"linear","in":6,"out":4},{"type":"maskable_activation"},
                    {"type":"linear","in":4,"out":3}]})",
      {2});
  Parameters params = Parameters::kaiming_uniform(net, seed);
  Dataset data = gen_spirals(3, 20, 0.05, seed);
  return TinyProblem{std::move(net), std::move(params), std::move(data), lambda, std::nullopt, 16, 1u << 16};
}

}  // namespace fixtures
