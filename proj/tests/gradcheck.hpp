#pragma once

// Central finite-difference checker for reverse-mode gradients (double only).

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tcja/autodiff.hpp"
#include "tcja/ops.hpp"

namespace gradcheck {

using tcja::DiffTensor;
using tcja::Tape;
using tcja::Tensor;

using Builder = std::function<DiffTensor<double>(Tape<double>&, const std::vector<DiffTensor<double>>&)>;

struct Report {
  double max_rel_error = 0.0;  // worst over inputs of ||a - n|| / max(||a||, ||n||)
  std::size_t checked_inputs = 0;
};

// Projects the builder's output onto a fixed random direction so the checked
// scalar depends on every output element.
inline double evaluate(const Builder& build, const std::vector<Tensor<double>>& inputs,
                       const std::vector<double>& direction) {
  Tape<double> tape;
  std::vector<DiffTensor<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  auto out = build(tape, vars);
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out.value()[i] * direction[i];
  return acc;
}

inline Report check(const Builder& build, std::vector<Tensor<double>> inputs, std::mt19937_64& rng,
                    const std::vector<bool>& differentiate = {}, double step = 1e-5) {
  std::vector<double> direction;
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape<double> tape;
    std::vector<DiffTensor<double>> vars;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const bool on = differentiate.empty() || differentiate[k];
      vars.push_back(tape.leaf(inputs[k], on));
    }
    auto out = build(tape, vars);
    std::normal_distribution<double> dist(0.0, 1.0);
    direction.resize(out.size());
    for (auto& d : direction) d = dist(rng);
    auto dir = tape.leaf(Tensor<double>(out.shape(), direction));
    auto loss = tcja::sum(tcja::mul(out, dir));
    tape.backward(loss);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto* g = vars[k].grad();
      analytic[k] = g ? g->storage() : std::vector<double>(inputs[k].size(), 0.0);
    }
  }
  Report report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!differentiate.empty() && !differentiate[k]) continue;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + step;
      const double up = evaluate(build, inputs, direction);
      inputs[k][i] = saved - step;
      const double down = evaluate(build, inputs, direction);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    report.max_rel_error = std::max(report.max_rel_error, std::sqrt(diff2) / denom);
    ++report.checked_inputs;
  }
  return report;
}

inline Tensor<double> random_tensor(const tcja::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace gradcheck
