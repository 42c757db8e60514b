#pragma once

#include <optional>
#include <string>

#include "tcja/autodiff.hpp"

namespace tcja {

enum class Surrogate { kATan, kTriangle };

std::string to_string(Surrogate s);
Surrogate parse_surrogate(const std::string& name);

struct LifConfig {
  double tau = 2.0;
  double v_reset = 0.0;
  double v_threshold = 1.0;
  Surrogate surrogate = Surrogate::kATan;
  double alpha = 2.0;  // ATan sharpness
  double gamma = 1.0;  // triangle half-width
  // Drop the reset factor (1 - S) from the gradient graph.
  bool detach_reset = true;

  // Throws ConfigError unless tau > 0, v_threshold > v_reset, alpha > 0,
  // gamma > 0.
  void validate() const;
};

// Closed-form surrogate derivatives evaluated at x:
//   atan:     alpha / (2 (1 + (pi/2 * alpha * x)^2))
//   triangle: (1/gamma^2) * max(0, gamma - |x - 1|)
double atan_surrogate_grad(double x, double alpha);
double triangle_surrogate_grad(double x, double gamma);
double surrogate_grad(double x, const LifConfig& cfg);

// Forward: 1 where x >= 0, else 0. Backward: upstream * surrogate'(x).
template <typename Real>
DiffTensor<Real> heaviside_surrogate(const DiffTensor<Real>& x, const LifConfig& cfg);

template <typename Real>
struct LifState {
  DiffTensor<Real> h;  // post-reset membrane potential
};

template <typename Real>
LifState<Real> lif_initial_state(Tape<Real>& tape, const Shape& shape, const LifConfig& cfg);

template <typename Real>
struct LifStepResult {
  DiffTensor<Real> spikes;
  DiffTensor<Real> membrane;  // V before reset
  LifState<Real> state;
};

// One step of the iterative LIF update
//   V = H + (I - (H - v_reset)) / tau
//   S = Heaviside(V - v_threshold)
//   H' = V (1 - S) + v_reset S
// built from primitive differentiable ops.
template <typename Real>
LifStepResult<Real> lif_step(const LifState<Real>& state, const DiffTensor<Real>& input_current,
                             const LifConfig& cfg);

// Membrane trajectory captured by lif_sequence when requested.
template <typename Real>
struct LifTrace {
  Tensor<Real> v;  // T x ...
  Tensor<Real> h;  // T x ...
};

// Runs lif_step over axis 0 of `inputs` (T x ...) from a fresh state, as a
// single tape node with a hand-written backward through time.
template <typename Real>
DiffTensor<Real> lif_sequence(const DiffTensor<Real>& inputs, const LifConfig& cfg,
                              LifTrace<Real>* trace = nullptr);

// Reference unrolling of lif_step with select/stack; same values and
// gradients as lif_sequence, at a much larger tape cost.
template <typename Real>
DiffTensor<Real> lif_sequence_stepwise(const DiffTensor<Real>& inputs, const LifConfig& cfg);

}  // namespace tcja
