#include "tcja/spiking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "tcja/ops.hpp"

namespace tcja {

std::string to_string(Surrogate s) {
  return s == Surrogate::kATan ? "atan" : "triangle";
}

Surrogate parse_surrogate(const std::string& name) {
  if (name == "atan") return Surrogate::kATan;
  if (name == "triangle") return Surrogate::kTriangle;
  throw ConfigError("unknown surrogate '" + name + "' (expected atan or triangle)");
}

void LifConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("LIF tau must be positive");
  if (!(v_threshold > v_reset)) throw ConfigError("LIF v_threshold must exceed v_reset");
  if (!(alpha > 0)) throw ConfigError("ATan alpha must be positive");
  if (!(gamma > 0)) throw ConfigError("triangle gamma must be positive");
}

double atan_surrogate_grad(double x, double alpha) {
  const double u = std::numbers::pi / 2.0 * alpha * x;
  return alpha / (2.0 * (1.0 + u * u));
}

double triangle_surrogate_grad(double x, double gamma) {
  return std::max(0.0, gamma - std::abs(x - 1.0)) / (gamma * gamma);
}

double surrogate_grad(double x, const LifConfig& cfg) {
  return cfg.surrogate == Surrogate::kATan ? atan_surrogate_grad(x, cfg.alpha)
                                           : triangle_surrogate_grad(x, cfg.gamma);
}

template <typename Real>
DiffTensor<Real> heaviside_surrogate(const DiffTensor<Real>& x, const LifConfig& cfg) {
  Tensor<Real> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] >= Real(0) ? Real(1) : Real(0);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix, cfg](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.value(ix);
    auto& gx = t.accumulate(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * static_cast<Real>(surrogate_grad(static_cast<double>(xv[i]), cfg));
    }
  });
}

template <typename Real>
LifState<Real> lif_initial_state(Tape<Real>& tape, const Shape& shape, const LifConfig& cfg) {
  return {tape.leaf(Tensor<Real>(shape, static_cast<Real>(cfg.v_reset)), false)};
}

template <typename Real>
LifStepResult<Real> lif_step(const LifState<Real>& state, const DiffTensor<Real>& input_current,
                             const LifConfig& cfg) {
  if (state.h.shape() != input_current.shape()) {
    throw ShapeError("lif_step state " + to_string(state.h.shape()) + " vs input " +
                     to_string(input_current.shape()));
  }
  const Real k = static_cast<Real>(1.0 / cfg.tau);
  const Real v_reset = static_cast<Real>(cfg.v_reset);
  // V = H + k (I - (H - v_reset))
  auto leak = add_scalar(sub(input_current, state.h), v_reset);
  auto v = add(state.h, scale(leak, k));
  auto s = heaviside_surrogate(add_scalar(v, static_cast<Real>(-cfg.v_threshold)), cfg);
  auto keep = add_scalar(scale(s, Real(-1)), Real(1));
  if (cfg.detach_reset) keep = detach(keep);
  auto h = mul(v, keep);
  if (v_reset != Real(0)) {
    auto fired = cfg.detach_reset ? detach(s) : s;
    h = add(h, scale(fired, v_reset));
  }
  return {s, v, LifState<Real>{h}};
}

template <typename Real>
DiffTensor<Real> lif_sequence(const DiffTensor<Real>& inputs, const LifConfig& cfg, LifTrace<Real>* trace) {
  const Shape& shape = inputs.shape();
  if (shape.empty() || shape[0] == 0) throw ShapeError("lif_sequence needs a non-empty time axis");
  const std::size_t steps = shape[0];
  const std::size_t width = numel(shape) / steps;
  const Real k = static_cast<Real>(1.0 / cfg.tau);
  const Real v_reset = static_cast<Real>(cfg.v_reset);
  const Real v_th = static_cast<Real>(cfg.v_threshold);

  Tensor<Real> spikes(shape);
  std::vector<Real> v_hist(numel(shape));
  std::vector<Real> h(width, v_reset);
  if (trace) {
    trace->v = Tensor<Real>(shape);
    trace->h = Tensor<Real>(shape);
  }
  const Real* in = inputs.value().data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t idx = t * width + i;
      const Real v = h[i] + ((in[idx] - h[i]) + v_reset) * k;
      const Real s = v >= v_th ? Real(1) : Real(0);
      v_hist[idx] = v;
      spikes[idx] = s;
      h[i] = s != Real(0) ? v_reset : v;
      if (trace) {
        trace->v[idx] = v;
        trace->h[idx] = h[i];
      }
    }
  }

  const std::size_t ii = inputs.id();
  return inputs.tape().record(std::move(spikes), {ii},
                              [ii, cfg, steps, width, k, v_reset, v_th, v_hist = std::move(v_hist)](
                                  Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& gi = t.accumulate(ii);
    // gradient flowing into H_t from step t + 1
    std::vector<Real> gh(width, Real(0));
    for (std::size_t step = steps; step-- > 0;) {
      for (std::size_t i = 0; i < width; ++i) {
        const std::size_t idx = step * width + i;
        const Real v = v_hist[idx];
        const Real s = v >= v_th ? Real(1) : Real(0);
        const Real sg = static_cast<Real>(surrogate_grad(static_cast<double>(v - v_th), cfg));
        // H = V (1 - S) + v_reset S
        Real dh_dv = Real(1) - s;
        if (!cfg.detach_reset) dh_dv += (v_reset - v) * sg;
        const Real gv = g[idx] * sg + gh[i] * dh_dv;
        gi[idx] += k * gv;
        gh[i] = (Real(1) - k) * gv;
      }
    }
  });
}

template <typename Real>
DiffTensor<Real> lif_sequence_stepwise(const DiffTensor<Real>& inputs, const LifConfig& cfg) {
  const Shape& shape = inputs.shape();
  if (shape.empty() || shape[0] == 0) throw ShapeError("lif_sequence needs a non-empty time axis");
  Shape frame(shape.begin() + 1, shape.end());
  auto state = lif_initial_state(inputs.tape(), frame, cfg);
  std::vector<DiffTensor<Real>> out;
  for (std::size_t t = 0; t < shape[0]; ++t) {
    auto step = lif_step(state, select(inputs, t), cfg);
    out.push_back(step.spikes);
    state = step.state;
  }
  return stack(out);
}

#define TCJA_INSTANTIATE_SPIKING(Real)                                                              \
  template DiffTensor<Real> heaviside_surrogate(const DiffTensor<Real>&, const LifConfig&);          \
  template LifState<Real> lif_initial_state(Tape<Real>&, const Shape&, const LifConfig&);           \
  template LifStepResult<Real> lif_step(const LifState<Real>&, const DiffTensor<Real>&,             \
                                        const LifConfig&);                                          \
  template DiffTensor<Real> lif_sequence(const DiffTensor<Real>&, const LifConfig&, LifTrace<Real>*); \
  template DiffTensor<Real> lif_sequence_stepwise(const DiffTensor<Real>&, const LifConfig&);

TCJA_INSTANTIATE_SPIKING(float)
TCJA_INSTANTIATE_SPIKING(double)

}  // namespace tcja
