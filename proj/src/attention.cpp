#include "tcja/attention.hpp"

#include <algorithm>
#include <cmath>

#include "tcja/ops.hpp"

namespace tcja {

std::string to_string(Fusion f) {
  return f == Fusion::kMultiply ? "multiply" : "add";
}

Fusion parse_fusion(const std::string& name) {
  if (name == "multiply" || name == "mul") return Fusion::kMultiply;
  if (name == "add") return Fusion::kAdd;
  throw ConfigError("unknown fusion mode '" + name + "' (expected multiply or add)");
}

void check_kernel_sizes(std::size_t channels, std::size_t steps, std::size_t k_t, std::size_t k_c) {
  if (k_t == 0 || k_t >= steps) {
    throw ShapeError("temporal kernel size " + std::to_string(k_t) + " must satisfy 1 <= K_T < T = " +
                     std::to_string(steps));
  }
  if (k_c == 0 || k_c >= channels) {
    throw ShapeError("channel kernel size " + std::to_string(k_c) + " must satisfy 1 <= K_C < C = " +
                     std::to_string(channels));
  }
}

std::size_t capped_kernel(std::size_t requested, std::size_t dim) {
  return dim == 0 ? 0 : std::min(requested, dim - 1);
}

template <typename Real>
TcjaParams<Real> init_tcja_params(std::size_t channels, std::size_t steps, std::size_t k_t,
                                  std::size_t k_c, Fusion fusion, std::mt19937_64& rng) {
  check_kernel_sizes(channels, steps, k_t, k_c);
  auto draw = [&rng](Tensor<Real>& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
  };
  TcjaParams<Real> p;
  p.temporal = Tensor<Real>(Shape{channels, channels, k_t});
  p.channel = Tensor<Real>(Shape{steps, steps, k_c});
  p.fusion = fusion;
  draw(p.temporal, channels * k_t);
  draw(p.channel, steps * k_c);
  return p;
}

template <typename Real>
DiffTensor<Real> squeeze(const DiffTensor<Real>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 && s.size() != 5) {
    throw ShapeError("squeeze expects T x C x H x W or T x B x C x H x W, got " + to_string(s));
  }
  const bool batched = s.size() == 5;
  const std::size_t steps = s[0];
  const std::size_t batch = batched ? s[1] : 1;
  const std::size_t channels = s[batched ? 2 : 1];
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h == 0 || w == 0) throw ShapeError("squeeze over empty spatial dims " + to_string(s));
  const std::size_t plane = h * w;
  const Real inv = Real(1) / static_cast<Real>(plane);

  Tensor<Real> z(batched ? Shape{batch, channels, steps} : Shape{channels, steps});
  const Real* xv = x.value().data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        const Real* frame = xv + ((t * batch + b) * channels + c) * plane;
        Real acc = 0;
        for (std::size_t k = 0; k < plane; ++k) acc += frame[k];
        z[(b * channels + c) * steps + t] = acc * inv;
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(z), {ix}, [=](Tape<Real>& tape, std::size_t self) {
    const auto& g = tape.upstream(self);
    Real* gx = tape.accumulate(ix).data();
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const Real v = g[(b * channels + c) * steps + t] * inv;
          Real* frame = gx + ((t * batch + b) * channels + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) frame[k] += v;
        }
      }
    }
  });
}

namespace {

void check_z(const Shape& s, const char* who) {
  if (s.size() != 2 && s.size() != 3) {
    throw ShapeError(std::string(who) + " expects C x T or B x C x T, got " + to_string(s));
  }
}

}  // namespace

template <typename Real>
DiffTensor<Real> tla(const DiffTensor<Real>& z, const DiffTensor<Real>& temporal) {
  check_z(z.shape(), "tla");
  const Shape& ks = temporal.shape();
  const std::size_t channels = z.shape()[z.shape().size() - 2];
  const std::size_t steps = z.shape().back();
  if (ks.size() != 3 || ks[0] != channels || ks[1] != channels) {
    throw ShapeError("tla kernel " + to_string(ks) + " does not match C = " + std::to_string(channels));
  }
  if (ks[2] == 0 || ks[2] >= steps) {
    throw ShapeError("tla kernel size " + std::to_string(ks[2]) + " must be < T = " + std::to_string(steps));
  }
  return conv1d_multichannel(z, temporal, ks[2] - 1);
}

template <typename Real>
DiffTensor<Real> cla(const DiffTensor<Real>& z, const DiffTensor<Real>& channel) {
  check_z(z.shape(), "cla");
  const Shape& ks = channel.shape();
  const bool batched = z.shape().size() == 3;
  const std::size_t channels = z.shape()[z.shape().size() - 2];
  const std::size_t steps = z.shape().back();
  if (ks.size() != 3 || ks[0] != steps || ks[1] != steps) {
    throw ShapeError("cla kernel " + to_string(ks) + " does not match T = " + std::to_string(steps));
  }
  if (ks[2] == 0 || ks[2] >= channels) {
    throw ShapeError("cla kernel size " + std::to_string(ks[2]) + " must be < C = " + std::to_string(channels));
  }
  const std::vector<std::size_t> swap = batched ? std::vector<std::size_t>{0, 2, 1}
                                                : std::vector<std::size_t>{1, 0};
  auto columns = permute(z, swap);  // T rows, one per time step, each of length C
  auto out = conv1d_multichannel(columns, channel, ks[2] - 1);
  return permute(out, swap);
}

template <typename Real>
DiffTensor<Real> ccf(const DiffTensor<Real>& t_map, const DiffTensor<Real>& c_map, Fusion fusion) {
  if (t_map.shape() != c_map.shape()) {
    throw ShapeError("ccf shape mismatch: " + to_string(t_map.shape()) + " vs " + to_string(c_map.shape()));
  }
  return sigmoid(fusion == Fusion::kMultiply ? mul(t_map, c_map) : add(t_map, c_map));
}

template <typename Real>
DiffTensor<Real> recalibrate(const DiffTensor<Real>& x, const DiffTensor<Real>& f_map) {
  const Shape& xs = x.shape();
  const Shape& fs = f_map.shape();
  if (xs.size() == 4 && fs.size() == 2 && fs[0] == xs[1] && fs[1] == xs[0]) {
    auto scores = reshape(permute(f_map, {1, 0}), Shape{xs[0], xs[1], 1, 1});
    return mul(x, scores);
  }
  if (xs.size() == 5 && fs.size() == 3 && fs[0] == xs[1] && fs[1] == xs[2] && fs[2] == xs[0]) {
    auto scores = reshape(permute(f_map, {2, 0, 1}), Shape{xs[0], xs[1], xs[2], 1, 1});
    return mul(x, scores);
  }
  throw ShapeError("recalibrate: attention map " + to_string(fs) + " does not match frames " + to_string(xs));
}

template <typename Real>
DiffTensor<Real> tcja_forward(const DiffTensor<Real>& x, const DiffTensor<Real>& temporal,
                              const DiffTensor<Real>& channel, Fusion fusion, AttentionMaps<Real>* maps) {
  auto z = squeeze(x);
  auto t_map = tla(z, temporal);
  auto c_map = cla(z, channel);
  auto f_map = ccf(t_map, c_map, fusion);
  if (maps) *maps = AttentionMaps<Real>{z, t_map, c_map, f_map};
  return recalibrate(x, f_map);
}

ParamCount param_count(std::size_t channels, std::size_t steps, std::size_t k_t, std::size_t k_c) {
  ParamCount pc;
  pc.tla = channels * channels * k_t;
  pc.cla = steps * steps * k_c;
  pc.fc_baseline = steps * steps * channels * channels;
  return pc;
}

#define TCJA_INSTANTIATE_ATTENTION(Real)                                                            \
  template TcjaParams<Real> init_tcja_params(std::size_t, std::size_t, std::size_t, std::size_t,    \
                                             Fusion, std::mt19937_64&);                             \
  template DiffTensor<Real> squeeze(const DiffTensor<Real>&);                                       \
  template DiffTensor<Real> tla(const DiffTensor<Real>&, const DiffTensor<Real>&);                  \
  template DiffTensor<Real> cla(const DiffTensor<Real>&, const DiffTensor<Real>&);                  \
  template DiffTensor<Real> ccf(const DiffTensor<Real>&, const DiffTensor<Real>&, Fusion);          \
  template DiffTensor<Real> recalibrate(const DiffTensor<Real>&, const DiffTensor<Real>&);          \
  template DiffTensor<Real> tcja_forward(const DiffTensor<Real>&, const DiffTensor<Real>&,          \
                                         const DiffTensor<Real>&, Fusion, AttentionMaps<Real>*);

TCJA_INSTANTIATE_ATTENTION(float)
TCJA_INSTANTIATE_ATTENTION(double)

}  // namespace tcja
