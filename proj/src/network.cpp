#include "tcja/network.hpp"

#include <charconv>
#include <cmath>
#include <regex>
#include <sstream>

#include "tcja/errors.hpp"
#include "tcja/ops.hpp"

namespace tcja {

namespace {

bool parse_size(const std::string& s, std::size_t& out) {
  if (s.empty() || s.size() > 9) return false;
  for (char ch : s)
    if (ch < '0' || ch > '9') return false;
  out = std::stoul(s);
  return out > 0;
}

bool parse_probability(const std::string& s, double& out) {
  static const std::regex number(R"(^(\d+(\.\d*)?|\.\d+)$)");
  if (!std::regex_match(s, number)) return false;
  out = std::stod(s);
  return true;
}

bool has_params(LayerKind k) { return k == LayerKind::kConv || k == LayerKind::kFc; }

}  // namespace

ArchSpec parse_arch(const std::string& spec) {
  if (spec.empty()) throw ConfigError("empty architecture spec");
  static const std::regex conv(R"(^(.*)C(\d*)$)");
  static const std::regex pool(R"(^(MP|AP)(.*)$)");
  ArchSpec arch;
  std::size_t position = 0, start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find('-', start);
    if (end == std::string::npos) end = spec.size();
    const std::string tok = spec.substr(start, end - start);
    ++position;
    auto fail = [&](const std::string& why) -> ConfigError {
      return ConfigError(why + " '" + tok + "' at position " + std::to_string(position) + " (offset " +
                         std::to_string(start) + ")");
    };
    LayerSpec layer;
    std::smatch m;
    if (tok.empty()) {
      throw fail("empty token");
    } else if (tok == "LIF") {
      layer.kind = LayerKind::kLif;
    } else if (tok == "Voting") {
      layer.kind = LayerKind::kVoting;
    } else if (tok == "TCJA") {
      layer.kind = LayerKind::kTcja;
    } else if (tok.size() > 2 && tok.ends_with("DP")) {
      layer.kind = LayerKind::kDropout;
      if (!parse_probability(tok.substr(0, tok.size() - 2), layer.p)) throw fail("malformed numeric prefix in");
      if (layer.p >= 1.0) throw fail("dropout probability must be < 1 in");
    } else if (tok.size() > 2 && tok.ends_with("FC")) {
      layer.kind = LayerKind::kFc;
      if (!parse_size(tok.substr(0, tok.size() - 2), layer.out)) throw fail("malformed numeric prefix in");
    } else if (std::regex_match(tok, m, pool)) {
      layer.kind = m[1] == "MP" ? LayerKind::kMaxPool : LayerKind::kAvgPool;
      if (!parse_size(m[2], layer.k)) throw fail("malformed pool size in");
    } else if (std::regex_match(tok, m, conv) && !m[1].str().empty()) {
      layer.kind = LayerKind::kConv;
      if (!parse_size(m[1], layer.out)) throw fail("malformed numeric prefix in");
      if (!parse_size(m[2], layer.k)) throw fail("malformed kernel size in");
    } else {
      throw fail("unknown token");
    }
    if (layer.kind == LayerKind::kLif && (arch.layers.empty() || !has_params(arch.layers.back().kind))) {
      throw fail("LIF must follow a conv or FC layer:");
    }
    arch.layers.push_back(layer);
    start = end + 1;
  }
  return arch;
}

std::string render(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::kConv: return std::to_string(layer.out) + "C" + std::to_string(layer.k);
    case LayerKind::kLif: return "LIF";
    case LayerKind::kMaxPool: return "MP" + std::to_string(layer.k);
    case LayerKind::kAvgPool: return "AP" + std::to_string(layer.k);
    case LayerKind::kFc: return std::to_string(layer.out) + "FC";
    case LayerKind::kVoting: return "Voting";
    case LayerKind::kTcja: return "TCJA";
    case LayerKind::kDropout: {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf, layer.p);
      return std::string(buf, res.ptr) + "DP";
    }
  }
  return "?";
}

std::string render(const ArchSpec& spec) {
  std::string out;
  for (const auto& layer : spec.layers) {
    if (!out.empty()) out += '-';
    out += render(layer);
  }
  return out;
}

template <typename Real>
DiffTensor<Real> voting_layer(const DiffTensor<Real>& spikes, std::size_t num_classes) {
  return group_mean(spikes, num_classes);
}

template <typename Real>
Tensor<Real> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  Tensor<Real> mask(shape, Real(1));
  if (p == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - p);
  const Real scale = static_cast<Real>(1.0 / (1.0 - p));
  for (auto& v : mask.values()) v = keep(rng) ? scale : Real(0);
  return mask;
}

template <typename Real>
DiffTensor<Real> spiking_dropout(const DiffTensor<Real>& x, double p, const Tensor<Real>& mask, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Shape expect(x.shape().begin() + 1, x.shape().end());
  if (mask.shape() != expect) {
    throw ShapeError("dropout mask " + to_string(mask.shape()) + " does not match step shape " + to_string(expect));
  }
  Shape b{1};
  b.insert(b.end(), expect.begin(), expect.end());
  return mul(x, x.tape().leaf(mask.reshaped(b)));
}

template <typename Real>
Network<Real>::Network(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
  config_.lif.validate();
  arch_ = parse_arch(config.arch);
  if (config.time_steps == 0) throw ConfigError("time_steps must be positive");
  if (config.num_classes == 0) throw ConfigError("num_classes must be positive");
  std::mt19937_64 rng(seed);

  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
    return t;
  };

  // Reserve first so Parameter addresses stay stable.
  std::size_t n_params = 0;
  for (const auto& l : arch_.layers) {
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kTcja) n_params += l.kind == LayerKind::kConv ? 1 : 2;
    if (l.kind == LayerKind::kFc) n_params += 2;
  }
  params_.reserve(n_params);

  LayerGeometry g{config.in_channels, config.height, config.width};
  if (g.c == 0 || g.h == 0 || g.w == 0) throw ConfigError("input dims must be positive");
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const LayerSpec& s = arch_.layers[i];
    Layer layer{s, g, g, params_.size(), 0, 0, 0};
    const std::string prefix = "layer" + std::to_string(i) + ".";
    auto fail = [&](const std::string& why) {
      return ShapeError("layer " + std::to_string(i) + " (" + render(s) + "): " + why);
    };
    switch (s.kind) {
      case LayerKind::kConv: {
        if (g.flat()) throw fail("convolution after a flattened layer");
        const std::size_t pad = s.k / 2;
        if (g.h + 2 * pad < s.k || g.w + 2 * pad < s.k) throw fail("kernel larger than the padded input");
        params_.emplace_back(prefix + "weight", uniform(Shape{s.out, g.c, s.k, s.k}, g.c * s.k * s.k));
        g = {s.out, g.h + 2 * pad - s.k + 1, g.w + 2 * pad - s.k + 1};
        break;
      }
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool:
        if (g.flat()) throw fail("pooling after a flattened layer");
        if (g.h % s.k != 0 || g.w % s.k != 0) {
          throw fail(std::to_string(g.h) + "x" + std::to_string(g.w) + " not divisible by the pool window");
        }
        g = {g.c, g.h / s.k, g.w / s.k};
        break;
      case LayerKind::kFc:
        params_.emplace_back(prefix + "weight", uniform(Shape{g.size(), s.out}, g.size()));
        params_.emplace_back(prefix + "bias", uniform(Shape{s.out}, g.size()));
        g = {s.out, 0, 0};
        break;
      case LayerKind::kVoting:
        if (!g.flat()) throw fail("voting needs a flat input");
        if (g.c % config.num_classes != 0) {
          throw fail(std::to_string(g.c) + " neurons not divisible into " + std::to_string(config.num_classes) +
                     " classes");
        }
        g = {config.num_classes, 0, 0};
        break;
      case LayerKind::kTcja: {
        if (g.flat()) throw fail("TCJA needs a spatial input");
        layer.k_t = capped_kernel(config.k_t, config.time_steps);
        layer.k_c = capped_kernel(config.k_c, g.c);
        try {
          check_kernel_sizes(g.c, config.time_steps, layer.k_t, layer.k_c);
        } catch (const ShapeError& e) {
          throw fail(e.what());
        }
        auto tp = init_tcja_params<Real>(g.c, config.time_steps, layer.k_t, layer.k_c, config.fusion, rng);
        params_.emplace_back(prefix + "temporal", std::move(tp.temporal));
        params_.emplace_back(prefix + "channel", std::move(tp.channel));
        break;
      }
      case LayerKind::kLif:
      case LayerKind::kDropout:
        break;
    }
    layer.out = g;
    layer.n_params = params_.size() - layer.first_param;
    layers_.push_back(layer);
    geometry_.push_back(g);
  }
  if (!g.flat() || g.c != config.num_classes) {
    throw ConfigError("network output has " + std::to_string(g.size()) + " values, expected " +
                      std::to_string(config.num_classes) + " class scores");
  }
}

template <typename Real>
DiffTensor<Real> Network<Real>::forward(Tape<Real>& tape, const Tensor<Real>& x, bool training,
                                        std::mt19937_64* rng, ForwardCapture<Real>* capture) {
  const Shape& xs = x.shape();
  const LayerGeometry& in = layers_.empty() ? LayerGeometry{} : layers_.front().in;
  if (xs.size() != 5 || xs[0] != config_.time_steps || xs[2] != in.c || xs[3] != in.h || xs[4] != in.w) {
    throw ShapeError("network input " + to_string(xs) + " does not match T x B x " + std::to_string(in.c) + "x" +
                     std::to_string(in.h) + "x" + std::to_string(in.w) + " with T=" +
                     std::to_string(config_.time_steps));
  }
  const std::size_t steps = xs[0], batch = xs[1];
  auto shape_of = [&](const LayerGeometry& g) {
    return g.flat() ? Shape{steps, batch, g.c} : Shape{steps, batch, g.c, g.h, g.w};
  };
  auto param = [&](std::size_t idx) {
    return training ? tape.parameter(params_[idx]) : tape.leaf(params_[idx].value);
  };

  DiffTensor<Real> h = tape.leaf(x);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& L = layers_[i];
    switch (L.spec.kind) {
      case LayerKind::kConv: {
        auto frames = reshape(h, Shape{steps * batch, L.in.c, L.in.h, L.in.w});
        h = reshape(conv2d(frames, param(L.first_param), 1, L.spec.k / 2), shape_of(L.out));
        break;
      }
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool: {
        auto frames = reshape(h, Shape{steps * batch, L.in.c, L.in.h, L.in.w});
        const PoolKind kind = L.spec.kind == LayerKind::kMaxPool ? PoolKind::kMax : PoolKind::kAvg;
        h = reshape(pool2d(frames, kind, L.spec.k), shape_of(L.out));
        break;
      }
      case LayerKind::kFc: {
        auto flat = reshape(h, Shape{steps * batch, L.in.size()});
        h = reshape(fully_connected(flat, param(L.first_param), param(L.first_param + 1)), shape_of(L.out));
        break;
      }
      case LayerKind::kLif: {
        h = lif_sequence(h, config_.lif);
        if (capture) {
          double total = 0;
          for (Real v : h.value().values()) total += v;
          capture->lif_layers.push_back(i);
          capture->firing_rates.push_back(total / static_cast<double>(h.size()));
        }
        break;
      }
      case LayerKind::kDropout: {
        if (!training || L.spec.p == 0.0) break;
        if (!rng) throw ConfigError("training forward with dropout needs an rng");
        Shape step(h.shape().begin() + 1, h.shape().end());
        h = spiking_dropout(h, L.spec.p, dropout_mask<Real>(step, L.spec.p, *rng), true);
        break;
      }
      case LayerKind::kVoting:
        h = voting_layer(h, config_.num_classes);
        break;
      case LayerKind::kTcja: {
        AttentionMaps<Real> maps;
        h = tcja_forward(h, param(L.first_param), param(L.first_param + 1), config_.fusion, capture ? &maps : nullptr);
        if (capture) {
          capture->tcja_layers.push_back(i);
          capture->t_maps.push_back(maps.t_map.value());
          capture->c_maps.push_back(maps.c_map.value());
          capture->f_maps.push_back(maps.f_map.value());
        }
        break;
      }
    }
    if (capture && capture->keep_outputs) capture->outputs.push_back(h.value());
  }
  return h;
}

template <typename Real>
Parameter<Real>* Network<Real>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Real>
std::size_t Network<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Real>
std::size_t Network<Real>::tcja_parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_)
    if (L.spec.kind == LayerKind::kTcja)
      for (std::size_t k = 0; k < L.n_params; ++k) n += params_[L.first_param + k].value.size();
  return n;
}

template <typename Real>
std::size_t Network<Real>::tcja_blocks() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.spec.kind == LayerKind::kTcja;
  return n;
}

template <typename Real>
void Network<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

#define TCJA_INSTANTIATE_NETWORK(Real)                                                                  \
  template class Network<Real>;                                                                         \
  template DiffTensor<Real> voting_layer(const DiffTensor<Real>&, std::size_t);                         \
  template Tensor<Real> dropout_mask<Real>(const Shape&, double, std::mt19937_64&);                     \
  template DiffTensor<Real> spiking_dropout(const DiffTensor<Real>&, double, const Tensor<Real>&, bool);

TCJA_INSTANTIATE_NETWORK(float)
TCJA_INSTANTIATE_NETWORK(double)

}  // namespace tcja
