#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tcja/attention.hpp"
#include "tcja/autodiff.hpp"
#include "tcja/spiking.hpp"

namespace tcja {

enum class LayerKind { kConv, kLif, kMaxPool, kAvgPool, kDropout, kFc, kVoting, kTcja };

struct LayerSpec {
  LayerKind kind = LayerKind::kLif;
  std::size_t out = 0;  // conv / fc width
  std::size_t k = 0;    // conv kernel or pool window
  double p = 0.0;       // dropout probability

  bool operator==(const LayerSpec&) const = default;
};

struct ArchSpec {
  std::vector<LayerSpec> layers;
  bool operator==(const ArchSpec&) const = default;
};

// Dash-separated tokens: 128C3, MP2, AP2, LIF, 0.5DP, 512FC, Voting, TCJA.
// Throws ConfigError naming the offending token and its 1-based position.
ArchSpec parse_arch(const std::string& spec);
std::string render(const ArchSpec& spec);
std::string render(const LayerSpec& layer);

struct NetworkConfig {
  std::string arch;
  std::size_t in_channels = 2;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t time_steps = 8;
  std::size_t num_classes = 4;
  LifConfig lif;
  std::size_t k_t = 4;  // requested; capped at T - 1
  std::size_t k_c = 4;  // requested; capped at C - 1
  Fusion fusion = Fusion::kMultiply;
};

// Activation geometry after a layer: spatial (c, h, w) or flat (c = features,
// h = w = 0).
struct LayerGeometry {
  std::size_t c = 0, h = 0, w = 0;
  bool flat() const { return h == 0; }
  std::size_t size() const { return flat() ? c : c * h * w; }
};

// Average pool over the last axis into num_classes scores.
template <typename Real>
DiffTensor<Real> voting_layer(const DiffTensor<Real>& spikes, std::size_t num_classes);

// Bernoulli(1 - p) keep mask scaled by 1/(1 - p), one draw per element of
// `shape`. Throws ConfigError unless 0 <= p < 1.
template <typename Real>
Tensor<Real> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng);

// x: T x ...; mask has x's shape without the leading T and is reused at
// every step. Identity in eval mode.
template <typename Real>
DiffTensor<Real> spiking_dropout(const DiffTensor<Real>& x, double p, const Tensor<Real>& mask, bool training);

template <typename Real>
struct ForwardCapture {
  // One entry per TCJA layer, per-batch maps (B x C x T).
  std::vector<std::size_t> tcja_layers;
  std::vector<Tensor<Real>> t_maps, c_maps, f_maps;
  // Mean spike rate per LIF layer, over all elements.
  std::vector<std::size_t> lif_layers;
  std::vector<double> firing_rates;
  // Output of every layer when keep_outputs is set.
  bool keep_outputs = false;
  std::vector<Tensor<Real>> outputs;
};

template <typename Real>
class Network {
 public:
  // Builds layers and draws weights uniform in +-1/sqrt(fan_in). Throws
  // ConfigError for an invalid arch or ShapeError for geometry that does not
  // fit (with the layer index).
  Network(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  const ArchSpec& arch() const { return arch_; }
  const std::vector<LayerGeometry>& geometry() const { return geometry_; }

  // x: T x B x C x H x W. Returns T x B x num_classes output spikes (or
  // votes). Dropout draws its masks from `rng` when training.
  DiffTensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& x, bool training,
                           std::mt19937_64* rng = nullptr, ForwardCapture<Real>* capture = nullptr);

  std::vector<Parameter<Real>>& parameters() { return params_; }
  const std::vector<Parameter<Real>>& parameters() const { return params_; }
  Parameter<Real>* find(const std::string& name);
  std::size_t parameter_count() const;
  // Parameters belonging to TCJA layers only.
  std::size_t tcja_parameter_count() const;
  std::size_t tcja_blocks() const;

  void zero_grad();

 private:
  struct Layer {
    LayerSpec spec;
    LayerGeometry in, out;
    std::size_t first_param = 0, n_params = 0;
    std::size_t k_t = 0, k_c = 0;
  };

  NetworkConfig config_;
  ArchSpec arch_;
  std::vector<Layer> layers_;
  std::vector<LayerGeometry> geometry_;
  std::vector<Parameter<Real>> params_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace tcja
