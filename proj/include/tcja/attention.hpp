#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "tcja/autodiff.hpp"

namespace tcja {

enum class Fusion { kMultiply, kAdd };

std::string to_string(Fusion f);
Fusion parse_fusion(const std::string& name);

// Learnable kernels of one temporal-channel joint attention block.
//   temporal: C x C x K_T, indexed [out channel i][input row n][tap m]
//   channel:  T x T x K_C, indexed [out step j][input column n][tap m]
template <typename Real>
struct TcjaParams {
  Tensor<Real> temporal;
  Tensor<Real> channel;
  Fusion fusion = Fusion::kMultiply;

  std::size_t channels() const { return temporal.dim(0); }
  std::size_t steps() const { return channel.dim(0); }
  std::size_t k_t() const { return temporal.dim(2); }
  std::size_t k_c() const { return channel.dim(2); }
};

// Checks K_T < T and K_C < C (and both >= 1); throws ShapeError otherwise.
void check_kernel_sizes(std::size_t channels, std::size_t steps, std::size_t k_t, std::size_t k_c);

// Kernel size actually used for a requested size: min(requested, dim - 1).
std::size_t capped_kernel(std::size_t requested, std::size_t dim);

// Kernels drawn uniform in +-1/sqrt(fan_in), fan_in = input rows * taps.
template <typename Real>
TcjaParams<Real> init_tcja_params(std::size_t channels, std::size_t steps, std::size_t k_t,
                                  std::size_t k_c, Fusion fusion, std::mt19937_64& rng);

// Average over the two trailing spatial axes.
//   T x C x H x W      -> C x T
//   T x B x C x H x W  -> B x C x T
template <typename Real>
DiffTensor<Real> squeeze(const DiffTensor<Real>& x);

// Temporal-wise local attention on Z (C x T or B x C x T):
//   out[i][j] = sum_n sum_m temporal[i][n][m] * Z[n][j + m], zero past T.
template <typename Real>
DiffTensor<Real> tla(const DiffTensor<Real>& z, const DiffTensor<Real>& temporal);

// Channel-wise local attention on Z (C x T or B x C x T):
//   out[i][j] = sum_n sum_m channel[j][n][m] * Z[i + m][n], zero past C.
template <typename Real>
DiffTensor<Real> cla(const DiffTensor<Real>& z, const DiffTensor<Real>& channel);

// Cross convolutional fusion: sigmoid(t_map * c_map) or sigmoid(t_map + c_map).
template <typename Real>
DiffTensor<Real> ccf(const DiffTensor<Real>& t_map, const DiffTensor<Real>& c_map, Fusion fusion);

// Scales every frame X[t][c] (or X[t][b][c]) by F[c][t] (or F[b][c][t]).
template <typename Real>
DiffTensor<Real> recalibrate(const DiffTensor<Real>& x, const DiffTensor<Real>& f_map);

template <typename Real>
struct AttentionMaps {
  DiffTensor<Real> z;
  DiffTensor<Real> t_map;
  DiffTensor<Real> c_map;
  DiffTensor<Real> f_map;
};

// squeeze -> (tla, cla) -> ccf -> recalibrate. Output has the input's shape.
template <typename Real>
DiffTensor<Real> tcja_forward(const DiffTensor<Real>& x, const DiffTensor<Real>& temporal,
                              const DiffTensor<Real>& channel, Fusion fusion,
                              AttentionMaps<Real>* maps = nullptr);

struct ParamCount {
  std::size_t tla = 0;          // C^2 K_T
  std::size_t cla = 0;          // T^2 K_C
  std::size_t fc_baseline = 0;  // T^2 C^2, dense C*T -> C*T map

  std::size_t tcja() const { return tla + cla; }
};

ParamCount param_count(std::size_t channels, std::size_t steps, std::size_t k_t, std::size_t k_c);

}  // namespace tcja
