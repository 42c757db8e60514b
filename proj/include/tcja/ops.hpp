#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "tcja/autodiff.hpp"

namespace tcja {

// Binary ops broadcast numpy-style: shapes are right-aligned and a
// dimension of size 1 (or a missing leading dimension) stretches to match.
template <typename Real>
DiffTensor<Real> add(const DiffTensor<Real>& a, const DiffTensor<Real>& b);
template <typename Real>
DiffTensor<Real> sub(const DiffTensor<Real>& a, const DiffTensor<Real>& b);
template <typename Real>
DiffTensor<Real> mul(const DiffTensor<Real>& a, const DiffTensor<Real>& b);

template <typename Real>
DiffTensor<Real> scale(const DiffTensor<Real>& a, Real factor);
template <typename Real>
DiffTensor<Real> add_scalar(const DiffTensor<Real>& a, Real offset);
template <typename Real>
DiffTensor<Real> sigmoid(const DiffTensor<Real>& a);
// Same value, cut from the gradient graph.
template <typename Real>
DiffTensor<Real> detach(const DiffTensor<Real>& a);

enum class ElementwiseKind { kAdd, kMultiply, kScale, kSigmoid };

// Single entry point over the elementwise family. `b` is required for the
// binary kinds; `factor` is used by kScale.
template <typename Real>
DiffTensor<Real> elementwise(ElementwiseKind kind, const DiffTensor<Real>& a,
                             const std::optional<DiffTensor<Real>>& b = std::nullopt,
                             Real factor = Real(1));

Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename Real>
DiffTensor<Real> sum(const DiffTensor<Real>& a);
template <typename Real>
DiffTensor<Real> mean(const DiffTensor<Real>& a);

template <typename Real>
DiffTensor<Real> reshape(const DiffTensor<Real>& a, Shape shape);
// out.shape[i] = a.shape[perm[i]].
template <typename Real>
DiffTensor<Real> permute(const DiffTensor<Real>& a, const std::vector<std::size_t>& perm);
// Slice `index` along axis 0, dropping that axis.
template <typename Real>
DiffTensor<Real> select(const DiffTensor<Real>& a, std::size_t index);
// Stacks equally-shaped tensors along a new leading axis.
template <typename Real>
DiffTensor<Real> stack(const std::vector<DiffTensor<Real>>& parts);

// input N x Cin x H x W, kernel Cout x Cin x k x k -> N x Cout x OH x OW with
// OH = (H + 2p - k) / stride + 1. Cross-correlation, no bias.
template <typename Real>
DiffTensor<Real> conv2d(const DiffTensor<Real>& input, const DiffTensor<Real>& kernel,
                        std::size_t stride, std::size_t padding);

// input Cin x L (or B x Cin x L), kernel Cout x Cin x K. The input is
// zero-extended on the right by `padding_right` positions and
//   out[i][j] = sum_n sum_m kernel[i][n][m] * padded[n][j + m],
// giving L + padding_right - K + 1 output positions.
template <typename Real>
DiffTensor<Real> conv1d_multichannel(const DiffTensor<Real>& input,
                                     const DiffTensor<Real>& kernel,
                                     std::size_t padding_right);

enum class PoolKind { kMax, kAvg };

// Non-overlapping k x k pooling over the last two axes, which must both be
// divisible by k. Max-pool ties resolve to the first element in row-major
// window order.
template <typename Real>
DiffTensor<Real> pool2d(const DiffTensor<Real>& input, PoolKind kind, std::size_t k);

// input B x F, weight F x G, bias G -> B x G.
template <typename Real>
DiffTensor<Real> fully_connected(const DiffTensor<Real>& input,
                                 const DiffTensor<Real>& weight,
                                 const DiffTensor<Real>& bias);

// Averages consecutive windows of the last axis: [..., L] -> [..., groups]
// with window L / groups. L must be divisible by groups.
template <typename Real>
DiffTensor<Real> group_mean(const DiffTensor<Real>& input, std::size_t groups);

}  // namespace tcja
