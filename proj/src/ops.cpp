#include "tcja/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace tcja {

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

// Per-output-dimension strides into an operand; 0 where the operand is
// broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> result(out.size(), 0);
  const auto own = row_major_strides(operand);
  const std::size_t offset = out.size() - operand.size();
  for (std::size_t d = 0; d < operand.size(); ++d) {
    if (operand[d] != 1) result[offset + d] = own[d];
  }
  return result;
}

// Visits every output element with the matching operand offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> counter(rank, 0);
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::size_t ia = 0, ib = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    std::size_t a = ia, b = ib;
    for (std::size_t k = 0; k < inner; ++k, a += ia_step, b += ib_step) {
      f(base + k, a, b);
    }
    // advance the outer counter
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

template <typename Real>
Tape<Real>& same_tape(const DiffTensor<Real>& a, const DiffTensor<Real>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

template <typename Real>
DiffTensor<Real> unary_map(const DiffTensor<Real>& a, Real (*fwd)(Real),
                           Real (*deriv_from_output)(Real)) {
  Tape<Real>& tape = a.tape();
  Tensor<Real> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, deriv_from_output](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv_from_output(y[i]);
  });
}

template <typename Real>
Real sigmoid_fwd(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Real sigmoid_deriv(Real y) {
  return y * (Real(1) - y);
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename Real>
DiffTensor<Real> binary(const DiffTensor<Real>& a, const DiffTensor<Real>& b, BinaryKind kind) {
  Tape<Real>& tape = same_tape(a, b);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  Tensor<Real> out(out_shape);
  const Real* av = a.value().data();
  const Real* bv = b.value().data();
  Real* ov = out.data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] + bv[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] - bv[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ov[o] = av[i] * bv[j]; });
      break;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib},
                     [ia, ib, kind, out_shape, sa = std::move(sa), sb = std::move(sb)](Tape<Real>& t, std::size_t self) {
    const Real* g = t.upstream(self).data();
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    if (kind == BinaryKind::kMul) {
      const Real* av = t.value(ia).data();
      const Real* bv = t.value(ib).data();
      if (need_a) {
        Real* ga = t.accumulate(ia).data();
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * bv[j]; });
      }
      if (need_b) {
        Real* gb = t.accumulate(ib).data();
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * av[i]; });
      }
      return;
    }
    if (need_a) {
      Real* ga = t.accumulate(ia).data();
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
    }
    if (need_b) {
      Real* gb = t.accumulate(ib).data();
      const Real sign = kind == BinaryKind::kSub ? Real(-1) : Real(1);
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += sign * g[o]; });
    }
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t da = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t db = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shape mismatch: " + to_string(a) + " vs " + to_string(b));
    }
    out[d] = da == 1 ? db : da;
  }
  return out;
}

template <typename Real>
DiffTensor<Real> add(const DiffTensor<Real>& a, const DiffTensor<Real>& b) {
  return binary(a, b, BinaryKind::kAdd);
}

template <typename Real>
DiffTensor<Real> sub(const DiffTensor<Real>& a, const DiffTensor<Real>& b) {
  return binary(a, b, BinaryKind::kSub);
}

template <typename Real>
DiffTensor<Real> mul(const DiffTensor<Real>& a, const DiffTensor<Real>& b) {
  return binary(a, b, BinaryKind::kMul);
}

template <typename Real>
DiffTensor<Real> scale(const DiffTensor<Real>& a, Real factor) {
  Tensor<Real> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, factor](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename Real>
DiffTensor<Real> add_scalar(const DiffTensor<Real>& a, Real offset) {
  Tensor<Real> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + offset;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename Real>
DiffTensor<Real> sigmoid(const DiffTensor<Real>& a) {
  return unary_map<Real>(a, &sigmoid_fwd<Real>, &sigmoid_deriv<Real>);
}

template <typename Real>
DiffTensor<Real> detach(const DiffTensor<Real>& a) {
  return a.tape().leaf(a.value(), false);
}

template <typename Real>
DiffTensor<Real> elementwise(ElementwiseKind kind, const DiffTensor<Real>& a,
                             const std::optional<DiffTensor<Real>>& b, Real factor) {
  const auto need_b = [&]() -> const DiffTensor<Real>& {
    if (!b) throw std::invalid_argument("binary elementwise op needs a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, need_b());
    case ElementwiseKind::kMultiply: return mul(a, need_b());
    case ElementwiseKind::kScale: return scale(a, factor);
    case ElementwiseKind::kSigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("unknown elementwise kind");
}

template <typename Real>
DiffTensor<Real> sum(const DiffTensor<Real>& a) {
  const auto& av = a.value();
  // Accumulate in double so float runs are order-stable and less lossy.
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += static_cast<double>(av[i]);
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<Real>::scalar(static_cast<Real>(total)), {ia},
                         [ia](Tape<Real>& t, std::size_t self) {
    const Real g = t.upstream(self)[0];
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename Real>
DiffTensor<Real> mean(const DiffTensor<Real>& a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(n));
}

template <typename Real>
DiffTensor<Real> reshape(const DiffTensor<Real>& a, Shape shape) {
  Tensor<Real> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename Real>
DiffTensor<Real> permute(const DiffTensor<Real>& a, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) throw ShapeError("permutation rank differs from tensor rank " + to_string(in_shape));
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || seen[perm[i]]) throw ShapeError("invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = in_shape[perm[i]];
  }
  const auto in_strides = row_major_strides(in_shape);
  std::vector<std::size_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) gather[i] = in_strides[perm[i]];
  // index map: out linear -> in linear
  std::vector<std::size_t> source(numel(out_shape));
  std::vector<std::size_t> zeros(rank, 0);
  for_each_broadcast(out_shape, gather, zeros,
                     [&](std::size_t o, std::size_t i, std::size_t) { source[o] = i; });
  Tensor<Real> out(out_shape);
  const auto& av = a.value();
  for (std::size_t o = 0; o < source.size(); ++o) out[o] = av[source[o]];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, source = std::move(source)](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t o = 0; o < source.size(); ++o) ga[source[o]] += g[o];
  });
}

template <typename Real>
DiffTensor<Real> select(const DiffTensor<Real>& a, std::size_t index) {
  const Shape& shape = a.shape();
  if (shape.empty()) throw ShapeError("select on a scalar");
  if (index >= shape[0]) {
    throw ShapeError("select index " + std::to_string(index) + " out of range for " + to_string(shape));
  }
  Shape out_shape(shape.begin() + 1, shape.end());
  const std::size_t chunk = numel(out_shape);
  const auto& av = a.value();
  std::vector<Real> values(av.data() + index * chunk, av.data() + (index + 1) * chunk);
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<Real>(out_shape, std::move(values)), {ia},
                         [ia, index, chunk](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < chunk; ++i) ga[index * chunk + i] += g[i];
  });
}

template <typename Real>
DiffTensor<Real> stack(const std::vector<DiffTensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Tape<Real>& tape = parts.front().tape();
  const Shape part_shape = parts.front().shape();
  std::vector<std::size_t> ids;
  std::vector<Real> values;
  values.reserve(parts.size() * numel(part_shape));
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw std::invalid_argument("stack operands live on different tapes");
    if (p.shape() != part_shape) {
      throw ShapeError("stack shape mismatch: " + to_string(part_shape) + " vs " + to_string(p.shape()));
    }
    ids.push_back(p.id());
    values.insert(values.end(), p.value().storage().begin(), p.value().storage().end());
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), part_shape.begin(), part_shape.end());
  const std::size_t chunk = numel(part_shape);
  return tape.record(Tensor<Real>(out_shape, std::move(values)), ids, [ids, chunk](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gk = t.accumulate(ids[k]);
      for (std::size_t i = 0; i < chunk; ++i) gk[i] += g[k * chunk + i];
    }
  });
}

namespace {

// Range of output columns whose input column ow*stride + kw - pad lies in
// [0, in_w).
inline void valid_range(long in_w, long out_w, long stride, long offset, long& lo, long& hi) {
  // need 0 <= o*stride + offset <= in_w - 1
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const long top = in_w - 1 - offset;
  hi = top < 0 ? -1 : std::min(out_w - 1, top / stride);
}

}  // namespace

template <typename Real>
DiffTensor<Real> conv2d(const DiffTensor<Real>& input, const DiffTensor<Real>& kernel,
                        std::size_t stride, std::size_t padding) {
  Tape<Real>& tape = same_tape(input, kernel);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is.size() != 4 || ks.size() != 4) {
    throw ShapeError("conv2d expects N x C x H x W input and Cout x Cin x k x k kernel, got " +
                     to_string(is) + " and " + to_string(ks));
  }
  if (ks[1] != is[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(is) + " vs kernel " + to_string(ks));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  const long n_batch = static_cast<long>(is[0]), cin = static_cast<long>(is[1]);
  const long in_h = static_cast<long>(is[2]), in_w = static_cast<long>(is[3]);
  const long cout = static_cast<long>(ks[0]), kh = static_cast<long>(ks[2]), kw = static_cast<long>(ks[3]);
  const long pad = static_cast<long>(padding), st = static_cast<long>(stride);
  const long span_h = in_h + 2 * pad - kh, span_w = in_w + 2 * pad - kw;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d output size < 1: input " + to_string(is) + ", kernel " + to_string(ks) +
                     ", padding " + std::to_string(padding));
  }
  const long out_h = span_h / st + 1, out_w = span_w / st + 1;

  Tensor<Real> out(Shape{is[0], ks[0], static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});
  const Real* x = input.value().data();
  const Real* w = kernel.value().data();
  Real* y = out.data();
  const long in_plane = in_h * in_w, out_plane = out_h * out_w;

  // Shared traversal: visits every (output pixel, input pixel, weight) triple.
  auto traverse = [=](auto&& body) {
    for (long n = 0; n < n_batch; ++n) {
      for (long co = 0; co < cout; ++co) {
        for (long ci = 0; ci < cin; ++ci) {
          const long x_base = (n * cin + ci) * in_plane;
          const long y_base = (n * cout + co) * out_plane;
          for (long r = 0; r < kh; ++r) {
            long oh_lo, oh_hi;
            valid_range(in_h, out_h, st, r - pad, oh_lo, oh_hi);
            for (long c = 0; c < kw; ++c) {
              const long w_idx = ((co * cin + ci) * kh + r) * kw + c;
              long ow_lo, ow_hi;
              valid_range(in_w, out_w, st, c - pad, ow_lo, ow_hi);
              if (ow_lo > ow_hi) continue;
              for (long oh = oh_lo; oh <= oh_hi; ++oh) {
                const long ih = oh * st + r - pad;
                const long x_row = x_base + ih * in_w + (c - pad);
                const long y_row = y_base + oh * out_w;
                body(w_idx, x_row, y_row, ow_lo, ow_hi);
              }
            }
          }
        }
      }
    }
  };

  traverse([&](long w_idx, long x_row, long y_row, long lo, long hi) {
    const Real wv = w[w_idx];
    for (long ow = lo; ow <= hi; ++ow) y[y_row + ow] += wv * x[x_row + ow * st];
  });

  const std::size_t ii = input.id(), ik = kernel.id();
  return tape.record(std::move(out), {ii, ik}, [ii, ik, traverse, st](Tape<Real>& t, std::size_t self) {
    const Real* g = t.upstream(self).data();
    if (t.requires_grad(ii)) {
      const Real* wv = t.value(ik).data();
      Real* gx = t.accumulate(ii).data();
      traverse([&](long w_idx, long x_row, long y_row, long lo, long hi) {
        const Real k = wv[w_idx];
        for (long ow = lo; ow <= hi; ++ow) gx[x_row + ow * st] += k * g[y_row + ow];
      });
    }
    if (t.requires_grad(ik)) {
      const Real* xv = t.value(ii).data();
      Real* gw = t.accumulate(ik).data();
      traverse([&](long w_idx, long x_row, long y_row, long lo, long hi) {
        Real acc = 0;
        for (long ow = lo; ow <= hi; ++ow) acc += xv[x_row + ow * st] * g[y_row + ow];
        gw[w_idx] += acc;
      });
    }
  });
}

template <typename Real>
DiffTensor<Real> conv1d_multichannel(const DiffTensor<Real>& input, const DiffTensor<Real>& kernel,
                                     std::size_t padding_right) {
  Tape<Real>& tape = same_tape(input, kernel);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if ((is.size() != 2 && is.size() != 3) || ks.size() != 3) {
    throw ShapeError("conv1d expects Cin x L (or B x Cin x L) input and Cout x Cin x K kernel, got " +
                     to_string(is) + " and " + to_string(ks));
  }
  const bool batched = is.size() == 3;
  const std::size_t batch = batched ? is[0] : 1;
  const std::size_t cin = is[batched ? 1 : 0];
  const std::size_t len = is[batched ? 2 : 1];
  const std::size_t cout = ks[0], taps = ks[2];
  if (ks[1] != cin) {
    throw ShapeError("conv1d channel mismatch: input " + to_string(is) + " vs kernel " + to_string(ks));
  }
  if (taps == 0 || taps > len + padding_right) {
    throw ShapeError("conv1d kernel of length " + std::to_string(taps) + " exceeds padded length " +
                     std::to_string(len + padding_right));
  }
  const std::size_t out_len = len + padding_right - taps + 1;
  Shape out_shape = batched ? Shape{batch, cout, out_len} : Shape{cout, out_len};
  Tensor<Real> out(out_shape);
  const Real* x = input.value().data();
  const Real* w = kernel.value().data();
  Real* y = out.data();

  auto traverse = [=](auto&& body) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < cout; ++i) {
        for (std::size_t n = 0; n < cin; ++n) {
          for (std::size_t m = 0; m < taps; ++m) {
            // positions j with j + m < len; the rest read zero padding
            const std::size_t limit = len > m ? std::min(out_len, len - m) : 0;
            body((i * cin + n) * taps + m, (b * cin + n) * len + m, (b * cout + i) * out_len, limit);
          }
        }
      }
    }
  };

  traverse([&](std::size_t w_idx, std::size_t x_off, std::size_t y_off, std::size_t limit) {
    const Real wv = w[w_idx];
    for (std::size_t j = 0; j < limit; ++j) y[y_off + j] += wv * x[x_off + j];
  });

  const std::size_t ii = input.id(), ik = kernel.id();
  return tape.record(std::move(out), {ii, ik}, [ii, ik, traverse](Tape<Real>& t, std::size_t self) {
    const Real* g = t.upstream(self).data();
    if (t.requires_grad(ii)) {
      const Real* wv = t.value(ik).data();
      Real* gx = t.accumulate(ii).data();
      traverse([&](std::size_t w_idx, std::size_t x_off, std::size_t y_off, std::size_t limit) {
        const Real k = wv[w_idx];
        for (std::size_t j = 0; j < limit; ++j) gx[x_off + j] += k * g[y_off + j];
      });
    }
    if (t.requires_grad(ik)) {
      const Real* xv = t.value(ii).data();
      Real* gw = t.accumulate(ik).data();
      traverse([&](std::size_t w_idx, std::size_t x_off, std::size_t y_off, std::size_t limit) {
        Real acc = 0;
        for (std::size_t j = 0; j < limit; ++j) acc += xv[x_off + j] * g[y_off + j];
        gw[w_idx] += acc;
      });
    }
  });
}

template <typename Real>
DiffTensor<Real> pool2d(const DiffTensor<Real>& input, PoolKind kind, std::size_t k) {
  const Shape& is = input.shape();
  if (is.size() < 2) throw ShapeError("pool2d needs at least 2 axes, got " + to_string(is));
  if (k == 0) throw ShapeError("pool2d window must be positive");
  const std::size_t h = is[is.size() - 2], w = is[is.size() - 1];
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("pool2d window " + std::to_string(k) + " does not divide spatial dims of " + to_string(is));
  }
  const std::size_t oh = h / k, ow = w / k;
  const std::size_t planes = numel(is) / (h * w);
  Shape out_shape = is;
  out_shape[is.size() - 2] = oh;
  out_shape[is.size() - 1] = ow;
  Tensor<Real> out(out_shape);
  const Real* x = input.value().data();
  const std::size_t ii = input.id();

  if (kind == PoolKind::kAvg) {
    const Real inv = Real(1) / static_cast<Real>(k * k);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          Real acc = 0;
          for (std::size_t dr = 0; dr < k; ++dr) {
            for (std::size_t dc = 0; dc < k; ++dc) acc += x[p * h * w + (r * k + dr) * w + c * k + dc];
          }
          out[(p * oh + r) * ow + c] = acc * inv;
        }
      }
    }
    return input.tape().record(std::move(out), {ii}, [=](Tape<Real>& t, std::size_t self) {
      const auto& g = t.upstream(self);
      auto& gx = t.accumulate(ii);
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const Real v = g[(p * oh + r) * ow + c] * inv;
            for (std::size_t dr = 0; dr < k; ++dr) {
              for (std::size_t dc = 0; dc < k; ++dc) gx[p * h * w + (r * k + dr) * w + c * k + dc] += v;
            }
          }
        }
      }
    });
  }

  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        std::size_t best = p * h * w + r * k * w + c * k;
        for (std::size_t dr = 0; dr < k; ++dr) {
          for (std::size_t dc = 0; dc < k; ++dc) {
            const std::size_t idx = p * h * w + (r * k + dr) * w + c * k + dc;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + r) * ow + c;
        argmax[o] = best;
        out[o] = x[best];
      }
    }
  }
  return input.tape().record(std::move(out), {ii}, [ii, argmax = std::move(argmax)](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& gx = t.accumulate(ii);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
  });
}

template <typename Real>
DiffTensor<Real> fully_connected(const DiffTensor<Real>& input, const DiffTensor<Real>& weight,
                                 const DiffTensor<Real>& bias) {
  Tape<Real>& tape = same_tape(input, weight);
  same_tape(input, bias);
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 2 || ws.size() != 2 || bias.shape().size() != 1) {
    throw ShapeError("fully_connected expects B x F input, F x G weight and G bias, got " + to_string(is) +
                     ", " + to_string(ws) + ", " + to_string(bias.shape()));
  }
  if (is[1] != ws[0]) {
    throw ShapeError("fully_connected inner dimension mismatch: " + to_string(is) + " vs " + to_string(ws));
  }
  if (bias.shape()[0] != ws[1]) {
    throw ShapeError("fully_connected bias " + to_string(bias.shape()) + " does not match weight " + to_string(ws));
  }
  const std::size_t rows = is[0], fin = is[1], fout = ws[1];
  Tensor<Real> out(Shape{rows, fout});
  const Real* x = input.value().data();
  const Real* w = weight.value().data();
  const Real* b = bias.value().data();
  Real* y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real* yr = y + r * fout;
    std::copy(b, b + fout, yr);
    for (std::size_t f = 0; f < fin; ++f) {
      const Real xv = x[r * fin + f];
      if (xv == Real(0)) continue;
      const Real* wf = w + f * fout;
      for (std::size_t g = 0; g < fout; ++g) yr[g] += xv * wf[g];
    }
  }
  const std::size_t ix = input.id(), iw = weight.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, iw, ib}, [=](Tape<Real>& t, std::size_t self) {
    const Real* g = t.upstream(self).data();
    if (t.requires_grad(ix)) {
      const Real* wv = t.value(iw).data();
      Real* gx = t.accumulate(ix).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < fin; ++f) {
          Real acc = 0;
          for (std::size_t o = 0; o < fout; ++o) acc += g[r * fout + o] * wv[f * fout + o];
          gx[r * fin + f] += acc;
        }
      }
    }
    if (t.requires_grad(iw)) {
      const Real* xv = t.value(ix).data();
      Real* gw = t.accumulate(iw).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t f = 0; f < fin; ++f) {
          const Real xr = xv[r * fin + f];
          if (xr == Real(0)) continue;
          for (std::size_t o = 0; o < fout; ++o) gw[f * fout + o] += xr * g[r * fout + o];
        }
      }
    }
    if (t.requires_grad(ib)) {
      Real* gb = t.accumulate(ib).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < fout; ++o) gb[o] += g[r * fout + o];
      }
    }
  });
}

template <typename Real>
DiffTensor<Real> group_mean(const DiffTensor<Real>& input, std::size_t groups) {
  const Shape& is = input.shape();
  if (is.empty()) throw ShapeError("group_mean on a scalar");
  const std::size_t len = is.back();
  if (groups == 0 || len % groups != 0) {
    throw ShapeError("group_mean: last axis " + std::to_string(len) + " not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const std::size_t window = len / groups;
  const std::size_t rows = numel(is) / len;
  Shape out_shape = is;
  out_shape.back() = groups;
  Tensor<Real> out(out_shape);
  const Real* x = input.value().data();
  const Real inv = Real(1) / static_cast<Real>(window);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      Real acc = 0;
      for (std::size_t k = 0; k < window; ++k) acc += x[r * len + g * window + k];
      out[r * groups + g] = acc * inv;
    }
  }
  const std::size_t ii = input.id();
  return input.tape().record(std::move(out), {ii}, [=](Tape<Real>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& gx = t.accumulate(ii);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t q = 0; q < groups; ++q) {
        const Real v = g[r * groups + q] * inv;
        for (std::size_t k = 0; k < window; ++k) gx[r * len + q * window + k] += v;
      }
    }
  });
}

#define TCJA_INSTANTIATE_OPS(Real)                                                                  \
  template DiffTensor<Real> add(const DiffTensor<Real>&, const DiffTensor<Real>&);                  \
  template DiffTensor<Real> sub(const DiffTensor<Real>&, const DiffTensor<Real>&);                  \
  template DiffTensor<Real> mul(const DiffTensor<Real>&, const DiffTensor<Real>&);                  \
  template DiffTensor<Real> scale(const DiffTensor<Real>&, Real);                                   \
  template DiffTensor<Real> add_scalar(const DiffTensor<Real>&, Real);                              \
  template DiffTensor<Real> sigmoid(const DiffTensor<Real>&);                                       \
  template DiffTensor<Real> detach(const DiffTensor<Real>&);                                        \
  template DiffTensor<Real> elementwise(ElementwiseKind, const DiffTensor<Real>&,                   \
                                        const std::optional<DiffTensor<Real>>&, Real);              \
  template DiffTensor<Real> sum(const DiffTensor<Real>&);                                           \
  template DiffTensor<Real> mean(const DiffTensor<Real>&);                                          \
  template DiffTensor<Real> reshape(const DiffTensor<Real>&, Shape);                                \
  template DiffTensor<Real> permute(const DiffTensor<Real>&, const std::vector<std::size_t>&);      \
  template DiffTensor<Real> select(const DiffTensor<Real>&, std::size_t);                           \
  template DiffTensor<Real> stack(const std::vector<DiffTensor<Real>>&);                            \
  template DiffTensor<Real> conv2d(const DiffTensor<Real>&, const DiffTensor<Real>&, std::size_t,   \
                                   std::size_t);                                                    \
  template DiffTensor<Real> conv1d_multichannel(const DiffTensor<Real>&, const DiffTensor<Real>&,   \
                                                std::size_t);                                       \
  template DiffTensor<Real> pool2d(const DiffTensor<Real>&, PoolKind, std::size_t);                 \
  template DiffTensor<Real> fully_connected(const DiffTensor<Real>&, const DiffTensor<Real>&,       \
                                            const DiffTensor<Real>&);                               \
  template DiffTensor<Real> group_mean(const DiffTensor<Real>&, std::size_t);

TCJA_INSTANTIATE_OPS(float)
TCJA_INSTANTIATE_OPS(double)

}  // namespace tcja
