#pragma once

// Brute-force reference implementations used only by tests. Each one is a
// direct transcription of the defining sum, written against plain vectors
// so it shares no code with the library path it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// x: N x Cin x H x W, k: Cout x Cin x kh x kw.
inline Vec conv2d(const Vec& x, std::size_t n, std::size_t cin, std::size_t h, std::size_t w, const Vec& k,
                  std::size_t cout, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                  std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  Vec y(n * cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long ih = static_cast<long>(r * stride + i) - static_cast<long>(pad);
                const long iw = static_cast<long>(c * stride + j) - static_cast<long>(pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) || iw >= static_cast<long>(w)) continue;
                acc += k[((co * cin + ci) * kh + i) * kw + j] * x[((b * cin + ci) * h + ih) * w + iw];
              }
          y[((b * cout + co) * oh + r) * ow + c] = acc;
        }
  return y;
}

// x: Cin x L, k: Cout x Cin x K; right zero padding `pad`.
inline Vec conv1d(const Vec& x, std::size_t cin, std::size_t len, const Vec& k, std::size_t cout,
                  std::size_t taps, std::size_t pad) {
  const std::size_t out_len = len + pad - taps + 1;
  Vec y(cout * out_len, 0.0);
  for (std::size_t i = 0; i < cout; ++i)
    for (std::size_t j = 0; j < out_len; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < cin; ++n)
        for (std::size_t m = 0; m < taps; ++m) {
          if (j + m >= len) continue;
          acc += k[(i * cin + n) * taps + m] * x[n * len + j + m];
        }
      y[i * out_len + j] = acc;
    }
  return y;
}

// x: T x C x H x W  ->  Z: C x T
inline Vec squeeze(const Vec& x, std::size_t t_steps, std::size_t c, std::size_t h, std::size_t w) {
  Vec z(c * t_steps, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = 0; t < t_steps; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) acc += x[((t * c + ch) * h + i) * w + j];
      z[ch * t_steps + t] = acc / static_cast<double>(h * w);
    }
  return z;
}

// T[i][j] = sum_{n<C} sum_{m<K_T} W[i][n][m] Z[n][j+m]   (terms with j+m >= T vanish)
inline Vec tla(const Vec& z, std::size_t c, std::size_t t_steps, const Vec& wk, std::size_t k_t) {
  Vec out(c * t_steps, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < t_steps; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < c; ++n)
        for (std::size_t m = 0; m < k_t; ++m)
          if (j + m < t_steps) acc += wk[(i * c + n) * k_t + m] * z[n * t_steps + j + m];
      out[i * t_steps + j] = acc;
    }
  return out;
}

// C[i][j] = sum_{n<T} sum_{m<K_C} E[j][n][m] Z[i+m][n]   (terms with i+m >= C vanish)
inline Vec cla(const Vec& z, std::size_t c, std::size_t t_steps, const Vec& ek, std::size_t k_c) {
  Vec out(c * t_steps, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < t_steps; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < t_steps; ++n)
        for (std::size_t m = 0; m < k_c; ++m)
          if (i + m < c) acc += ek[(j * t_steps + n) * k_c + m] * z[(i + m) * t_steps + n];
      out[i * t_steps + j] = acc;
    }
  return out;
}

inline Vec ccf(const Vec& tm, const Vec& cm, bool multiply) {
  Vec f(tm.size());
  for (std::size_t i = 0; i < tm.size(); ++i) f[i] = sigmoid(multiply ? tm[i] * cm[i] : tm[i] + cm[i]);
  return f;
}

// X'[t][c][i][j] = X[t][c][i][j] * F[c][t]
inline Vec recalibrate(const Vec& x, std::size_t t_steps, std::size_t c, std::size_t h, std::size_t w,
                       const Vec& f) {
  Vec y(x.size());
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < h * w; ++k) {
        const std::size_t idx = (t * c + ch) * h * w + k;
        y[idx] = x[idx] * f[ch * t_steps + t];
      }
  return y;
}

inline Vec tcja(const Vec& x, std::size_t t_steps, std::size_t c, std::size_t h, std::size_t w, const Vec& wk,
                std::size_t k_t, const Vec& ek, std::size_t k_c, bool multiply) {
  const Vec z = squeeze(x, t_steps, c, h, w);
  const Vec f = ccf(tla(z, c, t_steps, wk, k_t), cla(z, c, t_steps, ek, k_c), multiply);
  return recalibrate(x, t_steps, c, h, w, f);
}

// planes x H x W pooled by k x k windows.
inline Vec pool(const Vec& x, std::size_t planes, std::size_t h, std::size_t w, std::size_t k, bool is_max) {
  Vec y(planes * (h / k) * (w / k));
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h / k; ++r)
      for (std::size_t c = 0; c < w / k; ++c) {
        std::vector<double> window;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) window.push_back(x[(p * h + r * k + i) * w + c * k + j]);
        double v = 0.0;
        if (is_max) {
          v = *std::max_element(window.begin(), window.end());
        } else {
          for (double e : window) v += e;
          v /= static_cast<double>(window.size());
        }
        y[(p * (h / k) + r) * (w / k) + c] = v;
      }
  return y;
}

// x: B x F, w: F x G, b: G
inline Vec affine(const Vec& x, std::size_t rows, std::size_t fin, const Vec& w, std::size_t fout, const Vec& b) {
  Vec y(rows * fout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t g = 0; g < fout; ++g) {
      double acc = b[g];
      for (std::size_t f = 0; f < fin; ++f) acc += x[r * fin + f] * w[f * fout + g];
      y[r * fout + g] = acc;
    }
  return y;
}

// L = (1/T) sum_t (1/C) sum_i (s[t][i] - g[t][i])^2
inline double smse(const Vec& s, const Vec& g, std::size_t t_steps, std::size_t classes) {
  double outer = 0.0;
  for (std::size_t t = 0; t < t_steps; ++t) {
    double inner = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
      const double d = s[t * classes + i] - g[t * classes + i];
      inner += d * d;
    }
    outer += inner / static_cast<double>(classes);
  }
  return outer / static_cast<double>(t_steps);
}

struct LifRun {
  Vec v, s, h;
};

// Direct recurrence for one neuron: V_t = H_{t-1} + (I - (H_{t-1} - vr)) / tau,
// S_t = [V_t >= vth], H_t = S_t ? vr : V_t.
inline LifRun lif(const Vec& input, double tau, double v_reset, double v_th) {
  LifRun run;
  double h = v_reset;
  for (double i : input) {
    const double v = h + (i - (h - v_reset)) / tau;
    const double s = v >= v_th ? 1.0 : 0.0;
    h = s > 0 ? v_reset : v;
    run.v.push_back(v);
    run.s.push_back(s);
    run.h.push_back(h);
  }
  return run;
}

}  // namespace oracle
