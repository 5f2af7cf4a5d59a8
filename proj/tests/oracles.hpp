#pragma once

// Reference implementations for the tests. Each is the most literal form of
// its definition and shares no code with the library kernel it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dcbd/autograd.hpp"
#include "dcbd/error.hpp"
#include "dcbd/rng.hpp"
#include "dcbd/tensor.hpp"

namespace oracle {

using dcbd::Rng;
using dcbd::Shape;
using dcbd::Tensor;

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Zero-padded cross-correlation as a plain seven-deep loop.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b,
                     int dilation, int pad, int stride = 1) {
  const Shape xs = x.shape(), ws = w.shape();
  const int k = ws.h;
  const int ho = (xs.h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  const int wo = (xs.w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  Tensor out({xs.n, ws.n, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[co] : 0.0;
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky * dilation - pad;
                const int ix = ox * stride + kx * dilation - pad;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy, ix);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

inline Tensor maxpool(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int xx = 0; xx < s.w / 2; ++xx) {
          double m = -INFINITY;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              m = std::max(m, x.at(n, c, 2 * y + dy, 2 * xx + dx));
          out.at(n, c, y, xx) = m;
        }
  return out;
}

// 4-neighbour stencil with zeros outside the image.
inline Tensor laplacian(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(s);
  auto px = [&](int n, int c, int y, int xx) {
    if (y < 0 || y >= s.h || xx < 0 || xx >= s.w) return 0.0;
    return x.at(n, c, y, xx);
  };
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx)
          out.at(n, c, y, xx) = px(n, c, y - 1, xx) + px(n, c, y + 1, xx) +
                                px(n, c, y, xx - 1) + px(n, c, y, xx + 1) -
                                4.0 * px(n, c, y, xx);
  return out;
}

inline double peaks(double m, double n) {
  const double a = 3.0 * std::pow(1.0 - m, 2) * std::exp(-m * m - std::pow(n + 1.0, 2));
  const double b = 10.0 * (m / 5.0 - std::pow(m, 3) - std::pow(n, 5)) * std::exp(-m * m - n * n);
  const double c = std::exp(-std::pow(m + 1.0, 2) - n * n) / 3.0;
  return a - b - c;
}

// SSIM with an explicit 11x11 weight matrix evaluated window by window.
inline double ssim(const Tensor& a, const Tensor& b, double peak) {
  constexpr int K = 11;
  double wsum = 0.0;
  double win[K][K];
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double di = i - 5, dj = j - 5;
      win[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (auto& row : win)
    for (double& v : row) v /= wsum;
  const double c1 = std::pow(0.01 * peak, 2), c2 = std::pow(0.03 * peak, 2);
  const Shape s = a.shape();
  double total = 0.0;
  int planes = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double plane_sum = 0.0;
      int count = 0;
      for (int y = 0; y + K <= s.h; ++y)
        for (int x = 0; x + K <= s.w; ++x) {
          double ma = 0, mb = 0;
          for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
              ma += win[i][j] * a.at(n, c, y + i, x + j);
              mb += win[i][j] * b.at(n, c, y + i, x + j);
            }
          double va = 0, vb = 0, cov = 0;
          for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
              const double da = a.at(n, c, y + i, x + j) - ma;
              const double db = b.at(n, c, y + i, x + j) - mb;
              va += win[i][j] * da * da;
              vb += win[i][j] * db * db;
              cov += win[i][j] * da * db;
            }
          plane_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
          ++count;
        }
      total += plane_sum / count;
      ++planes;
    }
  return total / planes;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Two-sided Kolmogorov-Smirnov distance between a sample and a CDF.
inline double ks_statistic(std::vector<double> xs,
                           const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

// Draws a tensor in [-2, 2] whose entries are at least `gap` away from zero
// and whose 2x2 pooling windows have a unique maximum by at least `gap`.
inline Tensor kink_free(Shape s, Rng& rng, double gap = 1e-3) {
  for (;;) {
    Tensor t = random_tensor(s, rng, -2.0, 2.0);
    bool ok = std::all_of(t.data().begin(), t.data().end(),
                          [&](double v) { return std::abs(v) >= gap; });
    if (ok && s.h % 2 == 0 && s.w % 2 == 0) {
      for (int n = 0; n < s.n && ok; ++n)
        for (int c = 0; c < s.c && ok; ++c)
          for (int y = 0; y < s.h && ok; y += 2)
            for (int x = 0; x < s.w && ok; x += 2) {
              double v[4] = {t.at(n, c, y, x), t.at(n, c, y, x + 1),
                             t.at(n, c, y + 1, x), t.at(n, c, y + 1, x + 1)};
              std::sort(v, v + 4);
              ok = v[3] - v[2] >= gap;
            }
    }
    if (ok) return t;
  }
}

// Worst finite-difference error of `f` over `points` kink-free random inputs.
inline double worst_gradcheck(const dcbd::ScalarFn& f, Shape s, Rng& rng,
                              int points = 10, double step = 1e-5) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p)
    worst = std::max(worst, dcbd::finite_diff_check(f, kink_free(s, rng), step).max_rel_error);
  return worst;
}

template <class F>
dcbd::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const dcbd::Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected a dcbd::Error");
}

template <class F>
std::string error_code_of(F&& f) {
  try {
    f();
  } catch (const dcbd::Error& e) {
    return e.code();
  }
  return "<none>";
}

}  // namespace oracle
