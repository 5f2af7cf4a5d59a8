#include "dcbd/noise.hpp"

#include <algorithm>
#include <cmath>

#include "dcbd/error.hpp"

namespace dcbd::noise {

void NoiseSpec::validate() const {
  if (kind == Kind::uniform && !(sigma >= 0.0 && sigma <= kMaxSigma))
    fail(ErrorKind::config, "noise.sigma_range",
         "sigma must lie in [0, 75], got " + std::to_string(sigma));
  if (kind == Kind::variant && !(lambda >= 0.0))
    fail(ErrorKind::config, "noise.lambda_range", "lambda must be >= 0");
}

double peaks(double m, double n) {
  return 3.0 * (1.0 - m) * (1.0 - m) * std::exp(-m * m - (n + 1.0) * (n + 1.0)) -
         10.0 * (m / 5.0 - m * m * m - std::pow(n, 5)) * std::exp(-m * m - n * n) -
         (1.0 / 3.0) * std::exp(-(m + 1.0) * (m + 1.0) - n * n);
}

namespace {

double grid_coord(int i, int count, const PeaksDomain& d) {
  if (count == 1) return 0.5 * (d.lo + d.hi);
  return d.lo + (d.hi - d.lo) * static_cast<double>(i) / (count - 1);
}

}  // namespace

Tensor peaks_field(int h, int w, PeaksDomain domain) {
  if (h < 1 || w < 1)
    fail(ErrorKind::shape, "peaks.size", "peaks field needs h, w >= 1");
  Tensor out({1, 1, h, w});
  for (int y = 0; y < h; ++y) {
    const double n = grid_coord(y, h, domain);
    for (int x = 0; x < w; ++x)
      out.at(0, 0, y, x) = peaks(grid_coord(x, w, domain), n);
  }
  return out;
}

Tensor noise_level_map(const Tensor& p, double lambda) {
  if (p.empty()) fail(ErrorKind::shape, "noise_map.empty", "empty field");
  const auto [lo_it, hi_it] = std::minmax_element(p.data().begin(), p.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo))
    fail(ErrorKind::numeric, "noise_map.degenerate",
         "noise distribution is constant; cannot normalize");
  Tensor out(p.shape());
  const double range = hi - lo;
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = lambda * ((p[i] - lo) / range);
  return out;
}

NoisyImage spatially_variant_awgn(const Tensor& clean, const Tensor& level_map,
                                  Rng& rng) {
  const Shape s = clean.shape();
  const Shape m = level_map.shape();
  const bool shared = m == Shape{1, 1, s.h, s.w};
  if (!shared && !(m == s))
    fail(ErrorKind::shape, "awgn.map_shape",
         "noise map " + m.str() + " incompatible with image " + s.str());
  NoisyImage out{Tensor(s), Tensor(s)};
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x, ++i) {
          const double sigma = shared ? level_map.at(0, 0, y, x) : level_map[i];
          out.sigma_map[i] = sigma;
          out.noisy[i] = clean[i] + sigma * rng.normal() / kPixelScale;
        }
  return out;
}

NoisyImage uniform_awgn(const Tensor& clean, double sigma, Rng& rng) {
  NoiseSpec{NoiseSpec::Kind::uniform, sigma, 0.0, 0}.validate();
  const Shape s = clean.shape();
  return spatially_variant_awgn(clean, Tensor({1, 1, s.h, s.w}, sigma), rng);
}

NoisyImage synthesize(const Tensor& clean, const NoiseSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  if (spec.kind == NoiseSpec::Kind::uniform)
    return uniform_awgn(clean, spec.sigma, rng);
  const Shape s = clean.shape();
  return spatially_variant_awgn(
      clean, noise_level_map(peaks_field(s.h, s.w), spec.lambda), rng);
}

}  // namespace dcbd::noise
