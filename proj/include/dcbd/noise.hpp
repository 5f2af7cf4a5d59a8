#pragma once

#include <cstdint>

#include "dcbd/rng.hpp"
#include "dcbd/tensor.hpp"

namespace dcbd::noise {

/// Noise levels are expressed on the 8-bit scale; images live in [0, 1].
inline constexpr double kMaxSigma = 75.0;
inline constexpr double kPixelScale = 255.0;

struct NoiseSpec {
  enum class Kind { uniform, variant };

  Kind kind = Kind::uniform;
  double sigma = 25.0;   // uniform kind
  double lambda = 50.0;  // variant kind, peak noise level of the map
  std::uint64_t seed = 0;

  void validate() const;
};

/// Coordinate square the peaks surface is sampled on.
struct PeaksDomain {
  double lo = -3.0;
  double hi = 3.0;
};

/// The "peaks" bivariate surface at (m, n).
double peaks(double m, double n);

/// Samples the peaks surface on an h x w grid. Columns map to m and rows to
/// n, each spanning the domain end to end (a single sample sits at the
/// centre).
Tensor peaks_field(int h, int w, PeaksDomain domain = {});

/// lambda * (p - min p) / (max p - min p).
Tensor noise_level_map(const Tensor& p, double lambda);

struct NoisyImage {
  Tensor noisy;
  Tensor sigma_map;  // per-pixel sigma on the 8-bit scale, shaped like noisy
};

/// noisy = clean + (M * D) / 255 with D standard normal. M may be 1 x 1 x h x w
/// (shared by every sample and channel) or match the image shape. Samples are
/// drawn in row-major NCHW order. Values are not clipped.
NoisyImage spatially_variant_awgn(const Tensor& clean, const Tensor& level_map,
                                  Rng& rng);

/// Spatially invariant case, sigma in [0, 75].
NoisyImage uniform_awgn(const Tensor& clean, double sigma, Rng& rng);

/// Applies `spec` to `clean` with a generator seeded from spec.seed.
NoisyImage synthesize(const Tensor& clean, const NoiseSpec& spec);

}  // namespace dcbd::noise
