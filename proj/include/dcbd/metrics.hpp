#pragma once

#include <string>
#include <vector>

#include "dcbd/tensor.hpp"

namespace dcbd::metrics {

/// 10 log10(peak^2 / MSE). Returns +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak);

/// Mean SSIM over the valid positions of an 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03). Multi-channel images average the
/// per-channel SSIM; batches average over samples.
double ssim(const Tensor& a, const Tensor& b, double peak);

/// Clips to [0, 1] and snaps to the 8-bit grid (round half up).
Tensor quantize_8bit(const Tensor& img);

struct ImageScore {
  std::string name;
  double noisy_psnr = 0.0;
  double noisy_ssim = 0.0;
  double denoised_psnr = 0.0;
  double denoised_ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> images;
  double noisy_psnr = 0.0;
  double noisy_ssim = 0.0;
  double psnr_db = 0.0;  // mean denoised PSNR
  double ssim = 0.0;     // mean denoised SSIM

  /// Recomputes the averages from `images`.
  void summarize();
};

/// Aligned text table with one row per image and a closing mean row.
std::string format_table(const MetricReport& report);
/// One `key=value` record per image plus a `mean` record.
std::string format_records(const MetricReport& report);

}  // namespace dcbd::metrics
