#include "dcbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dcbd/error.hpp"

namespace dcbd::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> taps(kWindow);
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w,
                                 const std::vector<double>& taps) {
  const int ho = h - kWindow + 1, wo = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * in[y * w + x + k];
      rows[y * wo + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows[(y + k) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}

double ssim_plane(const double* a, const double* b, int h, int w, double peak,
                  const std::vector<double>& taps) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> va(a, a + n), vb(b, b + n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(va, h, w, taps);
  const auto mu_b = filter_valid(vb, h, w, taps);
  const auto e_aa = filter_valid(aa, h, w, taps);
  const auto e_bb = filter_valid(bb, h, w, taps);
  const auto e_ab = filter_valid(ab, h, w, taps);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

std::string fmt_db(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_ssim(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  if (!(peak > 0.0)) fail(ErrorKind::contract, "psnr.peak", "peak must be > 0");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  if (s.h < kWindow || s.w < kWindow)
    fail(ErrorKind::shape, "ssim.small",
         "ssim needs images of at least 11x11, got " + s.str());
  const auto taps = gaussian_taps();
  double total = 0.0;
  for (int p = 0; p < s.n * s.c; ++p)
    total += ssim_plane(a.raw() + p * s.plane(), b.raw() + p * s.plane(), s.h,
                        s.w, peak, taps);
  return total / (s.n * s.c);
}

Tensor quantize_8bit(const Tensor& img) {
  Tensor out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    out[i] = std::floor(v * 255.0 + 0.5) / 255.0;
  }
  return out;
}

void MetricReport::summarize() {
  noisy_psnr = noisy_ssim = psnr_db = ssim = 0.0;
  if (images.empty()) return;
  for (const auto& s : images) {
    noisy_psnr += s.noisy_psnr;
    noisy_ssim += s.noisy_ssim;
    psnr_db += s.denoised_psnr;
    ssim += s.denoised_ssim;
  }
  const double n = static_cast<double>(images.size());
  noisy_psnr /= n;
  noisy_ssim /= n;
  psnr_db /= n;
  ssim /= n;
}

std::string format_table(const MetricReport& report) {
  std::size_t name_w = 5;
  for (const auto& s : report.images) name_w = std::max(name_w, s.name.size());
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %12s  %12s  %12s  %12s\n",
                static_cast<int>(name_w), "image", "noisy_psnr", "noisy_ssim",
                "psnr", "ssim");
  out += line;
  auto row = [&](const std::string& name, double np, double ns, double dp,
                 double ds) {
    std::snprintf(line, sizeof line, "%-*s  %12s  %12s  %12s  %12s\n",
                  static_cast<int>(name_w), name.c_str(), fmt_db(np).c_str(),
                  fmt_ssim(ns).c_str(), fmt_db(dp).c_str(),
                  fmt_ssim(ds).c_str());
    out += line;
  };
  for (const auto& s : report.images)
    row(s.name, s.noisy_psnr, s.noisy_ssim, s.denoised_psnr, s.denoised_ssim);
  row("mean", report.noisy_psnr, report.noisy_ssim, report.psnr_db,
      report.ssim);
  return out;
}

std::string format_records(const MetricReport& report) {
  std::string out;
  for (const auto& s : report.images)
    out += "image=" + s.name + " noisy_psnr=" + fmt_db(s.noisy_psnr) +
           " noisy_ssim=" + fmt_ssim(s.noisy_ssim) +
           " psnr=" + fmt_db(s.denoised_psnr) +
           " ssim=" + fmt_ssim(s.denoised_ssim) + "\n";
  out += "mean noisy_psnr=" + fmt_db(report.noisy_psnr) +
         " noisy_ssim=" + fmt_ssim(report.noisy_ssim) +
         " psnr=" + fmt_db(report.psnr_db) + " ssim=" + fmt_ssim(report.ssim) +
         "\n";
  return out;
}

}  // namespace dcbd::metrics
