#include <doctest.h>

#include <cmath>

#include "dcbd/metrics.hpp"
#include "dcbd/noise.hpp"
#include "oracles.hpp"

using namespace dcbd;

TEST_CASE("psnr of a constant 8-bit difference of 10") {
  Rng rng(1);
  Tensor a({1, 1, 16, 16});
  for (auto& v : a.data()) v = std::floor(rng.uniform(0, 200));
  Tensor b = a;
  for (auto& v : b.data()) v += 10.0;
  CHECK(std::abs(metrics::psnr(a, b, 255.0) - 28.131) < 1e-3);
  CHECK(metrics::psnr(a, b, 255.0) == doctest::Approx(10 * std::log10(65025.0 / 100.0)).epsilon(1e-14));
  Tensor a1 = a, b1 = b;
  a1.scale_inplace(1 / 255.0);
  b1.scale_inplace(1 / 255.0);
  CHECK(std::abs(metrics::psnr(a1, b1, 1.0) - 28.131) < 1e-3);
}

TEST_CASE("psnr: identity gives infinity, symmetry") {
  Rng rng(2);
  const Tensor a = oracle::random_tensor({1, 3, 8, 8}, rng, 0, 1);
  const Tensor b = oracle::random_tensor({1, 3, 8, 8}, rng, 0, 1);
  CHECK(std::isinf(metrics::psnr(a, a, 1.0)));
  CHECK(metrics::psnr(a, b, 1.0) == metrics::psnr(b, a, 1.0));
}

TEST_CASE("psnr falls as noise variance grows") {
  Rng rng(3);
  const Tensor clean = oracle::random_tensor({1, 1, 64, 64}, rng, 0, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double previous = INFINITY;
    for (double sigma : {5.0, 15.0, 25.0, 50.0, 75.0}) {
      Rng g(seed);
      const double p = metrics::psnr(noise::uniform_awgn(clean, sigma, g).noisy, clean, 1.0);
      CHECK(p < previous);
      previous = p;
    }
  }
}

TEST_CASE("ssim: identity, offsets and bounds") {
  Rng rng(4);
  const Tensor a = oracle::random_tensor({1, 1, 32, 32}, rng, 0, 1);
  CHECK(metrics::ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  Tensor b = a;
  for (auto& v : b.data()) v += 0.5;
  CHECK(metrics::ssim(a, b, 1.0) < 1.0);
  for (int i = 0; i < 10; ++i) {
    const Tensor x = oracle::random_tensor({1, 1, 16, 16}, rng, 0, 1);
    Tensor y = x;
    for (auto& v : y.data()) v = 1.0 - v;  // anti-correlated
    const double s = metrics::ssim(x, y, 1.0);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
  CHECK(oracle::error_code_of([] { metrics::ssim(Tensor({1, 1, 8, 8}), Tensor({1, 1, 8, 8}), 1.0); }) == "ssim.small");
}

TEST_CASE("ssim matches the windowed-loop oracle on random pairs") {
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Tensor a = oracle::random_tensor({1, 1, 32, 32}, rng, 0, 1);
    Tensor b = a;
    for (auto& v : b.data()) v += rng.uniform(-0.2, 0.2);
    worst = std::max(worst, std::abs(metrics::ssim(a, b, 1.0) - oracle::ssim(a, b, 1.0)));
  }
  CHECK(worst < 1e-10);
  const Tensor c1 = oracle::random_tensor({2, 3, 20, 24}, rng, 0, 255);
  const Tensor c2 = oracle::random_tensor({2, 3, 20, 24}, rng, 0, 255);
  CHECK(std::abs(metrics::ssim(c1, c2, 255.0) - oracle::ssim(c1, c2, 255.0)) < 1e-10);
}

TEST_CASE("ssim is unchanged by reversing the rows of both images") {
  Rng rng(6);
  const Tensor a = oracle::random_tensor({1, 1, 24, 20}, rng, 0, 1);
  const Tensor b = oracle::random_tensor({1, 1, 24, 20}, rng, 0, 1);
  auto reverse_rows = [](const Tensor& t) {
    Tensor r(t.shape());
    for (int y = 0; y < t.shape().h; ++y)
      for (int x = 0; x < t.shape().w; ++x) r.at(0, 0, y, x) = t.at(0, 0, t.shape().h - 1 - y, x);
    return r;
  };
  CHECK(std::abs(metrics::ssim(a, b, 1.0) - metrics::ssim(reverse_rows(a), reverse_rows(b), 1.0)) < 1e-13);
  CHECK(metrics::ssim(a, b, 1.0) == metrics::ssim(a, b, 1.0));
}

TEST_CASE("quantize_8bit clips and snaps") {
  const Tensor t({1, 1, 1, 5}, std::vector<double>{-0.2, 0.0, 0.5, 1.0 / 255.0 * 3.49, 1.7});
  const Tensor q = metrics::quantize_8bit(t);
  CHECK(q[0] == 0.0);
  CHECK(q[1] == 0.0);
  CHECK(q[2] == 128.0 / 255.0);
  CHECK(q[3] == 3.0 / 255.0);
  CHECK(q[4] == 1.0);
}

TEST_CASE("report formatting") {
  metrics::MetricReport r;
  r.images.push_back({"a.pgm", 20.0, 0.5, 30.0, 0.9});
  r.images.push_back({"b.pgm", 22.0, 0.7, 32.0, 0.8});
  r.summarize();
  CHECK(r.psnr_db == 31.0);
  CHECK(r.noisy_psnr == 21.0);
  CHECK(r.ssim == doctest::Approx(0.85));
  const std::string table = metrics::format_table(r);
  CHECK(table.find("a.pgm") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
  const std::string rec = metrics::format_records(r);
  CHECK(std::count(rec.begin(), rec.end(), '\n') == 3);
  CHECK(rec.find("image=b.pgm") != std::string::npos);
}
