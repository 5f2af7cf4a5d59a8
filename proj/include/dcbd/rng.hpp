#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dcbd {

/// Seedable generator with platform-independent derived distributions:
/// uniforms come from the top 53 bits of mt19937_64 and normals from the
/// Box-Muller transform, so every stream is bit-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, bound), rejection-sampled.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal.
  double normal();

  /// Full generator state, including any cached normal deviate.
  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent stream seed from a parent seed and a stream index
/// (splitmix64 finalizer).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dcbd
