#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcbd/rng.hpp"
#include "dcbd/tensor.hpp"

namespace dcbd::data {

/// Paths listed one per line; blank lines and `#` comments are ignored.
/// Relative paths resolve against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(
    const std::filesystem::path& manifest);

struct Patch {
  Tensor pixels;
  int y = 0;
  int x = 0;
};

struct PatchExtraction {
  std::vector<Patch> patches;
  std::vector<std::string> warnings;
};

/// `count` size x size crops at uniformly random offsets. An image smaller
/// than the patch yields no patches and a warning.
PatchExtraction extract_patches(const Tensor& image, int size, int count,
                                Rng& rng);

/// The eight symmetries of the square. Rotations are counter-clockwise.
enum class Dihedral {
  identity,
  rot90,
  rot180,
  rot270,
  flip_h,  // mirror left-right
  flip_v,  // mirror top-bottom
  transpose,
  anti_transpose,
};

inline constexpr Dihedral kAugmentations[] = {
    Dihedral::identity, Dihedral::rot90,  Dihedral::rot180,
    Dihedral::rot270,   Dihedral::flip_h, Dihedral::flip_v};

Tensor augment(const Tensor& patch, Dihedral op);
Dihedral inverse(Dihedral op);

/// Procedural test image: gradients, gratings and flat shapes, quantized to
/// the 8-bit grid.
Tensor synthetic_texture(int h, int w, int channels, Rng& rng);

struct NoisePolicy {
  enum class Kind {
    uniform_range,  // sigma ~ U[sigma_min, sigma_max] per patch
    fixed,          // constant sigma
    variant,        // peaks-shaped map with peak level lambda
  };
  Kind kind = Kind::uniform_range;
  double sigma_min = 0.0;
  double sigma_max = 75.0;
  double sigma = 25.0;
  double lambda = 50.0;
};

struct DatasetConfig {
  int patch_size = 180;
  int patches_per_image = 1;
  int batch = 16;
  int channels = 1;
  bool augment = true;
  NoisePolicy noise;
  std::uint64_t seed = 0;
};

/// Noise level maps are normalized to sigma / 75 so they share units with
/// the estimator output.
struct Batch {
  Tensor noisy;
  Tensor clean;
  Tensor sigma_map;
};

/// Deterministic patch stream. Each epoch visits images x patches_per_image
/// patch slots in a seeded shuffle; every slot draws a fresh crop,
/// augmentation and noise from a generator derived from (seed, epoch,
/// slot). The incomplete tail batch of an epoch is dropped.
class Dataset {
 public:
  Dataset(std::vector<Tensor> images, DatasetConfig config);
  static Dataset from_manifest(const std::filesystem::path& manifest,
                               DatasetConfig config);

  const DatasetConfig& config() const { return config_; }
  std::size_t image_count() const { return images_.size(); }
  std::size_t patches_per_epoch() const;
  std::size_t batches_per_epoch() const;
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Batch number `iteration` of the stream; a pure function of it.
  Batch batch_at(std::uint64_t iteration) const;

 private:
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;

  std::vector<Tensor> images_;
  DatasetConfig config_;
  std::vector<std::string> warnings_;
};

/// Sequential cursor over a dataset.
class DatasetIterator {
 public:
  explicit DatasetIterator(const Dataset& data, std::uint64_t start = 0)
      : data_(&data), next_(start) {}
  Batch next() { return data_->batch_at(next_++); }
  std::uint64_t position() const { return next_; }

 private:
  const Dataset* data_;
  std::uint64_t next_;
};

}  // namespace dcbd::data
