#include "dcbd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dcbd/error.hpp"
#include "dcbd/image_io.hpp"
#include "dcbd/noise.hpp"

namespace dcbd::data {

std::vector<std::filesystem::path> read_manifest(
    const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorKind::io, "io.open", "cannot open " + manifest.string());
  std::vector<std::filesystem::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::filesystem::path p = line.substr(first, last - first + 1);
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(std::move(p));
  }
  if (paths.empty())
    fail(ErrorKind::config, "manifest.empty",
         "manifest " + manifest.string() + " lists no images");
  return paths;
}

PatchExtraction extract_patches(const Tensor& image, int size, int count,
                                Rng& rng) {
  const Shape s = image.shape();
  PatchExtraction out;
  if (size < 1) fail(ErrorKind::config, "patch.size", "patch size must be >= 1");
  if (s.h < size || s.w < size) {
    out.warnings.push_back("image " + s.str() + " is smaller than patch " +
                           std::to_string(size) + "; skipped");
    return out;
  }
  for (int i = 0; i < count; ++i) {
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.h - size + 1)));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.w - size + 1)));
    out.patches.push_back({io::crop(image, y, x, size, size), y, x});
  }
  return out;
}

Tensor augment(const Tensor& patch, Dihedral op) {
  const Shape s = patch.shape();
  const bool swaps = op == Dihedral::rot90 || op == Dihedral::rot270 ||
                     op == Dihedral::transpose ||
                     op == Dihedral::anti_transpose;
  if (swaps && s.h != s.w)
    fail(ErrorKind::shape, "augment.square",
         "rotations need a square patch, got " + s.str());
  Tensor out(s);
  const int h = s.h, w = s.w;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sy = y, sx = x;
          switch (op) {
            case Dihedral::identity: break;
            case Dihedral::rot90: sy = x; sx = w - 1 - y; break;
            case Dihedral::rot180: sy = h - 1 - y; sx = w - 1 - x; break;
            case Dihedral::rot270: sy = h - 1 - x; sx = y; break;
            case Dihedral::flip_h: sx = w - 1 - x; break;
            case Dihedral::flip_v: sy = h - 1 - y; break;
            case Dihedral::transpose: sy = x; sx = y; break;
            case Dihedral::anti_transpose: sy = w - 1 - x; sx = h - 1 - y; break;
          }
          out.at(n, c, y, x) = patch.at(n, c, sy, sx);
        }
  return out;
}

Dihedral inverse(Dihedral op) {
  switch (op) {
    case Dihedral::rot90: return Dihedral::rot270;
    case Dihedral::rot270: return Dihedral::rot90;
    default: return op;
  }
}

Tensor synthetic_texture(int h, int w, int channels, Rng& rng) {
  Tensor img({1, channels, h, w});
  struct Grating {
    double fx, fy, phase, amp;
  };
  struct Shape2 {
    bool disk;
    double cy, cx, ry, rx, level;
  };
  for (int c = 0; c < channels; ++c) {
    const double base = rng.uniform(0.25, 0.75);
    const double gy = rng.uniform(-0.25, 0.25), gx = rng.uniform(-0.25, 0.25);
    std::vector<Grating> gratings(2 + rng.below(2));
    for (auto& g : gratings) {
      const double cycles = rng.uniform(2.0, 12.0);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      g.fx = cycles * std::cos(angle) / w;
      g.fy = cycles * std::sin(angle) / h;
      g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      g.amp = rng.uniform(0.04, 0.14);
    }
    std::vector<Shape2> shapes(3 + rng.below(4));
    for (auto& sh : shapes) {
      sh.disk = rng.below(2) == 0;
      sh.cy = rng.uniform(0.0, h);
      sh.cx = rng.uniform(0.0, w);
      sh.ry = rng.uniform(0.08, 0.3) * h;
      sh.rx = rng.uniform(0.08, 0.3) * w;
      sh.level = rng.uniform(-0.3, 0.3);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = base + gy * (y / static_cast<double>(h) - 0.5) +
                   gx * (x / static_cast<double>(w) - 0.5);
        for (const auto& g : gratings)
          v += g.amp * std::sin(2.0 * std::numbers::pi * (g.fx * x + g.fy * y) + g.phase);
        for (const auto& sh : shapes) {
          const double dy = (y - sh.cy) / sh.ry, dx = (x - sh.cx) / sh.rx;
          const bool inside = sh.disk ? dy * dy + dx * dx <= 1.0
                                      : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
          if (inside) v += sh.level;
        }
        img.at(0, c, y, x) = std::clamp(v, 0.02, 0.98);
      }
  }
  for (double& v : img.data()) v = std::floor(v * 255.0 + 0.5) / 255.0;
  return img;
}

Dataset::Dataset(std::vector<Tensor> images, DatasetConfig config)
    : config_(config) {
  if (config_.batch < 1)
    fail(ErrorKind::config, "data.batch", "batch must be >= 1");
  if (config_.patches_per_image < 1)
    fail(ErrorKind::config, "data.patches", "patches_per_image must be >= 1");
  if (config_.patch_size % 4 != 0)
    fail(ErrorKind::config, "data.patch_size",
         "patch size must be a multiple of 4");
  for (auto& img : images) {
    if (img.shape().h < config_.patch_size || img.shape().w < config_.patch_size) {
      warnings_.push_back("image " + img.shape().str() +
                          " is smaller than patch " +
                          std::to_string(config_.patch_size) + "; skipped");
      continue;
    }
    images_.push_back(io::match_channels(img, config_.channels));
  }
  if (images_.empty())
    fail(ErrorKind::config, "data.empty", "no usable training images");
  if (batches_per_epoch() == 0)
    fail(ErrorKind::config, "data.batch",
         "batch is larger than the number of patches per epoch");
}

Dataset Dataset::from_manifest(const std::filesystem::path& manifest,
                               DatasetConfig config) {
  std::vector<Tensor> images;
  for (const auto& p : read_manifest(manifest)) images.push_back(io::read_image(p));
  return Dataset(std::move(images), config);
}

std::size_t Dataset::patches_per_epoch() const {
  return images_.size() * static_cast<std::size_t>(config_.patches_per_image);
}

std::size_t Dataset::batches_per_epoch() const {
  return patches_per_epoch() / static_cast<std::size_t>(config_.batch);
}

std::vector<std::size_t> Dataset::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(patches_per_epoch());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(split_seed(config_.seed, 2 * epoch));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Batch Dataset::batch_at(std::uint64_t iteration) const {
  const std::uint64_t bpe = batches_per_epoch();
  const std::uint64_t epoch = iteration / bpe;
  const std::size_t first = static_cast<std::size_t>(iteration % bpe) * config_.batch;
  const auto order = epoch_order(epoch);
  const std::uint64_t epoch_seed = split_seed(config_.seed, 2 * epoch + 1);

  const int p = config_.patch_size, c = config_.channels;
  Batch b{Tensor({config_.batch, c, p, p}), Tensor({config_.batch, c, p, p}),
          Tensor({config_.batch, c, p, p})};
  const std::size_t len = static_cast<std::size_t>(c) * p * p;
  for (int j = 0; j < config_.batch; ++j) {
    const std::size_t slot = order[first + j];
    Rng rng(split_seed(epoch_seed, slot));
    const Tensor& image = images_[slot / config_.patches_per_image];
    Tensor clean = extract_patches(image, p, 1, rng).patches.front().pixels;
    if (config_.augment)
      clean = augment(clean, kAugmentations[rng.below(std::size(kAugmentations))]);

    noise::NoisyImage noisy;
    const NoisePolicy& np = config_.noise;
    switch (np.kind) {
      case NoisePolicy::Kind::uniform_range:
        noisy = noise::uniform_awgn(clean, rng.uniform(np.sigma_min, np.sigma_max), rng);
        break;
      case NoisePolicy::Kind::fixed:
        noisy = noise::uniform_awgn(clean, np.sigma, rng);
        break;
      case NoisePolicy::Kind::variant: {
        Tensor level = noise::noise_level_map(noise::peaks_field(p, p), np.lambda);
        level = augment(level, kAugmentations[rng.below(std::size(kAugmentations))]);
        noisy = noise::spatially_variant_awgn(clean, level, rng);
        break;
      }
    }
    std::copy_n(clean.raw(), len, b.clean.raw() + j * len);
    std::copy_n(noisy.noisy.raw(), len, b.noisy.raw() + j * len);
    for (std::size_t i = 0; i < len; ++i)
      b.sigma_map[j * len + i] = noisy.sigma_map[i] / noise::kMaxSigma;
  }
  return b;
}

}  // namespace dcbd::data
