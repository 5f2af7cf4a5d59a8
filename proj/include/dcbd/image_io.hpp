#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcbd/tensor.hpp"

namespace dcbd::io {

// Images are 1 x C x H x W tensors (C = 1 or 3) with values in [0, 1].

/// Decodes binary PGM (P5) or PPM (P6) with maxval 255.
Tensor decode_pnm(std::span<const std::uint8_t> bytes);
/// Encodes as P5 (one channel) or P6 (three channels) after clipping to
/// [0, 1] and rounding half up to 8 bits.
std::vector<std::uint8_t> encode_pnm(const Tensor& image);

Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image);

/// Writes a map with values in [0, 1] as a 16-bit P5 (one channel) or P6
/// (three channels, interleaved) file.
void write_map16(const std::filesystem::path& path, const Tensor& map);

/// Rec. 601 luma of a three-channel image; one-channel input is returned
/// unchanged.
Tensor to_grayscale(const Tensor& image);
/// Replicates or converts channels so the result has `channels` planes.
Tensor match_channels(const Tensor& image, int channels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

/// Mirror padding (edge pixel not repeated) on each side.
Tensor pad_reflect(const Tensor& image, int top, int bottom, int left,
                   int right);
Tensor crop(const Tensor& image, int top, int left, int h, int w);

}  // namespace dcbd::io
