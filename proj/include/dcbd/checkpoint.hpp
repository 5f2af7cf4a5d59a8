#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcbd/model.hpp"
#include "dcbd/optim.hpp"
#include "dcbd/rng.hpp"

namespace dcbd::ckpt {

inline constexpr std::uint16_t kFormatVersion = 1;

/// Binary layout (little-endian):
///   "DCBD" | u16 version | u32 entry count | entries... | u64 checksum
/// entry: u16 name length | name | u8 dtype | u8 rank | rank x u64 dims |
///        payload
/// dtype 0 is f64 (rank 4, NCHW), 1 is u64 (rank 1), 2 is raw bytes
/// (rank 1). The checksum is FNV-1a 64 over every preceding byte.
class Archive {
 public:
  void put_tensor(std::string name, const Tensor& t);
  void put_u64(std::string name, std::vector<std::uint64_t> values);
  void put_text(std::string name, std::string text);

  bool contains(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  const std::vector<std::uint64_t>& u64(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<std::uint8_t> encode() const;
  static Archive decode(std::span<const std::uint8_t> bytes);

 private:
  struct Entry {
    std::string name;
    std::uint8_t dtype = 0;
    Tensor f64;
    std::vector<std::uint64_t> u64;
    std::string bytes;
  };
  const Entry& find(const std::string& name, std::uint8_t dtype) const;

  std::vector<Entry> entries_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Optimizer and loop state needed to continue training bit-exactly.
struct TrainingState {
  std::uint64_t iteration = 0;
  optim::AdamState adam;
  Rng rng;
};

struct Checkpoint {
  model::Model model;
  std::optional<TrainingState> training;
};

Archive to_archive(const model::Model& model, const TrainingState* training);
Checkpoint from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path,
                     const model::Model& model,
                     const TrainingState* training = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcbd::ckpt
