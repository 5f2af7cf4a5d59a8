#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcbd/tensor.hpp"

namespace dcbd {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered collection of named tensors. Order is fixed at construction and
/// defines the layout of gradients, optimizer moments and checkpoints.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Index of `name`; throws a contract error when absent.
  std::size_t index(const std::string& name) const;
  /// Total number of scalar entries.
  std::size_t element_count() const;

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace dcbd
