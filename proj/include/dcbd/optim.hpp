#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcbd/parameters.hpp"

namespace dcbd::optim {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> first;   // mirrors the parameter store
  std::vector<Tensor> second;
  std::uint64_t step = 0;

  static AdamState for_parameters(const ParameterStore& params, double lr);
};

/// One bias-corrected Adam update. A null gradient counts as zero. Throws
/// a numeric error naming the parameter when a gradient is not finite.
void adam_step(ParameterStore& params, std::span<const Tensor* const> grads,
               AdamState& state);

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_global_norm(std::span<Tensor* const> grads, double max_norm);

struct Schedule {
  enum class Kind { step_decay, cosine };
  Kind kind = Kind::step_decay;
  double initial = 1e-4;
  double minimum = 1e-6;              // cosine floor
  std::uint64_t decay_every = 100000;  // step decay period
  double decay_factor = 0.5;
  std::uint64_t total_steps = 700000;  // cosine horizon

  static Schedule step_decay() { return {}; }
  static Schedule cosine(std::uint64_t total_steps) {
    Schedule s;
    s.kind = Kind::cosine;
    s.initial = 2e-4;
    s.total_steps = total_steps;
    return s;
  }
};

/// Learning rate at iteration t. Cosine mode clamps to the floor past the
/// horizon.
double lr_at(const Schedule& schedule, std::uint64_t t);

}  // namespace dcbd::optim
