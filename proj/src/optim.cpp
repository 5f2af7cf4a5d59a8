#include "dcbd/optim.hpp"

#include <cmath>
#include <numbers>

#include "dcbd/error.hpp"

namespace dcbd::optim {

AdamState AdamState::for_parameters(const ParameterStore& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.first.emplace_back(p.value.shape());
    s.second.emplace_back(p.value.shape());
  }
  return s;
}

void adam_step(ParameterStore& params, std::span<const Tensor* const> grads,
               AdamState& state) {
  if (grads.size() != params.size() || state.first.size() != params.size())
    fail(ErrorKind::contract, "adam.size",
         "gradients and moments must match the parameter store");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor* g = grads[k];
    if (g == nullptr) continue;
    require_same_shape(g->shape(), params[k].value.shape(), "adam_step");
    if (!g->all_finite())
      fail(ErrorKind::numeric, "adam.non_finite",
           "non-finite gradient for parameter " + params[k].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].value;
    Tensor& m = state.first[k];
    Tensor& v = state.second[k];
    const Tensor* g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g != nullptr ? (*g)[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double clip_global_norm(std::span<Tensor* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor* g : grads)
    if (g != nullptr)
      for (double v : g->data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* g : grads)
      if (g != nullptr) g->scale_inplace(s);
  }
  return norm;
}

double lr_at(const Schedule& schedule, std::uint64_t t) {
  if (schedule.kind == Schedule::Kind::step_decay) {
    if (schedule.decay_every == 0)
      fail(ErrorKind::config, "schedule.period", "decay period must be > 0");
    return schedule.initial *
           std::pow(schedule.decay_factor,
                    static_cast<double>(t / schedule.decay_every));
  }
  if (schedule.total_steps == 0 || t >= schedule.total_steps)
    return schedule.minimum;
  const double progress =
      static_cast<double>(t) / static_cast<double>(schedule.total_steps);
  return schedule.minimum + (schedule.initial - schedule.minimum) *
                                (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

}  // namespace dcbd::optim
