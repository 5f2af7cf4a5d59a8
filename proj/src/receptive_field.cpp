#include "dcbd/receptive_field.hpp"

#include "dcbd/error.hpp"

namespace dcbd::rf {

RfTrace trace(std::span<const RfStep> schedule, int initial_rf,
              int initial_jump) {
  if (initial_rf < 1 || initial_jump < 1)
    fail(ErrorKind::contract, "rf.initial", "initial rf and jump must be >= 1");
  RfTrace t;
  int rf = initial_rf, jump = initial_jump;
  for (const RfStep& s : schedule) {
    if (s.kernel < 1 || s.dilation < 1 || s.stride < 1)
      fail(ErrorKind::contract, "rf.step", "kernel, dilation and stride must be >= 1");
    rf += (s.kernel - 1) * s.dilation * jump;
    jump *= s.stride;
    if (s.kind == RfStep::Kind::conv) t.per_conv.push_back(rf);
  }
  t.final_rf = rf;
  t.final_jump = jump;
  return t;
}

std::vector<int> receptive_field(std::span<const RfStep> schedule,
                                 int initial_rf, int initial_jump) {
  return trace(schedule, initial_rf, initial_jump).per_conv;
}

}  // namespace dcbd::rf
