#pragma once

#include <array>
#include <span>
#include <vector>

namespace dcbd::rf {

/// One layer of a receptive-field schedule. Pooling contributes
/// (k - 1) * d * jump and multiplies the jump by its stride but is not
/// reported. Upsampling is kernel 1, stride 1 and leaves both untouched.
struct RfStep {
  enum class Kind { conv, pool, upsample };
  Kind kind = Kind::conv;
  int kernel = 3;
  int dilation = 1;
  int stride = 1;

  static RfStep conv(int dilation = 1) { return {Kind::conv, 3, dilation, 1}; }
  static RfStep pool() { return {Kind::pool, 2, 1, 2}; }
  static RfStep upsample() { return {Kind::upsample, 1, 1, 1}; }
};

struct RfTrace {
  std::vector<int> per_conv;  // receptive field after each conv
  int final_rf = 0;
  int final_jump = 0;
};

/// rf <- rf + (k - 1) * d * jump; jump <- jump * s.
RfTrace trace(std::span<const RfStep> schedule, int initial_rf,
              int initial_jump);

/// Receptive field after each conv layer of `schedule`.
std::vector<int> receptive_field(std::span<const RfStep> schedule,
                                 int initial_rf, int initial_jump);

/// Published per-layer receptive fields the network layout is checked
/// against.
inline constexpr std::array<int, 12> kReferenceUpper = {
    30, 34, 38, 48, 56, 74, 90, 106, 122, 138, 154, 170};
inline constexpr std::array<int, 12> kReferenceLower = {
    30, 38, 50, 66, 86, 110, 130, 146, 158, 166, 170, 174};

}  // namespace dcbd::rf
