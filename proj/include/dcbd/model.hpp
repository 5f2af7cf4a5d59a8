#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcbd/autograd.hpp"
#include "dcbd/nn_ops.hpp"
#include "dcbd/parameters.hpp"
#include "dcbd/receptive_field.hpp"
#include "dcbd/rng.hpp"

namespace dcbd::model {

enum class LayerKind { conv, pool, upsample, activation, bn, skip_source, skip_join };

/// One entry of a sub-network layout. Convs carry their own out-channel
/// count; a skip join names the list index of its skip source.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 3;
  int dilation = 1;
  int channels = 0;
  nn::Activation activation = nn::Activation::relu;
  std::optional<int> skip_partner;
};

struct ModelConfig {
  int channels = 64;
  int input_channels = 1;
  bool use_skip = true;
  bool use_bn = true;
  bool use_bias = true;
  double init_gain = 1.0;
  std::uint64_t seed = 0;

  std::vector<LayerSpec> estimator;
  std::vector<LayerSpec> upper;
  std::vector<LayerSpec> lower;

  /// Standard layout for the given widths. `use_skip` and `use_bn` are
  /// honoured at build time, so the layer lists never change with them.
  static ModelConfig standard(int input_channels = 1, int channels = 64);

  /// Throws a config error when a structural invariant fails.
  void validate() const;

  /// Scalar fields as `key=value` lines; the layer lists are implied.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

/// Receptive-field schedule realized by a layer list.
std::vector<rf::RfStep> rf_schedule(const std::vector<LayerSpec>& layers);

/// Gain-scaled orthogonal matrix reshaped to `shape`: rows are
/// out-channels, columns in * k * k. Built from the QR factorization of a
/// Gaussian sample with R's diagonal signs folded into Q.
Tensor orthogonal_init(const Shape& shape, double gain, Rng& rng);

template <class V>
struct ModelOutput {
  V denoised;
  V sigma_map;  // in [0, 1], read as sigma / 75
};

/// Noise estimator plus two parallel branches (u-shaped and dilated) fused
/// by a final conv. The network predicts the clean image directly.
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParameterStore& parameters() const { return params_; }
  ParameterStore& parameters() { return params_; }
  /// Batch-norm running statistics, in layer order.
  const std::vector<nn::BatchNormState>& norm_states() const { return norms_; }
  std::vector<nn::BatchNormState>& norm_states() { return norms_; }
  const std::vector<std::string>& norm_names() const { return norm_names_; }

  std::size_t parameter_count() const { return params_.element_count(); }

  /// Places every parameter on `tape` in store order.
  std::vector<Var> bind(Tape& tape, bool requires_grad = true) const;

  /// Differentiable forward. Train mode updates the running statistics.
  ModelOutput<Var> forward(std::span<const Var> params, Var noisy,
                           nn::NormMode mode);

  /// Eval-mode forward on plain tensors. f32 rounds parameters and every
  /// intermediate through float storage.
  ModelOutput<Tensor> infer(const Tensor& noisy,
                            Precision precision = Precision::f64) const;

  /// Compiled layer with indices into the parameter and norm stores.
  struct Step {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    LayerKind kind = LayerKind::conv;
    std::size_t weight = npos, bias = npos;
    std::size_t gamma = npos, beta = npos, norm = npos;
    nn::ConvGeometry geometry;
    nn::Activation activation = nn::Activation::relu;
    int slot = -1;
  };

 private:
  void compile();

  ModelConfig config_;
  ParameterStore params_;
  std::vector<nn::BatchNormState> norms_;
  std::vector<std::string> norm_names_;
  std::vector<Step> estimator_, upper_, lower_;
  std::size_t fuse_weight_ = 0, fuse_bias_ = 0;
};

/// Throws a shape error unless h and w are positive multiples of 4.
void require_model_size(const Shape& s);

}  // namespace dcbd::model
