#pragma once

#include <optional>

#include "dcbd/autograd.hpp"
#include "dcbd/tensor.hpp"

namespace dcbd::nn {

/// Geometry of a square 2-D convolution. Negative padding means "same as
/// dilation", which preserves spatial size for 3x3 kernels at stride 1.
struct ConvGeometry {
  int dilation = 1;
  int stride = 1;
  int padding = -1;

  int resolved_padding() const { return padding < 0 ? dilation : padding; }
};

/// Weights are (out, in, k, k); bias is (1, out, 1, 1) or empty.
struct ConvParams {
  Tensor weight;
  Tensor bias;
  ConvGeometry geometry;
};

/// Spatial extent of a convolution output along one axis; throws a shape
/// error when it is not positive.
int conv_output_extent(int extent, int kernel, const ConvGeometry& g);

enum class NormMode { train, eval };

/// Running statistics of a batch-norm layer. gamma and beta are trainable
/// and live with the other parameters.
struct BatchNormState {
  Tensor running_mean;  // 1 x C x 1 x 1
  Tensor running_var;   // 1 x C x 1 x 1
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormState fresh(int channels);
};

enum class Activation { relu, tanh };

// Tensor overloads are the plain forward kernels used by inference.

Tensor conv2d(const Tensor& input, const ConvParams& params);
Tensor maxpool2x2(const Tensor& input);
Tensor upsample_bilinear2x(const Tensor& input);
Tensor batch_norm_eval(const Tensor& input, const Tensor& gamma,
                       const Tensor& beta, const BatchNormState& state);
Tensor activation(const Tensor& input, Activation kind);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);

// Var overloads record onto the inputs' tape.

Var conv2d(Var input, Var weight, std::optional<Var> bias,
           const ConvGeometry& geometry);
Var maxpool2x2(Var input);
Var upsample_bilinear2x(Var input);
/// In train mode normalizes with batch statistics and updates the running
/// statistics in `state`; in eval mode uses the running statistics.
Var batch_norm(Var input, Var gamma, Var beta, BatchNormState& state,
               NormMode mode);
Var activation(Var input, Activation kind);
inline Var relu(Var x) { return activation(x, Activation::relu); }
inline Var tanh(Var x) { return activation(x, Activation::tanh); }
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, int begin, int count);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);
inline Var scale(Var x, double s) { return affine(x, s, 0.0); }
/// Sum of all entries as a 1x1x1x1 scalar.
Var sum(Var x);

}  // namespace dcbd::nn
