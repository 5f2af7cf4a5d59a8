#pragma once

#include "dcbd/autograd.hpp"
#include "dcbd/tensor.hpp"

namespace dcbd::loss {

struct LossWeights {
  double lambda_edge = 0.1;
  double lambda_tv = 0.05;
  double epsilon = 1e-3;

  /// epsilon must be positive; the lambdas must be non-negative.
  void validate() const;
};

/// How the squared norm inside the Charbonnier-type losses is reduced.
enum class Reduction {
  global,      // one square root over the whole batch
  per_sample,  // one square root per sample, averaged over the batch
};

/// (1 / 2K) * sum_j ||pred_j - target_j||^2 with K the batch size.
Var mse_loss(Var pred, Var target);

/// sqrt(||pred - target||^2 + eps^2).
Var charbonnier_loss(Var pred, Var target, double epsilon,
                     Reduction reduction = Reduction::global);

/// Per-channel 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]] with zero padding.
Tensor laplacian(const Tensor& img);
Var laplacian(Var img);

/// Charbonnier distance between the Laplacians of pred and target.
Var edge_loss(Var pred, Var target, double epsilon,
              Reduction reduction = Reduction::global);

/// Sum of squared forward differences along both axes.
Var tv_loss(Var sigma_map);

/// charbonnier + lambda_edge * edge + lambda_tv * tv.
Var total_loss(Var pred, Var target, Var sigma_map, const LossWeights& weights,
               Reduction reduction = Reduction::global);

}  // namespace dcbd::loss
