#include "dcbd/losses.hpp"

#include <cmath>

#include "dcbd/error.hpp"
#include "dcbd/nn_ops.hpp"

namespace dcbd::loss {

void LossWeights::validate() const {
  if (!(epsilon > 0.0))
    fail(ErrorKind::config, "loss.epsilon", "epsilon must be positive");
  if (lambda_edge < 0.0 || lambda_tv < 0.0)
    fail(ErrorKind::config, "loss.lambda", "loss weights must be >= 0");
}

Var mse_loss(Var pred, Var target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  const double k = static_cast<double>(p.shape().n);
  return pred.tape->record(
      "mse_loss", {pred, target}, Tensor::scalar(acc / (2.0 * k)),
      [k](BackwardContext& ctx) {
        const double g = ctx.grad()[0] / k;
        const Tensor& p = ctx.input(0);
        const Tensor& t = ctx.input(1);
        for (int side = 0; side < 2; ++side) {
          if (!ctx.needs(side)) continue;
          Tensor& gs = ctx.input_grad(side);
          const double sign = side == 0 ? 1.0 : -1.0;
          for (std::size_t i = 0; i < p.size(); ++i)
            gs[i] += sign * g * (p[i] - t[i]);
        }
      });
}

Var charbonnier_loss(Var pred, Var target, double epsilon,
                     Reduction reduction) {
  require_same_shape(pred.shape(), target.shape(), "charbonnier_loss");
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  const int groups = reduction == Reduction::global ? 1 : p.shape().n;
  const std::size_t group_len = p.size() / groups;
  std::vector<double> root(groups);
  double value = 0.0;
  for (int gi = 0; gi < groups; ++gi) {
    double acc = 0.0;
    for (std::size_t i = gi * group_len; i < (gi + 1) * group_len; ++i) {
      const double d = p[i] - t[i];
      acc += d * d;
    }
    root[gi] = std::sqrt(acc + epsilon * epsilon);
    value += root[gi];
  }
  value /= groups;
  return pred.tape->record(
      "charbonnier_loss", {pred, target}, Tensor::scalar(value),
      [root = std::move(root), groups, group_len](BackwardContext& ctx) {
        const double g = ctx.grad()[0] / groups;
        const Tensor& p = ctx.input(0);
        const Tensor& t = ctx.input(1);
        for (int side = 0; side < 2; ++side) {
          if (!ctx.needs(side)) continue;
          Tensor& gs = ctx.input_grad(side);
          const double sign = side == 0 ? 1.0 : -1.0;
          for (std::size_t i = 0; i < p.size(); ++i)
            gs[i] += sign * g * (p[i] - t[i]) / root[i / group_len];
        }
      });
}

Tensor laplacian(const Tensor& img) {
  const Shape s = img.shape();
  if (s.h < 3 || s.w < 3)
    fail(ErrorKind::shape, "laplacian.small",
         "laplacian needs h, w >= 3, got " + s.str());
  Tensor out(s);
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* in = img.raw() + p * s.plane();
    double* dst = out.raw() + p * s.plane();
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double v = -4.0 * in[y * s.w + x];
        if (y > 0) v += in[(y - 1) * s.w + x];
        if (y + 1 < s.h) v += in[(y + 1) * s.w + x];
        if (x > 0) v += in[y * s.w + x - 1];
        if (x + 1 < s.w) v += in[y * s.w + x + 1];
        dst[y * s.w + x] = v;
      }
    }
  }
  return out;
}

Var laplacian(Var img) {
  Tensor out = laplacian(img.value());
  // The zero-padded symmetric stencil is self-adjoint.
  return img.tape->record("laplacian", {img}, std::move(out),
                          [](BackwardContext& ctx) {
                            ctx.input_grad(0).add_inplace(laplacian(ctx.grad()));
                          });
}

Var edge_loss(Var pred, Var target, double epsilon, Reduction reduction) {
  require_same_shape(pred.shape(), target.shape(), "edge_loss");
  return charbonnier_loss(laplacian(pred), laplacian(target), epsilon,
                          reduction);
}

Var tv_loss(Var sigma_map) {
  const Tensor& m = sigma_map.value();
  const Shape s = m.shape();
  if (s.h * s.w < 2)
    fail(ErrorKind::shape, "tv.small",
         "tv_loss needs at least two pixels, got " + s.str());
  double acc = 0.0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* v = m.raw() + p * s.plane();
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        if (x + 1 < s.w) {
          const double d = v[y * s.w + x + 1] - v[y * s.w + x];
          acc += d * d;
        }
        if (y + 1 < s.h) {
          const double d = v[(y + 1) * s.w + x] - v[y * s.w + x];
          acc += d * d;
        }
      }
    }
  }
  return sigma_map.tape->record(
      "tv_loss", {sigma_map}, Tensor::scalar(acc), [](BackwardContext& ctx) {
        const double g = ctx.grad()[0];
        const Tensor& m = ctx.input(0);
        const Shape s = m.shape();
        Tensor& gm = ctx.input_grad(0);
        for (int p = 0; p < s.n * s.c; ++p) {
          const double* v = m.raw() + p * s.plane();
          double* gv = gm.raw() + p * s.plane();
          for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
              const int i = y * s.w + x;
              if (x + 1 < s.w) {
                const double d = 2.0 * g * (v[i + 1] - v[i]);
                gv[i + 1] += d;
                gv[i] -= d;
              }
              if (y + 1 < s.h) {
                const double d = 2.0 * g * (v[i + s.w] - v[i]);
                gv[i + s.w] += d;
                gv[i] -= d;
              }
            }
          }
        }
      });
}

Var total_loss(Var pred, Var target, Var sigma_map, const LossWeights& weights,
               Reduction reduction) {
  weights.validate();
  Var char_term = charbonnier_loss(pred, target, weights.epsilon, reduction);
  Var edge_term = edge_loss(pred, target, weights.epsilon, reduction);
  Var tv_term = tv_loss(sigma_map);
  return nn::add(nn::add(char_term, nn::scale(edge_term, weights.lambda_edge)),
                 nn::scale(tv_term, weights.lambda_tv));
}

}  // namespace dcbd::loss
