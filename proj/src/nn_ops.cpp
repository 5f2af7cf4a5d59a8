#include "dcbd/nn_ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "dcbd/error.hpp"

namespace dcbd::nn {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvDims {
  int n, c_in, h, w;
  int c_out, k;
  int h_out, w_out;
  int pad, dil, stride;

  std::size_t col_rows() const { return static_cast<std::size_t>(c_in) * k * k; }
  std::size_t col_cols() const { return static_cast<std::size_t>(h_out) * w_out; }
};

ConvDims conv_dims(const Shape& x, const Shape& weight, const Shape* bias,
                   const ConvGeometry& g) {
  if (g.dilation < 1 || g.stride < 1)
    fail(ErrorKind::shape, "conv.geometry", "dilation and stride must be >= 1");
  if (weight.h != weight.w)
    fail(ErrorKind::shape, "conv.kernel", "kernel must be square");
  if (weight.c != x.c)
    fail(ErrorKind::shape, "conv.channels",
         "weight expects " + std::to_string(weight.c) + " input channels, got " +
             std::to_string(x.c));
  if (bias != nullptr && (bias->numel() != static_cast<std::size_t>(weight.n)))
    fail(ErrorKind::shape, "conv.bias", "bias size must equal out channels");
  ConvDims d{};
  d.n = x.n;
  d.c_in = x.c;
  d.h = x.h;
  d.w = x.w;
  d.c_out = weight.n;
  d.k = weight.h;
  d.pad = g.resolved_padding();
  d.dil = g.dilation;
  d.stride = g.stride;
  d.h_out = conv_output_extent(x.h, d.k, g);
  d.w_out = conv_output_extent(x.w, d.k, g);
  return d;
}

using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Output rows are processed in bands whose column buffer stays cache-sized.
constexpr int kBandColumns = 512;

struct Band {
  int y0, y1;
  Eigen::Index cols(const ConvDims& d) const {
    return static_cast<Eigen::Index>(y1 - y0) * d.w_out;
  }
};

std::vector<Band> bands(const ConvDims& d) {
  const int rows = std::max(1, kBandColumns / std::max(1, d.w_out));
  std::vector<Band> out;
  for (int y = 0; y < d.h_out; y += rows)
    out.push_back({y, std::min(d.h_out, y + rows)});
  return out;
}

// Unfolds output rows [band.y0, band.y1) of one sample (c_in, h, w) into
// rows indexed by (ci, ky, kx) and columns by output pixel.
void im2col(const double* in, const ConvDims& d, Band band, double* cols) {
  const std::size_t width = static_cast<std::size_t>(band.cols(d));
  for (int ci = 0; ci < d.c_in; ++ci) {
    const double* plane = in + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        double* row =
            cols + ((static_cast<std::size_t>(ci) * d.k + ky) * d.k + kx) * width;
        const int dx = kx * d.dil - d.pad;
        for (int oy = band.y0; oy < band.y1; ++oy) {
          const int iy = oy * d.stride + ky * d.dil - d.pad;
          double* dst = row + static_cast<std::size_t>(oy - band.y0) * d.w_out;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.w_out, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * d.w;
          if (d.stride == 1) {
            const int lo = std::clamp(-dx, 0, d.w_out);
            const int hi = std::clamp(d.w - dx, lo, d.w_out);
            std::fill(dst, dst + lo, 0.0);
            std::memcpy(dst + lo, src + lo + dx,
                        sizeof(double) * static_cast<std::size_t>(hi - lo));
            std::fill(dst + hi, dst + d.w_out, 0.0);
          } else {
            for (int ox = 0; ox < d.w_out; ++ox) {
              const int ix = ox * d.stride + dx;
              dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into the input grad.
void col2im(const double* cols, const ConvDims& d, Band band, double* grad_in) {
  const std::size_t width = static_cast<std::size_t>(band.cols(d));
  for (int ci = 0; ci < d.c_in; ++ci) {
    double* plane = grad_in + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const double* row =
            cols + ((static_cast<std::size_t>(ci) * d.k + ky) * d.k + kx) * width;
        const int dx = kx * d.dil - d.pad;
        for (int oy = band.y0; oy < band.y1; ++oy) {
          const int iy = oy * d.stride + ky * d.dil - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = row + static_cast<std::size_t>(oy - band.y0) * d.w_out;
          double* dst = plane + static_cast<std::size_t>(iy) * d.w;
          if (d.stride == 1) {
            const int lo = std::clamp(-dx, 0, d.w_out);
            const int hi = std::clamp(d.w - dx, lo, d.w_out);
            for (int ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
          } else {
            for (int ox = 0; ox < d.w_out; ++ox) {
              const int ix = ox * d.stride + dx;
              if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                    const ConvDims& d) {
  Tensor out({d.n, d.c_out, d.h_out, d.w_out});
  const auto rows = static_cast<Eigen::Index>(d.col_rows());
  const auto hw = static_cast<Eigen::Index>(d.col_cols());
  const auto plan = bands(d);
  std::vector<double> cols(static_cast<std::size_t>(rows * plan.front().cols(d)));
  ConstMatMap wm(weight.raw(), d.c_out, rows);
  const std::size_t in_stride = static_cast<std::size_t>(d.c_in) * d.h * d.w;
  const std::size_t out_stride = static_cast<std::size_t>(d.c_out) * hw;
  for (int s = 0; s < d.n; ++s) {
    for (const Band& b : plan) {
      im2col(x.raw() + s * in_stride, d, b, cols.data());
      ConstMatMap cm(cols.data(), rows, b.cols(d));
      StridedMap om(out.raw() + s * out_stride + static_cast<std::size_t>(b.y0) * d.w_out,
                    d.c_out, b.cols(d), Eigen::OuterStride<>(hw));
      om.noalias() = wm * cm;
    }
    if (bias != nullptr) {
      MatMap om(out.raw() + s * out_stride, d.c_out, hw);
      for (int co = 0; co < d.c_out; ++co) om.row(co).array() += (*bias)[co];
    }
  }
  return out;
}


void require_even(const Shape& s, const char* what) {
  if (s.h % 2 != 0 || s.w % 2 != 0)
    fail(ErrorKind::shape, "pool.odd",
         std::string(what) + ": spatial size " + s.str() + " is not even");
}

struct AxisTaps {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

// Half-pixel-centre bilinear taps for a 2x enlargement of an axis.
AxisTaps upsample_taps(int extent) {
  AxisTaps t;
  const int out = 2 * extent;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    const int i0 = std::min(static_cast<int>(src), extent - 1);
    const int i1 = std::min(i0 + 1, extent - 1);
    const double frac = src - i0;
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

void require_channels(const Tensor& t, int c, const char* what) {
  if (t.size() != static_cast<std::size_t>(c))
    fail(ErrorKind::shape, "bn.channels",
         std::string(what) + " has " + std::to_string(t.size()) +
             " entries, expected " + std::to_string(c));
}

}  // namespace

int conv_output_extent(int extent, int kernel, const ConvGeometry& g) {
  const int span = g.dilation * (kernel - 1) + 1;
  const int padded = extent + 2 * g.resolved_padding();
  if (padded < span)
    fail(ErrorKind::shape, "conv.output",
         "convolution output would be empty for extent " +
             std::to_string(extent));
  return (padded - span) / g.stride + 1;
}

BatchNormState BatchNormState::fresh(int channels) {
  BatchNormState s;
  s.running_mean = Tensor({1, channels, 1, 1}, 0.0);
  s.running_var = Tensor({1, channels, 1, 1}, 1.0);
  return s;
}

// ---------------------------------------------------------------- tensors

Tensor conv2d(const Tensor& input, const ConvParams& params) {
  const Tensor* bias = params.bias.empty() ? nullptr : &params.bias;
  const Shape bias_shape = bias ? bias->shape() : Shape{};
  ConvDims d = conv_dims(input.shape(), params.weight.shape(),
                         bias ? &bias_shape : nullptr, params.geometry);
  return conv_forward(input, params.weight, bias, d);
}

Tensor maxpool2x2(const Tensor& input) {
  const Shape s = input.shape();
  require_even(s, "maxpool2x2");
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* plane = input.raw() + p * s.plane();
    for (int y = 0; y < s.h / 2; ++y) {
      for (int x = 0; x < s.w / 2; ++x) {
        const double* r0 = plane + (2 * y) * s.w + 2 * x;
        const double* r1 = r0 + s.w;
        double m = r0[0];
        if (r0[1] > m) m = r0[1];
        if (r1[0] > m) m = r1[0];
        if (r1[1] > m) m = r1[1];
        out[o++] = m;
      }
    }
  }
  return out;
}

Tensor upsample_bilinear2x(const Tensor& input) {
  const Shape s = input.shape();
  if (s.h < 1 || s.w < 1)
    fail(ErrorKind::shape, "upsample.empty", "upsample needs h, w >= 1");
  const AxisTaps ty = upsample_taps(s.h);
  const AxisTaps tx = upsample_taps(s.w);
  Tensor out({s.n, s.c, 2 * s.h, 2 * s.w});
  const int wo = 2 * s.w;
  for (int p = 0; p < s.n * s.c; ++p) {
    const double* in = input.raw() + p * s.plane();
    double* dst = out.raw() + p * s.plane() * 4;
    for (int oy = 0; oy < 2 * s.h; ++oy) {
      const double* a = in + ty.i0[oy] * s.w;
      const double* b = in + ty.i1[oy] * s.w;
      for (int ox = 0; ox < wo; ++ox) {
        const double top = tx.w0[ox] * a[tx.i0[ox]] + tx.w1[ox] * a[tx.i1[ox]];
        const double bot = tx.w0[ox] * b[tx.i0[ox]] + tx.w1[ox] * b[tx.i1[ox]];
        dst[oy * wo + ox] = ty.w0[oy] * top + ty.w1[oy] * bot;
      }
    }
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& input, const Tensor& gamma,
                       const Tensor& beta, const BatchNormState& state) {
  const Shape s = input.shape();
  require_channels(gamma, s.c, "gamma");
  require_channels(beta, s.c, "beta");
  require_channels(state.running_mean, s.c, "running mean");
  require_channels(state.running_var, s.c, "running var");
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
      const double a = gamma[c] * inv;
      const double b = beta[c] - a * state.running_mean[c];
      const std::size_t base = input.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i)
        out[base + i] = a * input[base + i] + b;
    }
  }
  return out;
}

Tensor activation(const Tensor& input, Activation kind) {
  Tensor out(input.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < input.size(); ++i)
      out[i] = input[i] > 0.0 ? input[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::tanh(input[i]);
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    fail(ErrorKind::shape, "concat.mismatch",
         "concat_channels: " + sa.str() + " vs " + sb.str());
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t ca = sa.c * sa.plane(), cb = sb.c * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    double* dst = out.raw() + n * (ca + cb);
    std::copy_n(a.raw() + n * ca, ca, dst);
    std::copy_n(b.raw() + n * cb, cb, dst + ca);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a;
  out.add_inplace(b);
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
  return out;
}

// -------------------------------------------------------------- autodiff

Var conv2d(Var input, Var weight, std::optional<Var> bias,
           const ConvGeometry& geometry) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor* b = bias ? &bias->value() : nullptr;
  const Shape bias_shape = b ? b->shape() : Shape{};
  const ConvDims d =
      conv_dims(x.shape(), w.shape(), b ? &bias_shape : nullptr, geometry);
  Tensor out = conv_forward(x, w, b, d);

  auto backward = [d, has_bias = b != nullptr](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    const Tensor& xv = ctx.input(0);
    const Tensor& wv = ctx.input(1);
    const bool need_x = ctx.needs(0);
    const bool need_w = ctx.needs(1);
    const bool need_b = has_bias && ctx.needs(2);
    const auto rows = static_cast<Eigen::Index>(d.col_rows());
    const auto hw = static_cast<Eigen::Index>(d.col_cols());
    const std::size_t in_stride = static_cast<std::size_t>(d.c_in) * d.h * d.w;
    const std::size_t out_stride = static_cast<std::size_t>(d.c_out) * hw;
    const auto plan = bands(d);
    std::vector<double> cols(static_cast<std::size_t>(rows * plan.front().cols(d)));
    ConstMatMap wm(wv.raw(), d.c_out, rows);

    if (need_b) {
      Tensor& gb = ctx.input_grad(2);
      // sequential sums: Eigen's vectorized redux peels by address alignment,
      // which would make the rounding depend on where the buffer landed
      for (int s = 0; s < d.n; ++s)
        for (int co = 0; co < d.c_out; ++co) {
          const double* row = g.raw() + s * out_stride + co * hw;
          gb[co] += std::accumulate(row, row + hw, 0.0);
        }
    }
    if (!need_w && !need_x) return;
    Tensor* gw = need_w ? &ctx.input_grad(1) : nullptr;
    Tensor* gx = need_x ? &ctx.input_grad(0) : nullptr;
    for (int s = 0; s < d.n; ++s) {
      for (const Band& b : plan) {
        MatMap cm(cols.data(), rows, b.cols(d));
        ConstStridedMap gm(g.raw() + s * out_stride + static_cast<std::size_t>(b.y0) * d.w_out,
                           d.c_out, b.cols(d), Eigen::OuterStride<>(hw));
        if (gw != nullptr) {
          im2col(xv.raw() + s * in_stride, d, b, cols.data());
          MatMap gwm(gw->raw(), d.c_out, rows);
          gwm.noalias() += gm * cm.transpose();
        }
        if (gx != nullptr) {
          cm.noalias() = wm.transpose() * gm;
          col2im(cols.data(), d, b, gx->raw() + s * in_stride);
        }
      }
    }
  };
  if (bias)
    return input.tape->record("conv2d", {input, weight, *bias}, std::move(out),
                              backward);
  return input.tape->record("conv2d", {input, weight}, std::move(out), backward);
}

Var maxpool2x2(Var input) {
  const Tensor& x = input.value();
  const Shape s = x.shape();
  require_even(s, "maxpool2x2");
  Tensor out({s.n, s.c, s.h / 2, s.w / 2});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = p * s.plane();
    for (int y = 0; y < s.h / 2; ++y) {
      for (int xx = 0; xx < s.w / 2; ++xx) {
        const std::size_t idx[4] = {
            base + (2 * y) * s.w + 2 * xx, base + (2 * y) * s.w + 2 * xx + 1,
            base + (2 * y + 1) * s.w + 2 * xx,
            base + (2 * y + 1) * s.w + 2 * xx + 1};
        std::size_t best = idx[0];
        for (int k = 1; k < 4; ++k)
          if (x[idx[k]] > x[best]) best = idx[k];
        out[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
        ++o;
      }
    }
  }
  return input.tape->record(
      "maxpool2x2", {input}, std::move(out),
      [argmax = std::move(argmax)](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        Tensor& gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
      });
}

Var upsample_bilinear2x(Var input) {
  Tensor out = upsample_bilinear2x(input.value());
  return input.tape->record(
      "upsample_bilinear2x", {input}, std::move(out), [](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        Tensor& gx = ctx.input_grad(0);
        const Shape s = gx.shape();
        const AxisTaps ty = upsample_taps(s.h);
        const AxisTaps tx = upsample_taps(s.w);
        const int wo = 2 * s.w;
        for (int p = 0; p < s.n * s.c; ++p) {
          const double* src = g.raw() + p * s.plane() * 4;
          double* dst = gx.raw() + p * s.plane();
          for (int oy = 0; oy < 2 * s.h; ++oy) {
            double* a = dst + ty.i0[oy] * s.w;
            double* b = dst + ty.i1[oy] * s.w;
            for (int ox = 0; ox < wo; ++ox) {
              const double v = src[oy * wo + ox];
              const double va = ty.w0[oy] * v, vb = ty.w1[oy] * v;
              a[tx.i0[ox]] += tx.w0[ox] * va;
              a[tx.i1[ox]] += tx.w1[ox] * va;
              b[tx.i0[ox]] += tx.w0[ox] * vb;
              b[tx.i1[ox]] += tx.w1[ox] * vb;
            }
          }
        }
      });
}

Var batch_norm(Var input, Var gamma, Var beta, BatchNormState& state,
               NormMode mode) {
  const Tensor& x = input.value();
  const Shape s = x.shape();
  require_channels(gamma.value(), s.c, "gamma");
  require_channels(beta.value(), s.c, "beta");
  require_channels(state.running_mean, s.c, "running mean");
  require_channels(state.running_var, s.c, "running var");

  if (mode == NormMode::eval) {
    Tensor out = batch_norm_eval(x, gamma.value(), beta.value(), state);
    std::vector<double> inv(s.c);
    for (int c = 0; c < s.c; ++c)
      inv[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    std::vector<double> mean(state.running_mean.data().begin(),
                             state.running_mean.data().end());
    return input.tape->record(
        "batch_norm_eval", {input, gamma, beta}, std::move(out),
        [inv = std::move(inv), mean = std::move(mean)](BackwardContext& ctx) {
          const Tensor& g = ctx.grad();
          const Tensor& xv = ctx.input(0);
          const Tensor& gm = ctx.input(1);
          const Shape sh = xv.shape();
          Tensor* gx = ctx.needs(0) ? &ctx.input_grad(0) : nullptr;
          Tensor* gg = ctx.needs(1) ? &ctx.input_grad(1) : nullptr;
          Tensor* gb = ctx.needs(2) ? &ctx.input_grad(2) : nullptr;
          for (int n = 0; n < sh.n; ++n) {
            for (int c = 0; c < sh.c; ++c) {
              const std::size_t base = xv.offset(n, c, 0, 0);
              for (std::size_t i = 0; i < sh.plane(); ++i) {
                const double gi = g[base + i];
                if (gx) (*gx)[base + i] += gi * gm[c] * inv[c];
                if (gg) (*gg)[c] += gi * (xv[base + i] - mean[c]) * inv[c];
                if (gb) (*gb)[c] += gi;
              }
            }
          }
        });
  }

  const std::size_t count = static_cast<std::size_t>(s.n) * s.plane();
  if (count < 2)
    fail(ErrorKind::numeric, "bn.single_element",
         "batch_norm in train mode needs at least two values per channel");
  std::vector<double> mean(s.c, 0.0), inv_std(s.c, 0.0);
  Tensor xhat(s);
  Tensor out(s);
  for (int c = 0; c < s.c; ++c) {
    double m = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) m += x[base + i];
    }
    m /= static_cast<double>(count);
    double v = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double dv = x[base + i] - m;
        v += dv * dv;
      }
    }
    const double biased = v / static_cast<double>(count);
    const double unbiased = v / static_cast<double>(count - 1);
    mean[c] = m;
    inv_std[c] = 1.0 / std::sqrt(biased + state.epsilon);
    const double gm = gamma.value()[c], bt = beta.value()[c];
    for (int n = 0; n < s.n; ++n) {
      const std::size_t base = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xh = (x[base + i] - m) * inv_std[c];
        xhat[base + i] = xh;
        out[base + i] = gm * xh + bt;
      }
    }
    state.running_mean[c] =
        (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
    state.running_var[c] =
        (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
  }

  return input.tape->record(
      "batch_norm", {input, gamma, beta}, std::move(out),
      [xhat = std::move(xhat), inv_std = std::move(inv_std),
       count](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        const Tensor& gm = ctx.input(1);
        const Shape sh = xhat.shape();
        Tensor* gx = ctx.needs(0) ? &ctx.input_grad(0) : nullptr;
        Tensor* gg = ctx.needs(1) ? &ctx.input_grad(1) : nullptr;
        Tensor* gb = ctx.needs(2) ? &ctx.input_grad(2) : nullptr;
        for (int c = 0; c < sh.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < sh.n; ++n) {
            const std::size_t base = xhat.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < sh.plane(); ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
          }
          if (gg) (*gg)[c] += sum_gx;
          if (gb) (*gb)[c] += sum_g;
          if (!gx) continue;
          const double mg = sum_g / static_cast<double>(count);
          const double mgx = sum_gx / static_cast<double>(count);
          const double k = gm[c] * inv_std[c];
          for (int n = 0; n < sh.n; ++n) {
            const std::size_t base = xhat.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < sh.plane(); ++i)
              (*gx)[base + i] +=
                  k * (g[base + i] - mg - xhat[base + i] * mgx);
          }
        }
      });
}

Var activation(Var input, Activation kind) {
  Tensor out = activation(input.value(), kind);
  if (kind == Activation::relu) {
    return input.tape->record(
        "relu", {input}, std::move(out), [](BackwardContext& ctx) {
          const Tensor& g = ctx.grad();
          const Tensor& x = ctx.input(0);
          Tensor& gx = ctx.input_grad(0);
          for (std::size_t i = 0; i < x.size(); ++i)
            gx[i] += x[i] > 0.0 ? g[i] : 0.0;
        });
  }
  return input.tape->record(
      "tanh", {input}, std::move(out), [](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        const Tensor& y = ctx.output();
        Tensor& gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < y.size(); ++i)
          gx[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

Var concat_channels(Var a, Var b) {
  Tensor out = concat_channels(a.value(), b.value());
  return a.tape->record(
      "concat_channels", {a, b}, std::move(out), [](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        const Shape sa = ctx.input(0).shape(), sb = ctx.input(1).shape();
        const std::size_t ca = sa.c * sa.plane(), cb = sb.c * sb.plane();
        for (int i = 0; i < 2; ++i) {
          if (!ctx.needs(i)) continue;
          Tensor& gi = ctx.input_grad(i);
          const std::size_t len = i == 0 ? ca : cb;
          const std::size_t off = i == 0 ? 0 : ca;
          for (int n = 0; n < sa.n; ++n) {
            const double* src = g.raw() + n * (ca + cb) + off;
            double* dst = gi.raw() + n * len;
            for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
          }
        }
      });
}

Var slice_channels(Var x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    fail(ErrorKind::shape, "slice.range", "channel slice out of range");
  Tensor out({s.n, count, s.h, s.w});
  const std::size_t len = count * s.plane();
  for (int n = 0; n < s.n; ++n)
    std::copy_n(x.value().raw() + x.value().offset(n, begin, 0, 0), len,
                out.raw() + n * len);
  return x.tape->record(
      "slice_channels", {x}, std::move(out),
      [begin, len](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        Tensor& gx = ctx.input_grad(0);
        for (int n = 0; n < gx.shape().n; ++n) {
          double* dst = gx.raw() + gx.offset(n, begin, 0, 0);
          const double* src = g.raw() + n * len;
          for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
        }
      });
}

Var add(Var a, Var b) {
  Tensor out = add(a.value(), b.value());
  return a.tape->record("add", {a, b}, std::move(out), [](BackwardContext& ctx) {
    for (int i = 0; i < 2; ++i)
      if (ctx.needs(i)) ctx.input_grad(i).add_inplace(ctx.grad());
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record("sub", {a, b}, std::move(out), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    if (ctx.needs(0)) ctx.input_grad(0).add_inplace(g);
    if (ctx.needs(1)) {
      Tensor& gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record("mul", {a, b}, std::move(out), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad();
    for (int k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      const Tensor& other = ctx.input(1 - k);
      Tensor& gk = ctx.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i] * other[i];
    }
  });
}

Var affine(Var x, double scale, double shift) {
  Tensor out = affine(x.value(), scale, shift);
  return x.tape->record("affine", {x}, std::move(out),
                        [scale](BackwardContext& ctx) {
                          const Tensor& g = ctx.grad();
                          Tensor& gx = ctx.input_grad(0);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += scale * g[i];
                        });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record("sum", {x}, Tensor::scalar(total),
                        [](BackwardContext& ctx) {
                          const double g = ctx.grad()[0];
                          Tensor& gx = ctx.input_grad(0);
                          for (double& v : gx.data()) v += g;
                        });
}

}  // namespace dcbd::nn
