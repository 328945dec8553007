#include "capstraffic/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "capstraffic/error.hpp"

namespace capstraffic {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

Conv2DLayer Conv2DLayer::create(std::size_t in_channels, std::size_t out_channels,
                                std::size_t kernel, Rng& rng) {
  Conv2DLayer layer;
  layer.kernels = init_uniform({out_channels, kernel, kernel, in_channels},
                               kernel * kernel * in_channels, rng);
  layer.bias = Tensor({out_channels}, 0.0);
  return layer;
}

namespace {

struct ConvGeometry {
  std::size_t batch, height, width, in_ch;
  std::size_t out_h, out_w, out_ch;
  std::size_t kh, kw, stride;
  std::size_t pad_top, pad_left;
  std::size_t patch() const { return kh * kw * in_ch; }
  std::size_t rows() const { return batch * out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, std::size_t stride, Padding padding) {
  if (in.size() != 3 && in.size() != 4) {
    throw ShapeError("conv2d: input must be (H, W, C) or (B, H, W, C), got " + shape_str(in));
  }
  if (k.size() != 4) {
    throw ShapeError("conv2d: kernels must be (C_out, kh, kw, C_in), got " + shape_str(k));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{};
  const std::size_t off = in.size() == 4 ? 1 : 0;
  g.batch = off ? in[0] : 1;
  g.height = in[off];
  g.width = in[off + 1];
  g.in_ch = in[off + 2];
  g.out_ch = k[0];
  g.kh = k[1];
  g.kw = k[2];
  g.stride = stride;
  if (k[3] != g.in_ch) {
    throw ShapeError("conv2d: kernels expect " + std::to_string(k[3]) +
                     " input channels, input has " + std::to_string(g.in_ch));
  }
  if (padding == Padding::same) {
    g.out_h = (g.height + stride - 1) / stride;
    g.out_w = (g.width + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + g.kh;
    const std::size_t need_w = (g.out_w - 1) * stride + g.kw;
    g.pad_top = need_h > g.height ? (need_h - g.height) / 2 : 0;
    g.pad_left = need_w > g.width ? (need_w - g.width) / 2 : 0;
  } else {
    if (g.height < g.kh || g.width < g.kw) {
      throw ShapeError("conv2d: valid padding needs input at least the kernel size, got " +
                       shape_str(in));
    }
    g.out_h = (g.height - g.kh) / stride + 1;
    g.out_w = (g.width - g.kw) / stride + 1;
  }
  return g;
}

// Fills `col` (rows x patch) with zero-padded patches ordered (ky, kx, c).
void im2col(const ConvGeometry& g, const double* input, std::vector<double>& col) {
  col.assign(g.rows() * g.patch(), 0.0);
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* image = input + b * g.height * g.width * g.in_ch;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row) {
        double* dst = col.data() + row * g.patch();
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad_top);
          if (y < 0 || y >= std::ptrdiff_t(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t x =
                std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad_left);
            if (x < 0 || x >= std::ptrdiff_t(g.width)) continue;
            const double* src = image + (std::size_t(y) * g.width + std::size_t(x)) * g.in_ch;
            std::copy(src, src + g.in_ch, dst + (ky * g.kw + kx) * g.in_ch);
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const std::vector<double>& col, double* grad_input) {
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    double* image = grad_input + b * g.height * g.width * g.in_ch;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row) {
        const double* src = col.data() + row * g.patch();
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad_top);
          if (y < 0 || y >= std::ptrdiff_t(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t x =
                std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad_left);
            if (x < 0 || x >= std::ptrdiff_t(g.width)) continue;
            double* dst = image + (std::size_t(y) * g.width + std::size_t(x)) * g.in_ch;
            const double* s = src + (ky * g.kw + kx) * g.in_ch;
            for (std::size_t c = 0; c < g.in_ch; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias, std::size_t stride, Padding padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernels.shape(), stride, padding);
  if (bias.shape() != Shape{g.out_ch}) {
    throw ShapeError("conv2d: bias must be (" + std::to_string(g.out_ch) + "), got " +
                     shape_str(bias.shape()));
  }
  std::vector<double> col;
  im2col(g, input.value().raw(), col);

  Shape out_shape = input.shape().size() == 4 ? Shape{g.batch, g.out_h, g.out_w, g.out_ch}
                                              : Shape{g.out_h, g.out_w, g.out_ch};
  Tensor out(out_shape);
  const double* b = bias.value().raw();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    std::copy(b, b + g.out_ch, out.raw() + r * g.out_ch);
  }
  kernels::gemm(false, true, g.rows(), g.out_ch, g.patch(), 1.0, col.data(), g.patch(),
                kernels.value().raw(), g.patch(), 1.0, out.raw(), g.out_ch);

  auto backward = [input, kernels, g](const Tensor& grad, GradSlots& grads) {
    if (grads.wants(2)) {
      Tensor& gb = grads[2];
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* gr = grad.raw() + r * g.out_ch;
        for (std::size_t c = 0; c < g.out_ch; ++c) gb[c] += gr[c];
      }
    }
    if (grads.wants(1)) {
      std::vector<double> col;
      im2col(g, input.value().raw(), col);
      kernels::gemm(true, false, g.out_ch, g.patch(), g.rows(), 1.0, grad.raw(), g.out_ch,
                    col.data(), g.patch(), 1.0, grads[1].raw(), g.patch());
    }
    if (grads.wants(0)) {
      std::vector<double> dcol(g.rows() * g.patch());
      kernels::gemm(false, false, g.rows(), g.patch(), g.out_ch, 1.0, grad.raw(), g.out_ch,
                    kernels.value().raw(), g.patch(), 0.0, dcol.data(), g.patch());
      col2im_add(g, dcol, grads[0].raw());
    }
  };
  return input.tape()->record(std::move(out), {input, kernels, bias}, backward);
}

Tensor conv2d_forward(const Tensor& input, const Conv2DLayer& layer) {
  Tape tape;
  return conv2d(tape.constant(input), tape.constant(layer.kernels), tape.constant(layer.bias),
                layer.stride, layer.padding)
      .value();
}

Var maxpool2x2(Var input) {
  const Shape& in = input.shape();
  if (in.size() != 3 && in.size() != 4) {
    throw ShapeError("maxpool2x2: input must be (H, W, C) or (B, H, W, C), got " +
                     shape_str(in));
  }
  const std::size_t off = in.size() == 4 ? 1 : 0;
  const std::size_t batch = off ? in[0] : 1;
  const std::size_t h = in[off], w = in[off + 1], c = in[off + 2];
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2x2: spatial dimensions must be >= 2, got " + shape_str(in));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Shape out_shape = off ? Shape{batch, oh, ow, c} : Shape{oh, ow, c};
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const Tensor& x = input.value();

  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * h * w * c;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          std::size_t best = base + ((2 * oy) * w + 2 * ox) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          }
          out[o] = x[best];
          (*argmax)[o] = best;
        }
      }
    }
  }
  return input.tape()->record(std::move(out), {input}, [argmax](const Tensor& g, GradSlots& grads) {
    Tensor& gx = grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

Var flatten(Var input) {
  const Shape& s = input.shape();
  if (s.size() < 2) throw ShapeError("flatten: needs a batch axis, got " + shape_str(s));
  return reshape(input, {s[0], input.value().size() / s[0]});
}

Var dense(Var input, Var weights, Var bias) {
  const Shape& ws = weights.shape();
  if (ws.size() != 2) throw ShapeError("dense: weights must be (in, out), got " + shape_str(ws));
  const std::size_t fan_in = ws[0], fan_out = ws[1];
  if (bias.shape() != Shape{fan_out}) {
    throw ShapeError("dense: bias must be (" + std::to_string(fan_out) + "), got " +
                     shape_str(bias.shape()));
  }
  const Shape& xs = input.shape();
  const bool batched = xs.size() == 2;
  if (!(xs.size() == 1 || batched) || xs.back() != fan_in) {
    throw ShapeError("dense: input " + shape_str(xs) + " does not match weights " +
                     shape_str(ws));
  }
  const std::size_t rows = batched ? xs[0] : 1;
  Tensor out(batched ? Shape{rows, fan_out} : Shape{fan_out});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bias.value().raw(), bias.value().raw() + fan_out, out.raw() + r * fan_out);
  }
  kernels::gemm(false, false, rows, fan_out, fan_in, 1.0, input.value().raw(), fan_in,
                weights.value().raw(), fan_out, 1.0, out.raw(), fan_out);

  auto backward = [input, weights, rows, fan_in, fan_out](const Tensor& g, GradSlots& grads) {
    if (grads.wants(0)) {
      kernels::gemm(false, true, rows, fan_in, fan_out, 1.0, g.raw(), fan_out,
                    weights.value().raw(), fan_out, 1.0, grads[0].raw(), fan_in);
    }
    if (grads.wants(1)) {
      kernels::gemm(true, false, fan_in, fan_out, rows, 1.0, input.value().raw(), fan_in, g.raw(),
                    fan_out, 1.0, grads[1].raw(), fan_out);
    }
    if (grads.wants(2)) {
      Tensor& gb = grads[2];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < fan_out; ++j) gb[j] += g[r * fan_out + j];
      }
    }
  };
  return input.tape()->record(std::move(out), {input, weights, bias}, backward);
}

Var mse_loss(Var pred, Var target) {
  require_same_shape(pred.value(), target.value(), "mse_loss");
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    total += d * d;
  }
  const double n = static_cast<double>(p.size());
  auto backward = [pred, target, n](const Tensor& g, GradSlots& grads) {
    const Tensor& p = pred.value();
    const Tensor& t = target.value();
    const double k = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = k * (p[i] - t[i]);
      if (grads.wants(0)) grads[0][i] += d;
      if (grads.wants(1)) grads[1][i] -= d;
    }
  };
  return pred.tape()->record(Tensor::scalar(total / n), {pred, target}, backward);
}

}  // namespace capstraffic
