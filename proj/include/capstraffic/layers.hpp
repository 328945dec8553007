#pragma once

#include <cstddef>
#include <string>

#include "capstraffic/autograd.hpp"
#include "capstraffic/random.hpp"

namespace capstraffic {

// Named trainable tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;
};

enum class Padding { same, valid };

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct Conv2DLayer {
  Tensor kernels;  // (out_channels, kernel_h, kernel_w, in_channels)
  Tensor bias;     // (out_channels)
  std::size_t stride = 1;
  Padding padding = Padding::same;

  static Conv2DLayer create(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, Rng& rng);

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t kernel_h() const { return kernels.dim(1); }
  std::size_t kernel_w() const { return kernels.dim(2); }
  std::size_t in_channels() const { return kernels.dim(3); }
  std::size_t parameter_count() const { return kernels.size() + bias.size(); }
};

// 2-D cross-correlation over an (H, W, C) or (B, H, W, C) input with
// (C_out, kh, kw, C_in) kernels. Same padding follows the usual convention of
// putting the extra pad row/column at the bottom/right. No activation.
Var conv2d(Var input, Var kernels, Var bias, std::size_t stride = 1,
           Padding padding = Padding::same);

// Value-level forward through a layer.
Tensor conv2d_forward(const Tensor& input, const Conv2DLayer& layer);

// 2x2 max pooling with stride 2 on (H, W, C) or (B, H, W, C). Odd trailing
// rows/columns are dropped. Ties route the gradient to the first maximum in
// row-major order.
Var maxpool2x2(Var input);

// (B, ...) -> (B, prod(...)).
Var flatten(Var input);

// input (in) or (B, in); weights (in, out); bias (out). Linear output.
Var dense(Var input, Var weights, Var bias);

// Mean over all elements of (pred - target)^2.
Var mse_loss(Var pred, Var target);

}  // namespace capstraffic
