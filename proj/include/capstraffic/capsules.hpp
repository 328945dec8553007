#pragma once

#include <cstddef>
#include <vector>

#include "capstraffic/layers.hpp"

namespace capstraffic {

// Guard inside the root of the length gradient, v / sqrt(|v|^2 + eps).
inline constexpr double kLengthEpsilon = 1e-9;

// v = |s|^2 / (1 + |s|^2) * s / |s| over the last axis; zero maps to zero.
Var squash(Var s);
Tensor squash(const Tensor& s);

// Softmax over the last axis.
Var softmax_last(Var logits);

struct PrimaryCapsLayer {
  Conv2DLayer conv;             // 3x3, stride 1, same padding, ReLU after
  std::size_t capsule_dim = 8;  // channels are grouped into capsules of this size

  static PrimaryCapsLayer create(std::size_t in_channels, std::size_t channels,
                                 std::size_t capsule_dim, Rng& rng);
  std::size_t capsule_types() const { return conv.out_channels() / capsule_dim; }
};

// (H, W, C) -> (H*W*types, dim), or batched (B, H, W, C) -> (B, H*W*types, dim).
// Capsule index is (y * W + x) * types + type; channel c of a location feeds
// type c / dim, component c % dim. Every capsule is squashed.
Var primary_capsules(Var features, Var kernels, Var bias, std::size_t capsule_dim);
Tensor primary_caps_forward(const Tensor& features, const PrimaryCapsLayer& layer);

struct TrafficCapsLayer {
  Tensor transforms;  // (num_in, num_out, in_dim, out_dim), no bias
  std::size_t routing_iterations = 3;

  static TrafficCapsLayer create(std::size_t num_in, std::size_t num_out, std::size_t in_dim,
                                 std::size_t out_dim, Rng& rng);
  std::size_t num_in() const { return transforms.dim(0); }
  std::size_t num_out() const { return transforms.dim(1); }
  std::size_t parameter_count() const { return transforms.size(); }
};

// u_hat[i, j] = u[i] * W[i, j]. u is (I, d_in) or (B, I, d_in); the result is
// (I, J, d_out) or (B, I, J, d_out).
Var predict_transforms(Var u, Var transforms);
Tensor predict_transforms(const Tensor& u, const TrafficCapsLayer& layer);

// Coupling coefficients used by each routing iteration, (I, J) or (B, I, J).
struct RoutingTrace {
  std::vector<Tensor> coefficients;
};

// Routing by agreement on u_hat of shape (I, J, D) or (B, I, J, D). Logits
// start at zero; the agreement update after the last iteration is skipped.
// Gradients flow through every unrolled iteration.
Var dynamic_routing(Var u_hat, std::size_t iterations, RoutingTrace* trace = nullptr);
Tensor dynamic_routing(const Tensor& u_hat, std::size_t iterations,
                       RoutingTrace* trace = nullptr);

// s[b, j] = sum_i c[b, i, j] * u_hat[b, i, j]
Var weighted_capsule_sum(Var coefficients, Var u_hat);
// a[b, i, j] = u_hat[b, i, j] . v[b, j]
Var capsule_agreement(Var u_hat, Var v);

// Euclidean norm over the last axis.
Var capsule_lengths(Var v);
Tensor capsule_lengths(const Tensor& v);

}  // namespace capstraffic
