#include "capstraffic/capsules.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "capstraffic/error.hpp"

namespace capstraffic {

namespace {

// Splits a shape into (rows, last-axis length).
std::pair<std::size_t, std::size_t> rows_by_last(const Shape& s, const char* op) {
  if (s.empty()) throw ShapeError(std::string(op) + ": needs at least one axis");
  return {shape_size(s) / s.back(), s.back()};
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

}  // namespace

Var squash(Var s) {
  const Tensor& x = s.value();
  const auto [rows, dim] = rows_by_last(x.shape(), "squash");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * dim;
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      if (!std::isfinite(in[d])) throw NumericError("squash: non-finite input");
      sq += in[d] * in[d];
    }
    const double n = std::sqrt(sq);
    const double h = n / (1.0 + sq);
    for (std::size_t d = 0; d < dim; ++d) out[r * dim + d] = h * in[d];
  }
  auto backward = [s, rows, dim](const Tensor& g, GradSlots& grads) {
    const Tensor& x = s.value();
    Tensor& gx = grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = x.raw() + r * dim;
      const double* go = g.raw() + r * dim;
      double sq = 0.0, dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        sq += in[d] * in[d];
        dot += in[d] * go[d];
      }
      const double n = std::sqrt(sq);
      const double h = n / (1.0 + sq);
      // d/ds [h(n) s] = h I + h'(n) s s^T / n
      const double radial = n > 0.0 ? (1.0 - sq) / ((1.0 + sq) * (1.0 + sq)) * dot / n : 0.0;
      for (std::size_t d = 0; d < dim; ++d) gx[r * dim + d] += h * go[d] + radial * in[d];
    }
  };
  return s.tape()->record(std::move(out), {s}, backward);
}

Tensor squash(const Tensor& s) {
  Tape tape;
  return squash(tape.constant(s)).value();
}

Var softmax_last(Var logits) {
  const Tensor& x = logits.value();
  const auto [rows, dim] = rows_by_last(x.shape(), "softmax_last");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * dim;
    double* o = out.raw() + r * dim;
    const double top = *std::max_element(in, in + dim);
    double total = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      o[d] = std::exp(in[d] - top);
      total += o[d];
    }
    for (std::size_t d = 0; d < dim; ++d) o[d] /= total;
  }
  Tape* tape = logits.tape();
  const std::size_t out_id = tape->size();
  auto backward = [tape, out_id, rows, dim](const Tensor& g, GradSlots& grads) {
    const Tensor& y = tape->value(out_id);
    Tensor& gx = grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.raw() + r * dim;
      const double* gr = g.raw() + r * dim;
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += yr[d] * gr[d];
      for (std::size_t d = 0; d < dim; ++d) gx[r * dim + d] += yr[d] * (gr[d] - dot);
    }
  };
  return tape->record(std::move(out), {logits}, backward);
}

PrimaryCapsLayer PrimaryCapsLayer::create(std::size_t in_channels, std::size_t channels,
                                          std::size_t capsule_dim, Rng& rng) {
  if (capsule_dim == 0 || channels % capsule_dim != 0) {
    throw ShapeError("PrimaryCaps: " + std::to_string(channels) +
                     " channels do not split into capsules of " + std::to_string(capsule_dim));
  }
  return PrimaryCapsLayer{Conv2DLayer::create(in_channels, channels, 3, rng), capsule_dim};
}

Var primary_capsules(Var features, Var kernels, Var bias, std::size_t capsule_dim) {
  const std::size_t channels = kernels.shape().empty() ? 0 : kernels.shape()[0];
  if (capsule_dim == 0 || channels % capsule_dim != 0) {
    throw ShapeError("primary_capsules: " + std::to_string(channels) +
                     " channels do not split into capsules of " + std::to_string(capsule_dim));
  }
  Var maps = relu(conv2d(features, kernels, bias, 1, Padding::same));
  const std::size_t total = maps.value().size() / capsule_dim;
  Shape caps_shape = maps.shape().size() == 4
                         ? Shape{maps.shape()[0], total / maps.shape()[0], capsule_dim}
                         : Shape{total, capsule_dim};
  return squash(reshape(maps, std::move(caps_shape)));
}

Tensor primary_caps_forward(const Tensor& features, const PrimaryCapsLayer& layer) {
  Tape tape;
  return primary_capsules(tape.constant(features), tape.constant(layer.conv.kernels),
                          tape.constant(layer.conv.bias), layer.capsule_dim)
      .value();
}

TrafficCapsLayer TrafficCapsLayer::create(std::size_t num_in, std::size_t num_out,
                                          std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  TrafficCapsLayer layer;
  layer.transforms = init_uniform({num_in, num_out, in_dim, out_dim}, in_dim, rng);
  return layer;
}

Var predict_transforms(Var u, Var transforms) {
  const Shape& us = u.shape();
  const Shape& ws = transforms.shape();
  if (ws.size() != 4) {
    throw ShapeError("predict_transforms: transforms must be (I, J, d_in, d_out), got " +
                     shape_str(ws));
  }
  const bool batched = us.size() == 3;
  if (!(us.size() == 2 || batched) || us[us.size() - 2] != ws[0] || us.back() != ws[2]) {
    throw ShapeError("predict_transforms: capsules " + shape_str(us) +
                     " do not match transforms " + shape_str(ws));
  }
  const std::size_t batch = batched ? us[0] : 1;
  const std::size_t n_in = ws[0], n_out = ws[1], d_in = ws[2], d_out = ws[3];
  Tensor out(batched ? Shape{batch, n_in, n_out, d_out} : Shape{n_in, n_out, d_out}, 0.0);

  const double* W = transforms.value().raw();
  const double* U = u.value().raw();
  for (std::size_t i = 0; i < n_in; ++i) {
    const double* Wi = W + i * n_out * d_in * d_out;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* ui = U + (b * n_in + i) * d_in;
      double* oi = out.raw() + (b * n_in + i) * n_out * d_out;
      for (std::size_t j = 0; j < n_out; ++j) {
        const double* Wij = Wi + j * d_in * d_out;
        double* o = oi + j * d_out;
        for (std::size_t d = 0; d < d_in; ++d) {
          const double ud = ui[d];
          const double* row = Wij + d * d_out;
          for (std::size_t e = 0; e < d_out; ++e) o[e] += ud * row[e];
        }
      }
    }
  }

  auto backward = [u, transforms, batch, n_in, n_out, d_in, d_out](const Tensor& g,
                                                                    GradSlots& grads) {
    const double* W = transforms.value().raw();
    const double* U = u.value().raw();
    const bool want_u = grads.wants(0), want_w = grads.wants(1);
    double* gU = want_u ? grads[0].raw() : nullptr;
    double* gW = want_w ? grads[1].raw() : nullptr;
    for (std::size_t i = 0; i < n_in; ++i) {
      const std::size_t w_off = i * n_out * d_in * d_out;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* ui = U + (b * n_in + i) * d_in;
        const double* gi = g.raw() + (b * n_in + i) * n_out * d_out;
        for (std::size_t j = 0; j < n_out; ++j) {
          const double* go = gi + j * d_out;
          for (std::size_t d = 0; d < d_in; ++d) {
            const std::size_t row = w_off + (j * d_in + d) * d_out;
            if (want_w) {
              const double ud = ui[d];
              for (std::size_t e = 0; e < d_out; ++e) gW[row + e] += ud * go[e];
            }
            if (want_u) {
              double acc = 0.0;
              for (std::size_t e = 0; e < d_out; ++e) acc += W[row + e] * go[e];
              gU[(b * n_in + i) * d_in + d] += acc;
            }
          }
        }
      }
    }
  };
  return u.tape()->record(std::move(out), {u, transforms}, backward);
}

Tensor predict_transforms(const Tensor& u, const TrafficCapsLayer& layer) {
  Tape tape;
  return predict_transforms(tape.constant(u), tape.constant(layer.transforms)).value();
}

Var weighted_capsule_sum(Var coefficients, Var u_hat) {
  const Shape& cs = coefficients.shape();
  const Shape& us = u_hat.shape();
  if (us.size() < 3 || cs != drop_last(us)) {
    throw ShapeError("weighted_capsule_sum: coefficients " + shape_str(cs) +
                     " do not match predictions " + shape_str(us));
  }
  const std::size_t dim = us.back();
  const std::size_t n_out = us[us.size() - 2];
  const std::size_t n_in = us[us.size() - 3];
  const std::size_t batch = shape_size(us) / (n_in * n_out * dim);
  Shape out_shape(us.begin(), us.end() - 3);
  out_shape.push_back(n_out);
  out_shape.push_back(dim);
  Tensor out(out_shape, 0.0);

  const double* C = coefficients.value().raw();
  const double* U = u_hat.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    double* s = out.raw() + b * n_out * dim;
    for (std::size_t i = 0; i < n_in; ++i) {
      for (std::size_t j = 0; j < n_out; ++j) {
        const double c = C[(b * n_in + i) * n_out + j];
        const double* u = U + ((b * n_in + i) * n_out + j) * dim;
        double* sj = s + j * dim;
        for (std::size_t d = 0; d < dim; ++d) sj[d] += c * u[d];
      }
    }
  }
  auto backward = [coefficients, u_hat, batch, n_in, n_out, dim](const Tensor& g,
                                                                 GradSlots& grads) {
    const double* C = coefficients.value().raw();
    const double* U = u_hat.value().raw();
    const bool want_c = grads.wants(0), want_u = grads.wants(1);
    double* gC = want_c ? grads[0].raw() : nullptr;
    double* gU = want_u ? grads[1].raw() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* gs = g.raw() + b * n_out * dim;
      for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t j = 0; j < n_out; ++j) {
          const std::size_t cij = (b * n_in + i) * n_out + j;
          const double* gj = gs + j * dim;
          if (want_c) {
            const double* u = U + cij * dim;
            double acc = 0.0;
            for (std::size_t d = 0; d < dim; ++d) acc += gj[d] * u[d];
            gC[cij] += acc;
          }
          if (want_u) {
            const double c = C[cij];
            double* gu = gU + cij * dim;
            for (std::size_t d = 0; d < dim; ++d) gu[d] += c * gj[d];
          }
        }
      }
    }
  };
  return u_hat.tape()->record(std::move(out), {coefficients, u_hat}, backward);
}

Var capsule_agreement(Var u_hat, Var v) {
  const Shape& us = u_hat.shape();
  const Shape& vs = v.shape();
  if (us.size() < 3 || vs.size() != us.size() - 1 || vs.back() != us.back() ||
      vs[vs.size() - 2] != us[us.size() - 2]) {
    throw ShapeError("capsule_agreement: predictions " + shape_str(us) +
                     " do not match outputs " + shape_str(vs));
  }
  const std::size_t dim = us.back();
  const std::size_t n_out = us[us.size() - 2];
  const std::size_t n_in = us[us.size() - 3];
  const std::size_t batch = shape_size(us) / (n_in * n_out * dim);
  Tensor out(drop_last(us));
  const double* U = u_hat.value().raw();
  const double* V = v.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n_in; ++i) {
      for (std::size_t j = 0; j < n_out; ++j) {
        const std::size_t ij = (b * n_in + i) * n_out + j;
        const double* u = U + ij * dim;
        const double* vj = V + (b * n_out + j) * dim;
        double acc = 0.0;
        for (std::size_t d = 0; d < dim; ++d) acc += u[d] * vj[d];
        out[ij] = acc;
      }
    }
  }
  auto backward = [u_hat, v, batch, n_in, n_out, dim](const Tensor& g, GradSlots& grads) {
    const double* U = u_hat.value().raw();
    const double* V = v.value().raw();
    const bool want_u = grads.wants(0), want_v = grads.wants(1);
    double* gU = want_u ? grads[0].raw() : nullptr;
    double* gV = want_v ? grads[1].raw() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n_in; ++i) {
        for (std::size_t j = 0; j < n_out; ++j) {
          const std::size_t ij = (b * n_in + i) * n_out + j;
          const double gij = g[ij];
          const std::size_t vj = (b * n_out + j) * dim;
          if (want_u) {
            double* gu = gU + ij * dim;
            for (std::size_t d = 0; d < dim; ++d) gu[d] += gij * V[vj + d];
          }
          if (want_v) {
            const double* u = U + ij * dim;
            for (std::size_t d = 0; d < dim; ++d) gV[vj + d] += gij * u[d];
          }
        }
      }
    }
  };
  return u_hat.tape()->record(std::move(out), {u_hat, v}, backward);
}

Var dynamic_routing(Var u_hat, std::size_t iterations, RoutingTrace* trace) {
  if (iterations < 1) throw Error("dynamic_routing: iterations must be >= 1");
  const Shape& us = u_hat.shape();
  if (us.size() != 3 && us.size() != 4) {
    throw ShapeError("dynamic_routing: predictions must be (I, J, D) or (B, I, J, D), got " +
                     shape_str(us));
  }
  Tape& tape = *u_hat.tape();
  Var logits = tape.constant(Tensor(drop_last(us), 0.0));
  Var v;
  for (std::size_t r = 0; r < iterations; ++r) {
    Var c = softmax_last(logits);
    if (trace) trace->coefficients.push_back(c.value());
    v = squash(weighted_capsule_sum(c, u_hat));
    if (r + 1 < iterations) logits = add(logits, capsule_agreement(u_hat, v));
  }
  return v;
}

Tensor dynamic_routing(const Tensor& u_hat, std::size_t iterations, RoutingTrace* trace) {
  Tape tape;
  return dynamic_routing(tape.constant(u_hat), iterations, trace).value();
}

Var capsule_lengths(Var v) {
  const Tensor& x = v.value();
  const auto [rows, dim] = rows_by_last(x.shape(), "capsule_lengths");
  Shape out_shape = drop_last(x.shape());
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) sq += x[r * dim + d] * x[r * dim + d];
    out[r] = std::sqrt(sq);
  }
  auto backward = [v, rows, dim](const Tensor& g, GradSlots& grads) {
    const Tensor& x = v.value();
    Tensor& gx = grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) sq += x[r * dim + d] * x[r * dim + d];
      const double k = g[r] / std::sqrt(sq + kLengthEpsilon);
      for (std::size_t d = 0; d < dim; ++d) gx[r * dim + d] += k * x[r * dim + d];
    }
  };
  return v.tape()->record(std::move(out), {v}, backward);
}

Tensor capsule_lengths(const Tensor& v) {
  Tape tape;
  return capsule_lengths(tape.constant(v)).value();
}

}  // namespace capstraffic
