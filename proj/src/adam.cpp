#include "capstraffic/adam.hpp"

#include <cmath>
#include <string>

#include "capstraffic/error.hpp"

namespace capstraffic {

Adam::Adam(AdamConfig config, std::uint64_t step, std::vector<Tensor> first,
           std::vector<Tensor> second)
    : config_(config), step_(step), m_(std::move(first)), v_(std::move(second)) {
  if (m_.size() != v_.size()) throw Error("Adam: moment lists differ in length");
}

double Adam::learning_rate() const {
  return config_.lr0 * std::pow(config_.decay, static_cast<double>(step_));
}

void Adam::step(std::span<Parameter> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw Error("Adam: " + std::to_string(params.size()) + " parameters but " +
                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k].value, grads[k], "Adam");
    for (double g : grads[k].data()) {
      if (!std::isfinite(g)) {
        throw NumericError("Adam: non-finite gradient for parameter '" + params[k].name + "'");
      }
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");

  const double rate = learning_rate();
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].value.raw();
    double* m = m_[k].raw();
    double* v = v_[k].raw();
    const double* g = grads[k].raw();
    const std::size_t n = grads[k].size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

}  // namespace capstraffic
