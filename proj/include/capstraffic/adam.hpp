#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "capstraffic/layers.hpp"

namespace capstraffic {

struct AdamConfig {
  double lr0 = 0.0005;
  double decay = 0.9999;  // per optimizer step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction and an exponentially decaying step size. The
// update performed at step t (1-based) uses lr0 * decay^(t-1).
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Restores a saved state; moments must match the parameters later passed to step().
  Adam(AdamConfig config, std::uint64_t step, std::vector<Tensor> first,
       std::vector<Tensor> second);

  // Applies one update. Throws NumericError naming the first parameter that
  // carries a non-finite gradient; nothing is modified in that case.
  void step(std::span<Parameter> params, std::span<const Tensor> grads);

  // Rate that the next update will use: lr0 * decay^steps().
  double learning_rate() const;

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace capstraffic
