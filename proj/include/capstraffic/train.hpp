#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "capstraffic/adam.hpp"
#include "capstraffic/checkpoint.hpp"
#include "capstraffic/model.hpp"
#include "capstraffic/windowing.hpp"

namespace capstraffic {

struct EpochStats {
  std::size_t epoch = 0;    // 1-based
  double mean_loss = 0.0;   // mean of the epoch's minibatch losses
  std::uint64_t step = 0;   // optimizer steps so far
  double learning_rate = 0.0;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;  // minibatch shuffling
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

// Minibatch Adam on the MSE between model outputs and scaled labels. Samples
// are reshuffled every epoch from `config.seed`; identical inputs give
// bit-identical results. Throws NumericError on a non-finite loss, naming the
// step and the last finite loss.
TrainResult train(Model model, const WindowedDataset& data, const TrainConfig& config);

// Raw [0, 1]-scale outputs (S, L*N) for inputs (S, M, N). Batches fan out over
// worker_count() threads; the result does not depend on the thread count.
Tensor predict_raw(const Model& model, const Tensor& inputs, std::size_t batch_size = 64);

// Forecast for one M x N window of speeds in km/h: scale, forward, clamp to
// [0, 1], unscale. Returns L*N speeds, step-major.
Tensor predict(const Checkpoint& checkpoint, const Tensor& window);

}  // namespace capstraffic
