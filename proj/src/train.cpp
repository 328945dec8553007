#include "capstraffic/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "capstraffic/error.hpp"
#include "capstraffic/parallel.hpp"
#include "capstraffic/random.hpp"

namespace capstraffic {

TrainResult train(Model model, const WindowedDataset& data, const TrainConfig& config) {
  const TaskSpec& task = model.task();
  if (data.task.history != task.history || data.task.segments != task.segments ||
      data.task.horizon != task.horizon) {
    throw GeometryError("dataset geometry " + describe(data.task) + " does not match model " +
                        describe(task));
  }
  if (config.batch_size == 0) throw Error("batch size must be >= 1");

  Adam adam(config.adam);
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double last_finite = std::nan("");
  std::vector<Tensor> grads;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      auto [inputs, labels] =
          gather_batch(data, std::span<const std::size_t>(order).subspan(begin, end - begin));

      Tape tape;
      std::vector<Var> params;
      params.reserve(model.parameters().size());
      for (const auto& p : model.parameters()) params.push_back(tape.variable(p.value));
      Var pred = model.forward(params, tape.constant(std::move(inputs)));
      Var loss = mse_loss(pred, tape.constant(std::move(labels)));
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << adam.steps() + 1 << "; last finite loss "
            << last_finite;
        throw NumericError(msg.str());
      }
      last_finite = value;

      const Gradients g = tape.backward(loss);
      grads.clear();
      for (const Var& p : params) grads.push_back(g[p]);
      adam.step(model.parameters(), grads);
      loss_sum += value;
      ++batches;
    }
    const double mean_loss = batches ? loss_sum / double(batches) : 0.0;
    result.epoch_losses.push_back(mean_loss);
    if (config.on_epoch) {
      config.on_epoch({epoch, mean_loss, adam.steps(), adam.learning_rate()});
    }
  }

  Checkpoint& ck = result.checkpoint;
  ck.model = model.spec();
  ck.task = model.task();
  ck.parameters = std::move(model.parameters());
  ck.adam = adam.config();
  ck.step = adam.steps();
  ck.adam_first = adam.first_moments();
  ck.adam_second = adam.second_moments();
  ck.stats = data.stats;
  ck.seed = config.seed;
  return result;
}

Tensor predict_raw(const Model& model, const Tensor& inputs, std::size_t batch_size) {
  const TaskSpec& task = model.task();
  if (inputs.rank() != 3 || inputs.dim(1) != task.history || inputs.dim(2) != task.segments) {
    throw GeometryError("predict: expected inputs (S, " + std::to_string(task.history) + ", " +
                        std::to_string(task.segments) + "), got " + shape_str(inputs.shape()));
  }
  if (batch_size == 0) throw Error("batch size must be >= 1");
  const std::size_t samples = inputs.dim(0);
  const std::size_t image = task.history * task.segments;
  const std::size_t width = task.label_size();
  const std::size_t batches = (samples + batch_size - 1) / batch_size;
  Tensor out({samples, width});
  parallel_for(batches, [&](std::size_t first, std::size_t last) {
    for (std::size_t b = first; b < last; ++b) {
      const std::size_t begin = b * batch_size;
      const std::size_t count = std::min(batch_size, samples - begin);
      Tensor chunk({count, task.history, task.segments},
                   std::vector<double>(inputs.raw() + begin * image,
                                       inputs.raw() + (begin + count) * image));
      const Tensor raw = model.forward(chunk);
      std::copy_n(raw.raw(), count * width, out.raw() + begin * width);
    }
  });
  return out;
}

Tensor predict(const Checkpoint& checkpoint, const Tensor& window) {
  const TaskSpec& task = checkpoint.task;
  if (window.rank() != 2 || window.dim(0) != task.history || window.dim(1) != task.segments) {
    throw GeometryError("predict: window must be " + std::to_string(task.history) + "x" +
                        std::to_string(task.segments) + ", got " + shape_str(window.shape()));
  }
  Tensor scaled({1, task.history, task.segments});
  for (std::size_t i = 0; i < window.size(); ++i) scaled[i] = checkpoint.stats.scale(window[i]);
  const Tensor raw = model_from(checkpoint).forward(scaled);
  Tensor out({task.label_size()});
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = checkpoint.stats.unscale(std::clamp(raw[i], 0.0, 1.0));
  }
  return out;
}

}  // namespace capstraffic
