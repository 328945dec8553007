#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "capstraffic/speed_matrix.hpp"
#include "capstraffic/task.hpp"
#include "capstraffic/tensor.hpp"

namespace capstraffic {

// Global min-max scaling to [0, 1].
struct ScalingStats {
  double min = 0.0;
  double max = 1.0;

  // Statistics over the present readings of `train`. Throws DataError when
  // all readings are equal.
  static ScalingStats from(const SpeedMatrix& train);

  double scale(double speed) const { return (speed - min) / (max - min); }
  double unscale(double scaled) const { return min + scaled * (max - min); }

  friend bool operator==(const ScalingStats&, const ScalingStats&) = default;
};

// Paired samples: inputs (S, M, N) scaled images and labels (S, L*N) scaled
// targets laid out step-major, label[l * N + n] = segment n at step l + 1.
struct WindowedDataset {
  Tensor inputs;
  Tensor labels;
  ScalingStats stats;
  TaskSpec task;
  std::vector<std::int64_t> label_times;  // timestamp of each sample's first label row

  std::size_t size() const { return inputs.dim(0); }
};

// Stride-1 windows over every contiguous block of rows (no window spans a
// timestamp gap). Requires an imputed matrix with task.segments columns and
// at least one block of M + L rows.
WindowedDataset make_windows(const SpeedMatrix& matrix, const TaskSpec& task,
                             const ScalingStats& stats);

// Number of windows a contiguous block of `rows` produces.
std::size_t window_count(std::size_t rows, const TaskSpec& task);

// Gathers samples by index into (B, M, N) inputs and (B, L*N) labels.
std::pair<Tensor, Tensor> gather_batch(const WindowedDataset& data,
                                       std::span<const std::size_t> indices);

}  // namespace capstraffic
