#include "capstraffic/windowing.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "capstraffic/error.hpp"

namespace capstraffic {

ScalingStats ScalingStats::from(const SpeedMatrix& train) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < train.values.size(); ++i) {
    if (train.missing[i]) continue;
    lo = std::min(lo, train.values[i]);
    hi = std::max(hi, train.values[i]);
  }
  if (!(hi > lo)) {
    throw DataError("scaling statistics are degenerate (min == max or no readings)");
  }
  return {lo, hi};
}

std::size_t window_count(std::size_t rows, const TaskSpec& task) {
  const std::size_t span = task.history + task.horizon;
  return rows >= span ? rows - span + 1 : 0;
}

WindowedDataset make_windows(const SpeedMatrix& matrix, const TaskSpec& task,
                             const ScalingStats& stats) {
  task.validate();
  if (matrix.cols() != task.segments) {
    throw GeometryError("task " + describe(task) + " needs " + std::to_string(task.segments) +
                        " sensors, data has " + std::to_string(matrix.cols()));
  }
  if (matrix.missing_count() != 0) {
    throw DataError("make_windows: matrix still has " + std::to_string(matrix.missing_count()) +
                    " missing readings; impute first");
  }
  // Contiguous blocks [begin, end).
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  std::size_t total = 0;
  for (std::size_t begin = 0; begin < matrix.rows();) {
    std::size_t end = begin + 1;
    while (end < matrix.rows() &&
           matrix.timestamps[end] - matrix.timestamps[end - 1] == kCadenceSeconds) {
      ++end;
    }
    blocks.emplace_back(begin, end);
    total += window_count(end - begin, task);
    begin = end;
  }
  if (total == 0) {
    throw DataError("make_windows: need at least " +
                    std::to_string(task.history + task.horizon) +
                    " contiguous rows, longest block has fewer");
  }

  const std::size_t m = task.history, n = task.segments, l = task.horizon;
  WindowedDataset out{Tensor({total, m, n}), Tensor({total, l * n}), stats, task, {}};
  out.label_times.reserve(total);
  std::size_t s = 0;
  for (const auto& [begin, end] : blocks) {
    for (std::size_t start = begin; start + m + l <= end; ++start, ++s) {
      double* in = out.inputs.raw() + s * m * n;
      for (std::size_t i = 0; i < m * n; ++i) in[i] = stats.scale(matrix.values[start * n + i]);
      double* lab = out.labels.raw() + s * l * n;
      for (std::size_t i = 0; i < l * n; ++i) {
        lab[i] = stats.scale(matrix.values[(start + m) * n + i]);
      }
      out.label_times.push_back(matrix.timestamps[start + m]);
    }
  }
  return out;
}

std::pair<Tensor, Tensor> gather_batch(const WindowedDataset& data,
                                       std::span<const std::size_t> indices) {
  const std::size_t m = data.task.history, n = data.task.segments;
  const std::size_t ln = data.task.label_size();
  Tensor inputs({indices.size(), m, n});
  Tensor labels({indices.size(), ln});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t s = indices[k];
    if (s >= data.size()) throw Error("gather_batch: sample index out of range");
    std::copy_n(data.inputs.raw() + s * m * n, m * n, inputs.raw() + k * m * n);
    std::copy_n(data.labels.raw() + s * ln, ln, labels.raw() + k * ln);
  }
  return {std::move(inputs), std::move(labels)};
}

}  // namespace capstraffic
