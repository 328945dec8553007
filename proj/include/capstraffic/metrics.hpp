#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>

#include "capstraffic/tensor.hpp"
#include "capstraffic/windowing.hpp"

namespace capstraffic {

struct MetricsReport {
  double mre = 0.0;   // fraction, over non-zero targets only
  double mae = 0.0;   // km/h
  double rmse = 0.0;  // km/h
  std::size_t sample_count = 0;           // I, number of speed values
  std::size_t excluded_zero_targets = 0;  // targets left out of the MRE
};

// Mean relative error, mean absolute error and root mean squared error of
// speeds in km/h. Zero targets are skipped by the MRE (and counted) but kept
// by MAE and RMSE.
MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth);

std::string to_json(const MetricsReport& report);

// Network outputs in [0, 1] scale -> km/h, clamping to [0, 1] first.
Tensor to_speeds(const Tensor& raw, const ScalingStats& stats);

// Labels of the dataset in km/h, (S, L*N).
Tensor label_speeds(const WindowedDataset& data);

// Last observed input row repeated for every horizon step, in km/h.
Tensor persistence_forecast(const WindowedDataset& data);
MetricsReport persistence_baseline(const WindowedDataset& data);

// Writes <prefix>_true.csv, _pred.csv, _err.csv and the matching .pgm
// images. Values map linearly from the shared [min, max] of truth and
// prediction to 0..255; the error image maps |pred - truth| over the same
// range width, so zero error is black.
void dump_comparison(const Tensor& truth, const Tensor& pred, const std::filesystem::path& prefix);

// Plain numeric CSV (no header) written by dump_comparison.
Tensor read_matrix_csv(const std::filesystem::path& path);

}  // namespace capstraffic
