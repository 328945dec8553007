#include "capstraffic/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "capstraffic/error.hpp"

namespace capstraffic {

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("compute_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " targets");
  }
  MetricsReport r;
  r.sample_count = pred.size();
  if (pred.empty()) return r;
  double rel = 0.0, abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0.0) throw DataError("compute_metrics: negative target speed");
    const double err = std::abs(truth[i] - pred[i]);
    abs_sum += err;
    sq_sum += err * err;
    if (truth[i] == 0.0) {
      ++r.excluded_zero_targets;
    } else {
      rel += err / truth[i];
    }
  }
  const double n = static_cast<double>(pred.size());
  const std::size_t rel_terms = pred.size() - r.excluded_zero_targets;
  r.mre = rel_terms ? rel / static_cast<double>(rel_terms) : 0.0;
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  return r;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["mre"] = report.mre;
  j["mae"] = report.mae;
  j["rmse"] = report.rmse;
  j["sample_count"] = report.sample_count;
  j["excluded_zero_targets"] = report.excluded_zero_targets;
  return j.dump(2);
}

Tensor to_speeds(const Tensor& raw, const ScalingStats& stats) {
  Tensor out(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = stats.unscale(std::clamp(raw[i], 0.0, 1.0));
  }
  return out;
}

Tensor label_speeds(const WindowedDataset& data) {
  Tensor out(data.labels.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data.stats.unscale(data.labels[i]);
  return out;
}

Tensor persistence_forecast(const WindowedDataset& data) {
  const std::size_t m = data.task.history, n = data.task.segments, l = data.task.horizon;
  Tensor out(data.labels.shape());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const double* last = data.inputs.raw() + (s * m + (m - 1)) * n;
    for (std::size_t step = 0; step < l; ++step) {
      for (std::size_t c = 0; c < n; ++c) {
        out[s * l * n + step * n + c] = data.stats.unscale(last[c]);
      }
    }
  }
  return out;
}

MetricsReport persistence_baseline(const WindowedDataset& data) {
  const Tensor pred = persistence_forecast(data);
  const Tensor truth = label_speeds(data);
  return compute_metrics(pred.data(), truth.data());
}

namespace {

void write_matrix_csv(const Tensor& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t rows = m.dim(0), cols = m.size() / rows;
  char buf[64];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out << ',';
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, m[r * cols + c]);
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_pgm(const std::vector<unsigned char>& pixels, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

unsigned char to_gray(double fraction) {
  return static_cast<unsigned char>(std::lround(255.0 * std::clamp(fraction, 0.0, 1.0)));
}

}  // namespace

void dump_comparison(const Tensor& truth, const Tensor& pred, const std::filesystem::path& prefix) {
  require_same_shape(truth, pred, "dump_comparison");
  if (truth.rank() != 2) {
    throw ShapeError("dump_comparison: expected matrices, got " + shape_str(truth.shape()));
  }
  const std::size_t rows = truth.dim(0), cols = truth.dim(1);
  Tensor err(truth.shape());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::abs(pred[i] - truth[i]);

  if (prefix.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(prefix.parent_path(), ec);
    if (ec) throw IoError("cannot create " + prefix.parent_path().string() + ": " + ec.message());
  }
  const std::string base = prefix.string();
  write_matrix_csv(truth, base + "_true.csv");
  write_matrix_csv(pred, base + "_pred.csv");
  write_matrix_csv(err, base + "_err.csv");

  double lo = truth[0], hi = truth[0];
  for (std::size_t i = 0; i < truth.size(); ++i) {
    lo = std::min({lo, truth[i], pred[i]});
    hi = std::max({hi, truth[i], pred[i]});
  }
  const double width = hi - lo;
  auto image = [&](const Tensor& m, double offset) {
    std::vector<unsigned char> px(m.size(), 0);
    if (width > 0.0) {
      for (std::size_t i = 0; i < m.size(); ++i) px[i] = to_gray((m[i] - offset) / width);
    }
    return px;
  };
  write_pgm(image(truth, lo), rows, cols, base + "_true.pgm");
  write_pgm(image(pred, lo), rows, cols, base + "_pred.pgm");
  write_pgm(image(err, 0.0), rows, cols, base + "_err.pgm");
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::stringstream fields(line);
    std::string f;
    while (std::getline(fields, f, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc()) throw DataError(path.string() + ": bad number '" + f + "'");
      values.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw DataError(path.string() + ": ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": empty matrix");
  return Tensor({rows, cols}, std::move(values));
}

}  // namespace capstraffic
