#include "capstraffic/speed_matrix.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "capstraffic/error.hpp"

namespace capstraffic {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

bool parse_int(std::string_view text, int& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

[[noreturn]] void fail_line(const std::string& source, std::size_t line, const std::string& what) {
  throw DataError(source + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::size_t SpeedMatrix::missing_count() const {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

std::size_t SpeedMatrix::slot_index(std::size_t r) const {
  const std::int64_t t = timestamps[r];
  return static_cast<std::size_t>((t - floor_div(t, kSecondsPerDay) * kSecondsPerDay) /
                                  kCadenceSeconds);
}

std::int64_t SpeedMatrix::day_index(std::size_t r) const {
  return floor_div(timestamps[r], kSecondsPerDay);
}

SpeedMatrix SpeedMatrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw DataError("slice_rows: range out of bounds");
  SpeedMatrix out;
  out.sensor_ids = sensor_ids;
  out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  out.values.assign(values.begin() + begin * cols(), values.begin() + end * cols());
  out.missing.assign(missing.begin() + begin * cols(), missing.begin() + end * cols());
  return out;
}

void SpeedMatrix::validate() const {
  if (cols() == 0) throw DataError("speed matrix has no sensors");
  if (values.size() != rows() * cols() || missing.size() != values.size()) {
    throw DataError("speed matrix buffers do not match " + std::to_string(rows()) + "x" +
                    std::to_string(cols()));
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    if (timestamps[r] % kCadenceSeconds != 0) {
      throw DataError("row " + std::to_string(r) + ": timestamp " +
                      format_timestamp(timestamps[r]) + " is off the 15-minute grid");
    }
    if (r > 0 && timestamps[r] <= timestamps[r - 1]) {
      throw DataError("row " + std::to_string(r) + ": timestamps not strictly increasing");
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!missing[i] && !(values[i] >= 0.0 && std::isfinite(values[i]))) {
      throw DataError("row " + std::to_string(i / cols()) + ", sensor '" +
                      sensor_ids[i % cols()] + "': invalid speed");
    }
  }
}

std::int64_t parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  auto bad = [&]() -> DataError {
    return DataError("invalid timestamp '" + std::string(text) +
                     "' (expected YYYY-MM-DDTHH:MM[:SS][Z])");
  };
  std::string_view s = trim(text);
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  if (s.size() != 16 && s.size() != 19) throw bad();
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') throw bad();
  if (s.size() == 19 && s[16] != ':') throw bad();
  int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), mo) ||
      !parse_int(s.substr(8, 2), d) || !parse_int(s.substr(11, 2), hh) ||
      !parse_int(s.substr(14, 2), mm) || (s.size() == 19 && !parse_int(s.substr(17, 2), ss))) {
    throw bad();
  }
  const year_month_day date{year{y}, month{static_cast<unsigned>(mo)},
                            day{static_cast<unsigned>(d)}};
  if (!date.ok() || hh > 23 || mm > 59 || ss > 59 || hh < 0 || mm < 0 || ss < 0) throw bad();
  const std::int64_t days_since = sys_days{date}.time_since_epoch().count();
  return days_since * kSecondsPerDay + hh * 3600 + mm * 60 + ss;
}

std::string format_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  const std::int64_t day_number = floor_div(seconds, kSecondsPerDay);
  const std::int64_t rem = seconds - day_number * kSecondsPerDay;
  const year_month_day date{sys_days{days{day_number}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                static_cast<int>(rem % 60));
  return buf;
}

SpeedMatrix parse_csv(std::istream& in, const std::string& source) {
  SpeedMatrix m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<double> row_values;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.front() != "timestamp") {
        fail_line(source, line_no, "header must start with 'timestamp'");
      }
      if (fields.size() < 2) fail_line(source, line_no, "header names no sensors");
      std::set<std::string_view> seen;
      for (std::size_t k = 1; k < fields.size(); ++k) {
        if (fields[k].empty()) fail_line(source, line_no, "empty sensor id");
        if (!seen.insert(fields[k]).second) {
          fail_line(source, line_no, "duplicate sensor id '" + std::string(fields[k]) + "'");
        }
        m.sensor_ids.emplace_back(fields[k]);
      }
      have_header = true;
      continue;
    }
    if (fields.size() != m.cols() + 1) {
      fail_line(source, line_no,
                "expected " + std::to_string(m.cols() + 1) + " fields, got " +
                    std::to_string(fields.size()));
    }
    std::int64_t t = 0;
    try {
      t = parse_timestamp(fields[0]);
    } catch (const DataError& e) {
      fail_line(source, line_no, e.what());
    }
    if (t % kCadenceSeconds != 0) {
      fail_line(source, line_no, "timestamp " + std::string(fields[0]) +
                                     " is not on the 15-minute grid");
    }
    if (!m.timestamps.empty()) {
      const std::int64_t prev = m.timestamps.back();
      if (t <= prev) {
        fail_line(source, line_no, "timestamp " + std::string(fields[0]) +
                                       " is not after the previous row " +
                                       format_timestamp(prev));
      }
      if (t - prev != kCadenceSeconds) {
        fail_line(source, line_no, "cadence gap: " + format_timestamp(prev) + " -> " +
                                       std::string(fields[0]));
      }
    }
    m.timestamps.push_back(t);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const std::string_view f = fields[k];
      if (f.empty()) {
        m.values.push_back(0.0);
        m.missing.push_back(1);
        continue;
      }
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        fail_line(source, line_no, "sensor '" + m.sensor_ids[k - 1] + "': not a number '" +
                                       std::string(f) + "'");
      }
      if (v < 0.0) {
        fail_line(source, line_no, "sensor '" + m.sensor_ids[k - 1] + "': negative speed " +
                                       std::string(f));
      }
      m.values.push_back(v);
      m.missing.push_back(0);
    }
  }
  if (!have_header) throw DataError(source + ": empty file");
  if (m.rows() == 0) throw DataError(source + ": no data rows");
  return m;
}

SpeedMatrix load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(const SpeedMatrix& matrix, std::ostream& out) {
  out << "timestamp";
  for (const auto& id : matrix.sensor_ids) out << ',' << id;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    out << format_timestamp(matrix.timestamps[r]);
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      out << ',';
      if (matrix.is_missing(r, c)) continue;
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, matrix.value(r, c));
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

void write_csv(const SpeedMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(matrix, out);
  if (!out) throw IoError("write failed: " + path.string());
}

SpeedMatrix impute(const SpeedMatrix& target, const SpeedMatrix& reference) {
  if (target.sensor_ids != reference.sensor_ids) {
    throw DataError("impute: reference sensors differ from target sensors");
  }
  const std::size_t n = reference.cols();
  std::vector<double> slot_sum(kSlotsPerDay * n, 0.0), sensor_sum(n, 0.0);
  std::vector<std::size_t> slot_count(kSlotsPerDay * n, 0), sensor_count(n, 0);
  for (std::size_t r = 0; r < reference.rows(); ++r) {
    const std::size_t slot = reference.slot_index(r);
    for (std::size_t c = 0; c < n; ++c) {
      if (reference.is_missing(r, c)) continue;
      slot_sum[slot * n + c] += reference.value(r, c);
      ++slot_count[slot * n + c];
      sensor_sum[c] += reference.value(r, c);
      ++sensor_count[c];
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (sensor_count[c] == 0) {
      throw DataError("impute: sensor '" + reference.sensor_ids[c] + "' has no readings");
    }
  }
  SpeedMatrix out = target;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const std::size_t slot = out.slot_index(r);
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = r * n + c;
      if (!out.missing[i]) continue;
      const std::size_t k = slot * n + c;
      out.values[i] = slot_count[k] ? slot_sum[k] / double(slot_count[k])
                                    : sensor_sum[c] / double(sensor_count[c]);
      out.missing[i] = 0;
    }
  }
  return out;
}

SpeedMatrix drop_sparse_days(const SpeedMatrix& matrix, double max_missing_fraction) {
  SpeedMatrix out;
  out.sensor_ids = matrix.sensor_ids;
  const std::size_t n = matrix.cols();
  std::size_t begin = 0;
  while (begin < matrix.rows()) {
    std::size_t end = begin;
    std::size_t absent = 0;
    while (end < matrix.rows() && matrix.day_index(end) == matrix.day_index(begin)) {
      for (std::size_t c = 0; c < n; ++c) absent += matrix.is_missing(end, c);
      ++end;
    }
    const double fraction = double(absent) / double((end - begin) * n);
    if (fraction <= max_missing_fraction) {
      out.timestamps.insert(out.timestamps.end(), matrix.timestamps.begin() + begin,
                            matrix.timestamps.begin() + end);
      out.values.insert(out.values.end(), matrix.values.begin() + begin * n,
                        matrix.values.begin() + end * n);
      out.missing.insert(out.missing.end(), matrix.missing.begin() + begin * n,
                         matrix.missing.begin() + end * n);
    }
    begin = end;
  }
  return out;
}

TrainEvalSplit split_train_eval(const SpeedMatrix& matrix, std::int64_t boundary) {
  const auto it = std::lower_bound(matrix.timestamps.begin(), matrix.timestamps.end(), boundary);
  const std::size_t cut = static_cast<std::size_t>(it - matrix.timestamps.begin());
  if (cut == 0) {
    throw DataError("split boundary " + format_timestamp(boundary) +
                    " leaves the training set empty");
  }
  if (cut == matrix.rows()) {
    throw DataError("split boundary " + format_timestamp(boundary) +
                    " leaves the evaluation set empty");
  }
  return {matrix.slice_rows(0, cut), matrix.slice_rows(cut, matrix.rows())};
}

std::int64_t default_split_boundary(const SpeedMatrix& matrix, double fraction) {
  if (matrix.rows() < 2) throw DataError("cannot split fewer than two rows");
  const std::int64_t first = matrix.day_index(0);
  const std::int64_t last = matrix.day_index(matrix.rows() - 1);
  const std::int64_t span = last - first + 1;
  std::int64_t day = first + static_cast<std::int64_t>(std::llround(fraction * double(span)));
  day = std::clamp(day, first + 1, std::max(first + 1, last));
  std::int64_t boundary = day * kSecondsPerDay;
  if (boundary <= matrix.timestamps.front() || boundary > matrix.timestamps.back()) {
    // Fewer than two calendar days: fall back to a row split.
    const auto cut = static_cast<std::size_t>(fraction * double(matrix.rows()));
    boundary = matrix.timestamps[std::clamp<std::size_t>(cut, 1, matrix.rows() - 1)];
  }
  return boundary;
}

}  // namespace capstraffic
