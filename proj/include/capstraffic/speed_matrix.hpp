#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace capstraffic {

inline constexpr std::int64_t kCadenceSeconds = 15 * 60;
inline constexpr std::int64_t kSecondsPerDay = 24 * 60 * 60;
inline constexpr std::size_t kSlotsPerDay = kSecondsPerDay / kCadenceSeconds;

// T x N speed record in km/h. Rows are time steps on the 15-minute grid,
// columns are sensors. Timestamps are UTC seconds since the epoch.
struct SpeedMatrix {
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> sensor_ids;
  std::vector<double> values;         // row-major, rows() * cols()
  std::vector<std::uint8_t> missing;  // 1 where no reading exists

  std::size_t rows() const { return timestamps.size(); }
  std::size_t cols() const { return sensor_ids.size(); }
  double value(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }
  std::size_t missing_count() const;

  // Time-of-day slot 0..95 and day number of a row.
  std::size_t slot_index(std::size_t r) const;
  std::int64_t day_index(std::size_t r) const;

  // Rows [begin, end).
  SpeedMatrix slice_rows(std::size_t begin, std::size_t end) const;

  // Checks sizes, strictly increasing grid-aligned timestamps and
  // non-negative present values. Throws DataError.
  void validate() const;
};

// "YYYY-MM-DDTHH:MM[:SS][Z]" (a space may replace the T). UTC only.
std::int64_t parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t seconds);

// CSV: header "timestamp,<id>,...,<id>"; each body row an ISO-8601
// timestamp followed by one field per sensor, empty meaning missing.
// Rows must be strictly increasing with no cadence gaps. Errors carry the
// 1-based line number.
SpeedMatrix load_csv(const std::filesystem::path& path);
SpeedMatrix parse_csv(std::istream& in, const std::string& source = "<stream>");
void write_csv(const SpeedMatrix& matrix, const std::filesystem::path& path);
void write_csv(const SpeedMatrix& matrix, std::ostream& out);

// Fills every missing cell of `target` with the mean of `reference`'s present
// readings of the same sensor in the same time-of-day slot, falling back to
// that sensor's overall mean in `reference`. Present values are untouched.
// Throws DataError when a sensor has no reading at all in `reference`.
SpeedMatrix impute(const SpeedMatrix& target, const SpeedMatrix& reference);
inline SpeedMatrix impute(const SpeedMatrix& matrix) { return impute(matrix, matrix); }

// Drops calendar days where more than `max_missing_fraction` of the day's
// cells are missing. The result may contain gaps between days.
SpeedMatrix drop_sparse_days(const SpeedMatrix& matrix, double max_missing_fraction = 0.5);

struct TrainEvalSplit {
  SpeedMatrix train;  // timestamps < boundary
  SpeedMatrix eval;   // timestamps >= boundary
};

// Throws DataError when either side would be empty.
TrainEvalSplit split_train_eval(const SpeedMatrix& matrix, std::int64_t boundary);

// Midnight closest to `fraction` of the way through the covered days.
std::int64_t default_split_boundary(const SpeedMatrix& matrix, double fraction = 0.75);

}  // namespace capstraffic
