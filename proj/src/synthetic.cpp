#include "capstraffic/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "capstraffic/error.hpp"
#include "capstraffic/random.hpp"

namespace capstraffic {

namespace {

struct SensorShape {
  double free_flow;
  double morning_depth, evening_depth;
  double morning_hour, evening_hour;
  double loading;
};

double dip(double hour, double centre, double width) {
  const double z = (hour - centre) / width;
  return std::exp(-0.5 * z * z);
}

}  // namespace

SpeedMatrix generate_synthetic(std::size_t sensors, std::size_t days, std::uint64_t seed,
                               const SyntheticProfile& profile) {
  if (sensors == 0 || days == 0) throw DataError("generate_synthetic: sensors and days must be >= 1");
  if (profile.missing_rate < 0.0 || profile.missing_rate >= 1.0) {
    throw DataError("generate_synthetic: missing rate must be in [0, 1)");
  }
  if (profile.start % kSecondsPerDay != 0) {
    throw DataError("generate_synthetic: start must be a midnight");
  }
  Rng rng(seed);
  std::vector<SensorShape> shapes(sensors);
  for (auto& s : shapes) {
    s.free_flow = rng.uniform(profile.free_flow_min, profile.free_flow_max);
    s.morning_depth = profile.morning_depth * rng.uniform(0.8, 1.2);
    s.evening_depth = profile.evening_depth * rng.uniform(0.8, 1.2);
    s.morning_hour = profile.morning_hour + rng.uniform(-0.5, 0.5);
    s.evening_hour = profile.evening_hour + rng.uniform(-0.5, 0.5);
    s.loading = rng.uniform(0.5, 1.5);
  }

  const std::size_t rows = days * kSlotsPerDay;
  SpeedMatrix m;
  m.sensor_ids.reserve(sensors);
  for (std::size_t c = 0; c < sensors; ++c) {
    char id[24];
    std::snprintf(id, sizeof id, "S%03zu", c + 1);
    m.sensor_ids.emplace_back(id);
  }
  m.timestamps.resize(rows);
  m.values.resize(rows * sensors);
  m.missing.assign(rows * sensors, 0);

  const double phi = profile.latent_persistence;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - phi * phi));
  double latent = rng.normal();
  double day_offset = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t slot = r % kSlotsPerDay;
    if (slot == 0) day_offset = rng.normal();
    latent = phi * latent + innovation * rng.normal();
    m.timestamps[r] = profile.start + static_cast<std::int64_t>(r) * kCadenceSeconds;
    const double hour = (double(slot) + 0.5) * 24.0 / double(kSlotsPerDay);
    for (std::size_t c = 0; c < sensors; ++c) {
      const SensorShape& s = shapes[c];
      const double mean =
          s.free_flow * (1.0 - s.morning_depth * dip(hour, s.morning_hour, profile.dip_width_hours) -
                         s.evening_depth * dip(hour, s.evening_hour, profile.dip_width_hours));
      const double shared = s.loading * (day_offset + 1.5 * latent);
      const double reading = mean + profile.noise * (shared + 0.5 * rng.normal());
      const bool absent = rng.uniform() < profile.missing_rate;
      m.values[r * sensors + c] = absent ? 0.0 : std::max(0.0, reading);
      m.missing[r * sensors + c] = absent ? 1 : 0;
    }
  }
  return m;
}

}  // namespace capstraffic
