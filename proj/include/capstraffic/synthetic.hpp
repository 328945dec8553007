#pragma once

#include <cstddef>
#include <cstdint>

#include "capstraffic/speed_matrix.hpp"

namespace capstraffic {

// Daily speed profile of the synthetic generator. Each sensor gets a
// free-flow speed with morning and evening rush-hour dips (Gaussian in the
// hour of day, depths as fractions of free flow); per-sensor jitter is drawn
// from the seed. `noise` (km/h) scales every stochastic term: a per-day
// offset and a slowly varying AR(1) latent, both shared by all sensors with
// per-sensor loadings, plus independent reading noise.
struct SyntheticProfile {
  double free_flow_min = 45.0;
  double free_flow_max = 70.0;
  double morning_hour = 8.0;
  double evening_hour = 18.0;
  double morning_depth = 0.40;
  double evening_depth = 0.35;
  double dip_width_hours = 1.25;
  double noise = 2.0;
  double latent_persistence = 0.95;  // AR(1) coefficient per 15-minute step
  double missing_rate = 0.0;         // independent per-cell probability
  std::int64_t start = 1451606400;   // 2016-01-01T00:00:00Z
};

SpeedMatrix generate_synthetic(std::size_t sensors, std::size_t days, std::uint64_t seed,
                               const SyntheticProfile& profile = {});

}  // namespace capstraffic
