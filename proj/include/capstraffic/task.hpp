#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace capstraffic {

// Forecast geometry: predict `horizon` (L) steps for `segments` (N) road
// segments from `history` (M) past steps. Input images are M x N, labels L*N.
struct TaskSpec {
  std::string name;
  std::size_t horizon = 1;
  std::size_t history = 10;
  std::size_t segments = 20;

  // task1..task4: (1,10,20), (2,10,20), (1,14,50), (2,14,50).
  static TaskSpec named(std::string_view name);

  std::size_t label_size() const { return horizon * segments; }
  // Throws GeometryError unless every dimension is positive.
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

std::string describe(const TaskSpec& task);

}  // namespace capstraffic
