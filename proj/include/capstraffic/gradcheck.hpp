#pragma once

#include <functional>
#include <span>
#include <vector>

#include "capstraffic/autograd.hpp"

namespace capstraffic {

// Builds a one-element loss on `tape` from tracked inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

// Max over every coordinate of every input of
//   |analytic - central difference| / max(1, |analytic|)
// with central differences taken at step h. Throws NumericError when the
// loss is non-finite at any probed point.
double finite_difference_check(const LossBuilder& loss, const std::vector<Tensor>& inputs,
                               double h = 1e-5);

// Single-input convenience form.
double finite_difference_check(const std::function<Var(Tape&, Var)>& loss, const Tensor& x,
                               double h = 1e-5);

}  // namespace capstraffic
