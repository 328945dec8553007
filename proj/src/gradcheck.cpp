#include "capstraffic/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "capstraffic/error.hpp"

namespace capstraffic {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  const double value = loss(tape, vars).value().item();
  if (!std::isfinite(value)) throw NumericError("finite_difference_check: non-finite loss");
  return value;
}

}  // namespace

double finite_difference_check(const LossBuilder& loss, const std::vector<Tensor>& inputs,
                               double h) {
  if (!(h > 0.0)) throw Error("finite_difference_check: step must be positive");

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  Var out = loss(tape, vars);
  if (!std::isfinite(out.value().item())) {
    throw NumericError("finite_difference_check: non-finite loss");
  }
  const Gradients grads = tape.backward(out);

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads[vars[k]];
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = evaluate(loss, probe);
      probe[k][i] = x0 - h;
      const double down = evaluate(loss, probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_difference_check(const std::function<Var(Tape&, Var)>& loss, const Tensor& x,
                               double h) {
  return finite_difference_check(
      [&loss](Tape& tape, std::span<const Var> in) { return loss(tape, in[0]); }, {x}, h);
}

}  // namespace capstraffic
