// Finite-difference gradient checking. Always runs in double: the same op
// templates that train in float are instantiated at 64-bit so central
// differences with step 1e-4 are meaningful.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cdtk/tensor.hpp"

namespace cdtk {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
};

// Fixed linear functional of a tensor, used as a generic scalar loss when
// probing an op: well-scaled gradients everywhere, no extra nonlinearity.
template <typename T>
Tensor4<T> weighted_sum(Tape<T>& tape, const Tensor4<T>& x,
                        const std::vector<T>& coeffs) {
  if (coeffs.size() != x->size())
    throw ValidationError("weighted_sum: coefficient count mismatch");
  auto out = make_tensor<T>(1, 1, 1, 1);
  T acc = T(0);
  for (std::size_t i = 0; i < coeffs.size(); ++i)
    acc += coeffs[i] * x->value[i];
  out->value[0] = acc;
  if (x->requires_grad) {
    detail::ensure_grad(out);
    Tensor4<T> xc = x, oc = out;
    tape.record([xc, oc, coeffs]() {
      for (std::size_t i = 0; i < coeffs.size(); ++i)
        xc->grad[i] += oc->grad[0] * coeffs[i];
    });
  }
  return out;
}

// Relative error with an absolute floor: coordinates where both gradients
// are below 1e-6 are compared absolutely, so exact zeros do not blow up
// the ratio.
inline double grad_rel_err(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  if (m < 1e-6) return std::abs(a - b);
  return std::abs(a - b) / m;
}

// `build` must construct the scalar loss from the current values of
// `inputs` on the given tape. It is re-run twice per coordinate for the
// central difference, and once with backward for the analytic gradient.
template <typename BuildLoss>
GradCheckReport grad_check(std::span<const Tensor4<double>> inputs,
                           BuildLoss&& build, double fd_step = 1e-4) {
  for (const auto& t : inputs) {
    detail::ensure_grad(t);
    t->zero_grad();
  }
  {
    Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t->grad);

  const auto eval = [&]() {
    Tape<double> tape;
    return build(tape)->value[0];
  };

  GradCheckReport rep;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti]->value;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + fd_step;
      const double fplus = eval();
      vals[j] = orig - fd_step;
      const double fminus = eval();
      vals[j] = orig;
      const double fd = (fplus - fminus) / (2.0 * fd_step);
      const double ad = analytic[ti][j];
      rep.max_rel_err = std::max(rep.max_rel_err, grad_rel_err(ad, fd));
      rep.max_abs_err = std::max(rep.max_abs_err, std::abs(ad - fd));
      ++rep.coords_checked;
    }
  }
  return rep;
}

}  // namespace cdtk
