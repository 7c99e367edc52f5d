#pragma once

// Central finite-difference gradient oracle shared by the unit and
// acceptance suites. Independent of the analytic backward path: it only
// pokes parameters and re-evaluates the loss.

#include <cmath>
#include <functional>

#include "unlab/model.hpp"

namespace unlab {

inline GradientVector fd_gradient(const ToyModel& model,
                                  const std::function<double(const ToyModel&)>& loss,
                                  double h = 1e-5) {
  ToyModel probe = model;
  GradientVector grad = Parameters::zeros(model.config());
  const std::size_t n = probe.params().size();
  for (std::size_t i = 0; i < n; ++i) {
    const double orig = probe.params().get_flat(i);
    probe.params().set_flat(i, orig + h);
    const double up = loss(probe);
    probe.params().set_flat(i, orig - h);
    const double down = loss(probe);
    probe.params().set_flat(i, orig);
    grad.set_flat(i, (up - down) / (2.0 * h));
  }
  return grad;
}

// || analytic - fd ||_2 / max(||fd||_2, tiny)
inline double fd_relative_error(const ToyModel& model, const GradientVector& analytic,
                                const std::function<double(const ToyModel&)>& loss,
                                double h = 1e-5) {
  const GradientVector fd = fd_gradient(model, loss, h);
  double diff2 = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double d = analytic.get_flat(i) - fd.get_flat(i);
    diff2 += d * d;
  }
  const double denom = std::sqrt(fd.squared_norm());
  return std::sqrt(diff2) / std::max(denom, 1e-12);
}

}  // namespace unlab
