#pragma once

#include <cmath>
#include <functional>

#include "moeflow/ops.hpp"
#include "moeflow/tensor.hpp"

namespace moeflow {

// Compares analytic gradients of a scalar-valued function against central
// differences. Returns max over coordinates of
//   |analytic - finite_difference| / max(1, |analytic|).
// The finite-difference side never touches the tape, so it stays an
// independent oracle for the backward pass.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4))
    raise(ErrorKind::Contract, "grad_check eps must lie in [1e-7, 1e-4]");

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(probe);
    if (y.numel() != 1)
      raise(ErrorKind::Contract,
            "grad_check requires a scalar-valued function, got " +
                shape_str(y.shape()));
    tape.backward(y);
    auto g = probe.grad();
    for (std::size_t i = 0; i < g.size(); ++i) analytic[i] = g[i];
  }

  double worst = 0.0;
  Tensor pert = x.clone();  // requires_grad stays false; no tape active below
  auto pv = pert.values_mut();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double orig = pv[i];
    pv[i] = orig + eps;
    const double fp = f(pert).item();
    pv[i] = orig - eps;
    const double fm = f(pert).item();
    pv[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(fd))
      raise(ErrorKind::Numeric, "non-finite central difference in grad_check");
    const double err =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace moeflow
