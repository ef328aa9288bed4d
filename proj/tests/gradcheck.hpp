#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance tests.
// Independent of the autodiff path: it only re-evaluates the forward function.

#include <cmath>
#include <functional>

#include "core/tensor.hpp"

namespace dpa::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

// Central finite differences on every element of `leaf`, compared against the
// analytic gradient left on the leaf by a prior backward() run. `forward`
// must rebuild the whole computation from current leaf values and return the
// scalar loss value.
inline GradCheckResult finite_diff_check(dpa::Tensor& leaf,
                                         const std::function<double()>& forward,
                                         const std::vector<double>& analytic,
                                         double step = 1e-5) {
  GradCheckResult r;
  for (int i = 0; i < leaf.numel(); ++i) {
    const double orig = leaf.data()[i];
    leaf.data()[i] = orig + step;
    const double fp = forward();
    leaf.data()[i] = orig - step;
    const double fm = forward();
    leaf.data()[i] = orig;
    const double num = (fp - fm) / (2.0 * step);
    const double ana = analytic[i];
    const double abs_err = std::fabs(num - ana);
    const double denom = std::max({std::fabs(num), std::fabs(ana), 1e-8});
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
  }
  return r;
}

// Same check restricted to a subset of leaf elements; used when the leaf is
// large (e.g. images) and probing every element would dominate test runtime.
inline GradCheckResult finite_diff_check_subset(
    dpa::Tensor& leaf, const std::function<double()>& forward,
    const std::vector<double>& analytic, const std::vector<int>& indices,
    double step = 1e-5) {
  GradCheckResult r;
  for (int i : indices) {
    const double orig = leaf.data()[i];
    leaf.data()[i] = orig + step;
    const double fp = forward();
    leaf.data()[i] = orig - step;
    const double fm = forward();
    leaf.data()[i] = orig;
    const double num = (fp - fm) / (2.0 * step);
    const double ana = analytic[i];
    const double abs_err = std::fabs(num - ana);
    const double denom = std::max({std::fabs(num), std::fabs(ana), 1e-8});
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
  }
  return r;
}

}  // namespace dpa::testing
