#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gapl/tape.hpp"

namespace gapl {

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::map<std::string, double> per_group;  // max rel err per parameter name

  bool pass(double tol) const { return max_rel_err < tol; }
};

inline constexpr double kFiniteDiffStep = 1e-5;

// Central-difference check of analytic gradients. `params` are mutable
// views into the parameter storage the loss function reads; each coordinate
// is displaced by +/- step and restored. Relative error per coordinate is
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). A NaN from either side raises
// NumericError naming the offending coordinate.
FiniteDiffReport finite_diff_check(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const std::function<double()>& loss_fn, const GradMap& analytic,
    double step = kFiniteDiffStep);

}  // namespace gapl
