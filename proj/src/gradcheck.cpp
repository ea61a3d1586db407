#include "gapl/gradcheck.hpp"

#include <cmath>

#include "gapl/errors.hpp"

namespace gapl {

FiniteDiffReport finite_diff_check(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const std::function<double()>& loss_fn, const GradMap& analytic,
    double step) {
  FiniteDiffReport report;
  for (const auto& [name, tensor] : params) {
    auto it = analytic.find(name);
    check_contract(it != analytic.end(),
                   "finite_diff_check: missing analytic gradient for " + name);
    const Tensor& grad = it->second;
    check_contract(grad.same_shape(*tensor),
                   "finite_diff_check: gradient shape mismatch for " + name);
    double group_max = 0.0;
    for (std::size_t i = 0; i < tensor->numel(); ++i) {
      double saved = (*tensor)[i];
      (*tensor)[i] = saved + step;
      double plus = loss_fn();
      (*tensor)[i] = saved - step;
      double minus = loss_fn();
      (*tensor)[i] = saved;
      if (std::isnan(plus) || std::isnan(minus)) {
        throw NumericError("finite_diff_check: NaN at " + name + "[" +
                           std::to_string(i) + "]");
      }
      double g_fd = (plus - minus) / (2.0 * step);
      double g_ad = grad[i];
      double denom = std::max({1.0, std::fabs(g_ad), std::fabs(g_fd)});
      double rel = std::fabs(g_ad - g_fd) / denom;
      group_max = std::max(group_max, rel);
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
    report.per_group[name] = group_max;
  }
  return report;
}

}  // namespace gapl
