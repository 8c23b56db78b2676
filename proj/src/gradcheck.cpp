#include "attentron/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace attentron {

GradCheckResult grad_check(const LossFunction& loss,
                           std::vector<Mat<double>> inputs, double eps) {
  std::vector<Mat<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.push_back(Mat<double>::Zero(in.rows(), in.cols()));
  loss(inputs, &analytic);

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (analytic[k].rows() != inputs[k].rows() || analytic[k].cols() != inputs[k].cols()) {
      throw DimensionError("grad_check: gradient of input " + std::to_string(k) +
                           " has the wrong shape");
    }
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      double& x = inputs[k].data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss(inputs, nullptr);
      x = saved - eps;
      const double down = loss(inputs, nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error || !std::isfinite(rel)) {
        result.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace attentron
