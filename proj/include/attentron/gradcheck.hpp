#pragma once

#include <functional>
#include <span>
#include <vector>

#include "attentron/tensor.hpp"

namespace attentron {

/// Scalar loss over a list of 64-bit inputs. When `grads` is non-null the
/// function must also fill it with the analytic gradient of every input.
using LossFunction =
    std::function<double(std::span<const Mat<double>> inputs,
                         std::vector<Mat<double>>* grads)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  Eigen::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate. Relative error
/// uses max(|a|, |n|, 1e-8) as denominator.
GradCheckResult grad_check(const LossFunction& loss,
                           std::vector<Mat<double>> inputs, double eps = 1e-5);

}  // namespace attentron
