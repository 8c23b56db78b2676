#pragma once

#include <cstdint>

#include "attentron/autograd.hpp"

namespace attentron {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-6;
};

/// Adam moments for every parameter of a ParameterSet, in the same order.
template <typename T>
struct AdamState {
  std::vector<Mat<T>> first_moment;
  std::vector<Mat<T>> second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  static AdamState zeros_like(const ParameterSet<T>& params, AdamHyper hyper = {});
};

/// One Adam update with bias correction. Weight decay is coupled: the L2
/// term `weight_decay * p` is added to the gradient before the moments.
/// Throws OptimizerError naming the first parameter with a non-finite
/// gradient; nothing is modified in that case.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads,
               AdamState<T>& state, double learning_rate);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace attentron
