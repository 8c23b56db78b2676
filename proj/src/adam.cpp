#include "attentron/adam.hpp"

#include <cmath>

namespace attentron {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterSet<T>& params,
                                      AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.first_moment.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    s.second_moment.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads,
               AdamState<T>& state, double learning_rate) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters, " + std::to_string(grads.size()) +
                         " gradients, " + std::to_string(state.first_moment.size()) +
                         " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i].value;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.first_moment[i].rows() != p.rows() ||
        state.first_moment[i].cols() != p.cols()) {
      throw DimensionError("adam_step: shape mismatch for parameter '" +
                           params[i].name + "'");
    }
    if (!grads[i].allFinite()) {
      throw OptimizerError("adam_step: non-finite gradient for parameter '" +
                           params[i].name + "'");
    }
  }

  state.step_count += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step_count);
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T wd = static_cast<T>(h.weight_decay);
  const T eps = static_cast<T>(h.epsilon);
  const T corr1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T corr2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T lr = static_cast<T>(learning_rate);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value.array();
    auto m = state.first_moment[i].array();
    auto v = state.second_moment[i].array();
    const auto g = (grads[i].array() + wd * p).eval();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    p -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(ParameterSet<float>&, const Gradients<float>&,
                               AdamState<float>&, double);
template void adam_step<double>(ParameterSet<double>&, const Gradients<double>&,
                                AdamState<double>&, double);

}  // namespace attentron
