#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "attentron/tensor.hpp"

namespace attentron {

/// Named trainable tensor. `value` is the matrix view of `shape`: the last
/// dimension is the column count, the rest fold into rows.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  Mat<T> value;
  Mat<T> grad;
};

/// Per-parameter gradient buffers laid out like a ParameterSet.
template <typename T>
using Gradients = std::vector<Mat<T>>;

/// Rows and columns of the matrix view of a parameter shape.
std::pair<Eigen::Index, Eigen::Index> parameter_matrix_dims(const Shape& shape);

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape, Mat<T> init);

  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const {
    return lookup_.count(name) != 0;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  Parameter<T>& at(const std::string& name) { return params_[index(name)]; }
  const Parameter<T>& at(const std::string& name) const {
    return params_[index(name)];
  }

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  Gradients<T> zero_gradients() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
      out.add(p.name, p.shape, p.value.template cast<U>());
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// 1 marks a position that may be attended, 0 a padded one.
using Mask = std::vector<std::uint8_t>;

/// Reverse-mode tape. Every op appends a node holding its forward value and
/// a closure that pushes the node's gradient to its inputs. Parameters are
/// referenced, not copied; their gradients are read out after `backward`.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Mat<T>&)>;

  /// With `record_grad` false, parameters are plain inputs and no closures
  /// are kept (inference).
  explicit Tape(const ParameterSet<T>* params = nullptr, bool record_grad = true);

  Var constant(Mat<T> value);
  Var variable(Mat<T> value);
  Var param(std::size_t index);
  Var param(const std::string& name);

  const Mat<T>& value(Var v) const;
  /// Gradient of a node after backward; empty if nothing flowed into it.
  const Mat<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(out)/d(out) = 1 on a 1x1 node and runs every closure in reverse.
  void backward(Var out);

  /// Adds parameter gradients into `grads` (same layout as the ParameterSet).
  void accumulate_param_grads(Gradients<T>& grads) const;

  /// Appends an op result. `fn` is dropped when no input requires a gradient.
  Var push(Mat<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Mat<T> value, std::span<const Var> inputs, BackwardFn fn);

  /// Gradient accumulator of `v`, zero-initialised on first use.
  Mat<T>& grad_acc(Var v);

  std::size_t size() const { return nodes_.size(); }
  const ParameterSet<T>* parameters() const { return params_; }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* external = nullptr;
    Mat<T> grad;
    BackwardFn backward;
    int param_index = -1;
    bool requires_grad = false;
  };

  const ParameterSet<T>* params_;
  bool record_grad_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

/// Weights of one LSTM direction. Gate order in the 4h axis: input, forget,
/// candidate, output.
struct LstmWeights {
  Var w_ih;  // [d_in, 4h]
  Var w_hh;  // [h, 4h]
  Var bias;  // [4h]
};

namespace nn {

/// y = x W (+ b). x: [rows, in], W: [in, out], b: [1, out].
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b = {});

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b);

/// a * b^T.
template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b);

template <typename T>
Var add(Tape<T>& t, Var a, Var b);

template <typename T>
Var scale(Tape<T>& t, Var x, T s);

template <typename T>
Var relu(Tape<T>& t, Var x);

template <typename T>
Var tanh(Tape<T>& t, Var x);

template <typename T>
Var sigmoid(Tape<T>& t, Var x);

/// Elementwise product with a constant matrix (dropout masks).
template <typename T>
Var mul_const(Tape<T>& t, Var x, Mat<T> c);

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts);

template <typename T>
Var vstack(Tape<T>& t, std::span<const Var> parts);

template <typename T>
Var slice_cols(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count);

template <typename T>
Var slice_rows(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count);

/// Appends zero rows until the result has `rows` rows.
template <typename T>
Var pad_rows(Tape<T>& t, Var x, Eigen::Index rows);

/// Repeats a single row `rows` times.
template <typename T>
Var broadcast_rows(Tape<T>& t, Var row, Eigen::Index rows);

/// Mean over rows -> [1, cols].
template <typename T>
Var mean_rows(Tape<T>& t, Var x);

template <typename T>
Var embedding(Tape<T>& t, Var table, const std::vector<int>& ids);

/// Same-padded (zeros), stride-1 convolution over time.
/// x: [time, ch_in]; kernels: [k * ch_in, ch_out] (a [k, ch_in, ch_out]
/// tensor); bias: [1, ch_out] or invalid.
template <typename T>
Var conv1d(Tape<T>& t, Var x, Var kernels, Var bias, int kernel_size);

/// Unidirectional LSTM over all rows of x, zero initial state.
template <typename T>
Var lstm(Tape<T>& t, Var x, const LstmWeights& w, bool reverse);

/// [time, 2h]: forward states concatenated with backward states.
template <typename T>
Var bilstm(Tape<T>& t, Var x, const LstmWeights& fw, const LstmWeights& bw);

/// One LSTM step. Returns [1, 2h] = [h', c'].
template <typename T>
Var lstm_cell(Tape<T>& t, Var x, Var h, Var c, const LstmWeights& w);

/// Row-wise softmax; masked columns get probability exactly 0.
template <typename T>
Var masked_softmax(Tape<T>& t, Var logits, const Mask& mask);

/// Mean squared error against a constant target.
template <typename T>
Var mse(Tape<T>& t, Var pred, const Mat<T>& target);

/// Mean binary cross-entropy of sigmoid(logits) against constant targets.
template <typename T>
Var bce_with_logits(Tape<T>& t, Var logits, const Mat<T>& target);

}  // namespace nn

/// Row-wise masked softmax on plain matrices.
template <typename T>
Mat<T> masked_softmax_rows(const Mat<T>& logits, const Mask& mask);

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace attentron
