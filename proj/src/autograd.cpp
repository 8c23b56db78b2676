#include "attentron/autograd.hpp"

#include <cmath>
#include <limits>

namespace attentron {

std::pair<Eigen::Index, Eigen::Index> parameter_matrix_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  const auto cols = static_cast<Eigen::Index>(shape.back());
  Eigen::Index rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) {
    rows *= static_cast<Eigen::Index>(shape[i]);
  }
  return {rows, cols};
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Shape shape, Mat<T> init) {
  if (lookup_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  auto [rows, cols] = parameter_matrix_dims(shape);
  if (init.rows() != rows || init.cols() != cols) {
    throw DimensionError("parameter '" + name + "' with shape " +
                         shape_string(shape) + " got a " +
                         std::to_string(init.rows()) + "x" +
                         std::to_string(init.cols()) + " initial value");
  }
  const std::size_t idx = params_.size();
  lookup_.emplace(name, idx);
  Mat<T> grad = Mat<T>::Zero(rows, cols);
  params_.push_back({std::move(name), std::move(shape), std::move(init),
                     std::move(grad)});
  return idx;
}

template <typename T>
std::size_t ParameterSet<T>::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) {
    throw ConfigError("unknown parameter '" + name + "'");
  }
  return it->second;
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename T>
Gradients<T> ParameterSet<T>::zero_gradients() const {
  Gradients<T> g;
  g.reserve(params_.size());
  for (const auto& p : params_) {
    g.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tape<T>::Tape(const ParameterSet<T>* params, bool record_grad)
    : params_(params), record_grad_(record_grad) {
  if (params_) param_nodes_.assign(params_->size(), -1);
  nodes_.reserve(256);
}

template <typename T>
Var Tape<T>::constant(Mat<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::variable(Mat<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::param(std::size_t index) {
  if (!params_ || index >= params_->size()) {
    throw ConfigError("tape has no parameter #" + std::to_string(index));
  }
  if (param_nodes_[index] >= 0) return Var{param_nodes_[index]};
  Node n;
  n.external = &(*params_)[index].value;
  n.param_index = static_cast<int>(index);
  n.requires_grad = record_grad_;
  nodes_.push_back(std::move(n));
  param_nodes_[index] = static_cast<int>(nodes_.size()) - 1;
  return Var{param_nodes_[index]};
}

template <typename T>
Var Tape<T>::param(const std::string& name) {
  if (!params_) throw ConfigError("tape has no parameter set");
  return param(params_->index(name));
}

template <typename T>
const Mat<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

template <typename T>
Mat<T>& Tape<T>::grad_acc(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Mat<T>& val = value(v);
    n.grad = Mat<T>::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

template <typename T>
Var Tape<T>::push(Mat<T> value, std::initializer_list<Var> inputs,
                  BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(fn));
}

template <typename T>
Var Tape<T>::push(Mat<T> value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.valid() && nodes_[in.id].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Tape<T>::backward(Var out) {
  const Mat<T>& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("backward needs a scalar output, got " +
                         std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()));
  }
  grad_acc(out)(0, 0) += T(1);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure only touches lower-indexed nodes, so this reference stays valid.
    n.backward(*this, n.grad);
  }
}

template <typename T>
void Tape<T>::accumulate_param_grads(Gradients<T>& grads) const {
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    const int id = param_nodes_[i];
    if (id < 0) continue;
    const Mat<T>& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    grads[i] += g;
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

std::string dims(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
std::string dims(const Mat<T>& m) {
  return dims(m.rows(), m.cols());
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

template <typename T>
void accumulate_if_needed(Tape<T>& t, Var v, const Mat<T>& g) {
  if (v.valid() && t.requires_grad(v)) t.grad_acc(v) += g;
}

}  // namespace

namespace nn {

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& wv = t.value(w);
  if (xv.cols() != wv.rows()) {
    throw DimensionError("linear: input " + dims(xv) +
                         " does not match weight " + dims(wv));
  }
  Mat<T> y = xv * wv;
  if (b.valid()) {
    const Mat<T>& bv = t.value(b);
    if (bv.rows() != 1 || bv.cols() != wv.cols()) {
      throw DimensionError("linear: bias " + dims(bv) + " does not match weight " +
                           dims(wv));
    }
    y.rowwise() += bv.row(0);
  }
  return t.push(std::move(y), {x, w, b}, [x, w, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(x)) t.grad_acc(x).noalias() += g * t.value(w).transpose();
    if (t.requires_grad(w)) t.grad_acc(w).noalias() += t.value(x).transpose() * g;
    if (b.valid() && t.requires_grad(b)) t.grad_acc(b) += g.colwise().sum();
  });
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + dims(av) + " x " + dims(bv));
  }
  Mat<T> y = av * bv;
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad_acc(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad_acc(b).noalias() += t.value(a).transpose() * g;
  });
}

template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: " + dims(av) + " x " + dims(bv) + "^T");
  }
  Mat<T> y = av * bv.transpose();
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad_acc(a).noalias() += g * t.value(b);
    if (t.requires_grad(b)) t.grad_acc(b).noalias() += g.transpose() * t.value(a);
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError("add: " + dims(av) + " + " + dims(bv));
  }
  Mat<T> y = av + bv;
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    accumulate_if_needed(t, a, g);
    accumulate_if_needed(t, b, g);
  });
}

template <typename T>
Var scale(Tape<T>& t, Var x, T s) {
  Mat<T> y = t.value(x) * s;
  return t.push(std::move(y), {x}, [x, s](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(x) += g * s;
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  Mat<T> y = t.value(x).cwiseMax(T(0));
  return t.push(std::move(y), {x}, [x](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& xv = t.value(x);
    t.grad_acc(x) += (xv.array() > T(0)).select(g, T(0)).matrix();
  });
}

template <typename T>
Var tanh(Tape<T>& t, Var x) {
  Mat<T> y = t.value(x).array().tanh().matrix();
  Mat<T> cache = y;
  return t.push(std::move(y), {x},
                [x, cache = std::move(cache)](Tape<T>& t, const Mat<T>& g) {
                  t.grad_acc(x) +=
                      (g.array() * (T(1) - cache.array().square())).matrix();
                });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  Mat<T> y = t.value(x).unaryExpr([](T v) { return sigmoid_scalar(v); });
  Mat<T> cache = y;
  return t.push(std::move(y), {x},
                [x, cache = std::move(cache)](Tape<T>& t, const Mat<T>& g) {
                  t.grad_acc(x) +=
                      (g.array() * cache.array() * (T(1) - cache.array())).matrix();
                });
}

template <typename T>
Var mul_const(Tape<T>& t, Var x, Mat<T> c) {
  const Mat<T>& xv = t.value(x);
  if (xv.rows() != c.rows() || xv.cols() != c.cols()) {
    throw DimensionError("mul_const: " + dims(xv) + " * " + dims(c));
  }
  Mat<T> y = xv.cwiseProduct(c);
  return t.push(std::move(y), {x},
                [x, c = std::move(c)](Tape<T>& t, const Mat<T>& g) {
                  t.grad_acc(x) += g.cwiseProduct(c);
                });
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    const Mat<T>& v = t.value(p);
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + dims(v) + " vs " +
                           std::to_string(rows) + " rows");
    }
    cols += v.cols();
  }
  Mat<T> y(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (Var p : parts) {
    const Mat<T>& v = t.value(p);
    y.middleCols(off, v.cols()) = v;
    offsets.push_back(off);
    off += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(y), parts,
                [inputs, offsets](Tape<T>& t, const Mat<T>& g) {
                  for (std::size_t i = 0; i < inputs.size(); ++i) {
                    if (!t.requires_grad(inputs[i])) continue;
                    const Eigen::Index w = t.value(inputs[i]).cols();
                    t.grad_acc(inputs[i]) += g.middleCols(offsets[i], w);
                  }
                });
}

template <typename T>
Var vstack(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("vstack: no inputs");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    const Mat<T>& v = t.value(p);
    if (v.cols() != cols) {
      throw DimensionError("vstack: column mismatch " + dims(v) + " vs " +
                           std::to_string(cols) + " columns");
    }
    rows += v.rows();
  }
  Mat<T> y(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (Var p : parts) {
    const Mat<T>& v = t.value(p);
    y.middleRows(off, v.rows()) = v;
    offsets.push_back(off);
    off += v.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(y), parts,
                [inputs, offsets](Tape<T>& t, const Mat<T>& g) {
                  for (std::size_t i = 0; i < inputs.size(); ++i) {
                    if (!t.requires_grad(inputs[i])) continue;
                    const Eigen::Index h = t.value(inputs[i]).rows();
                    t.grad_acc(inputs[i]) += g.middleRows(offsets[i], h);
                  }
                });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count) {
  const Mat<T>& xv = t.value(x);
  if (start < 0 || count < 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") out of " + dims(xv));
  }
  Mat<T> y = xv.middleCols(start, count);
  return t.push(std::move(y), {x}, [x, start, count](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(x).middleCols(start, count) += g;
  });
}

template <typename T>
Var slice_rows(Tape<T>& t, Var x, Eigen::Index start, Eigen::Index count) {
  const Mat<T>& xv = t.value(x);
  if (start < 0 || count < 0 || start + count > xv.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" +
                         std::to_string(count) + ") out of " + dims(xv));
  }
  Mat<T> y = xv.middleRows(start, count);
  return t.push(std::move(y), {x}, [x, start, count](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(x).middleRows(start, count) += g;
  });
}

template <typename T>
Var pad_rows(Tape<T>& t, Var x, Eigen::Index rows) {
  const Mat<T>& xv = t.value(x);
  if (rows < xv.rows()) {
    throw DimensionError("pad_rows: cannot pad " + dims(xv) + " to " +
                         std::to_string(rows) + " rows");
  }
  Mat<T> y = Mat<T>::Zero(rows, xv.cols());
  y.topRows(xv.rows()) = xv;
  const Eigen::Index n = xv.rows();
  return t.push(std::move(y), {x}, [x, n](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(x) += g.topRows(n);
  });
}

template <typename T>
Var broadcast_rows(Tape<T>& t, Var row, Eigen::Index rows) {
  const Mat<T>& rv = t.value(row);
  if (rv.rows() != 1) {
    throw DimensionError("broadcast_rows: expected one row, got " + dims(rv));
  }
  Mat<T> y = rv.replicate(rows, 1);
  return t.push(std::move(y), {row}, [row](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(row) += g.colwise().sum();
  });
}

template <typename T>
Var mean_rows(Tape<T>& t, Var x) {
  const Mat<T>& xv = t.value(x);
  if (xv.rows() == 0) throw LengthError("mean_rows: no rows");
  const T inv = T(1) / static_cast<T>(xv.rows());
  Mat<T> y = xv.colwise().sum() * inv;
  const Eigen::Index n = xv.rows();
  return t.push(std::move(y), {x}, [x, n, inv](Tape<T>& t, const Mat<T>& g) {
    t.grad_acc(x).rowwise() += g.row(0) * inv;
    (void)n;
  });
}

template <typename T>
Var embedding(Tape<T>& t, Var table, const std::vector<int>& ids) {
  const Mat<T>& tv = t.value(table);
  Mat<T> y(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) +
                           " outside table of " + std::to_string(tv.rows()) +
                           " rows");
    }
    y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  return t.push(std::move(y), {table}, [table, ids](Tape<T>& t, const Mat<T>& g) {
    Mat<T>& acc = t.grad_acc(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      acc.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

template <typename T>
Var conv1d(Tape<T>& t, Var x, Var kernels, Var bias, int kernel_size) {
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw ConfigError("conv1d: kernel size must be odd and positive, got " +
                      std::to_string(kernel_size));
  }
  const Mat<T>& xv = t.value(x);
  const Mat<T>& kv = t.value(kernels);
  const Eigen::Index steps = xv.rows();
  const Eigen::Index cin = xv.cols();
  const Eigen::Index k = kernel_size;
  if (kv.rows() != k * cin) {
    throw DimensionError("conv1d: input " + dims(xv) + " with kernel size " +
                         std::to_string(k) + " does not match kernels " +
                         dims(kv));
  }
  const Eigen::Index pad = k / 2;
  // im2col: row s holds x[s - pad .. s + pad] laid out tap-major.
  Mat<T> cols = Mat<T>::Zero(steps, k * cin);
  for (Eigen::Index s = 0; s < steps; ++s) {
    for (Eigen::Index tap = 0; tap < k; ++tap) {
      const Eigen::Index src = s + tap - pad;
      if (src < 0 || src >= steps) continue;
      cols.block(s, tap * cin, 1, cin) = xv.row(src);
    }
  }
  Mat<T> y = cols * kv;
  if (bias.valid()) {
    const Mat<T>& bv = t.value(bias);
    if (bv.rows() != 1 || bv.cols() != kv.cols()) {
      throw DimensionError("conv1d: bias " + dims(bv) + " does not match kernels " +
                           dims(kv));
    }
    y.rowwise() += bv.row(0);
  }
  return t.push(
      std::move(y), {x, kernels, bias},
      [x, kernels, bias, k, cin, pad, steps, cols = std::move(cols)](
          Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(kernels)) t.grad_acc(kernels).noalias() += cols.transpose() * g;
        if (bias.valid() && t.requires_grad(bias)) t.grad_acc(bias) += g.colwise().sum();
        if (t.requires_grad(x)) {
          const Mat<T> dcols = g * t.value(kernels).transpose();
          Mat<T>& dx = t.grad_acc(x);
          for (Eigen::Index s = 0; s < steps; ++s) {
            for (Eigen::Index tap = 0; tap < k; ++tap) {
              const Eigen::Index src = s + tap - pad;
              if (src < 0 || src >= steps) continue;
              dx.row(src) += dcols.block(s, tap * cin, 1, cin);
            }
          }
        }
      });
}

template <typename T>
Var lstm(Tape<T>& t, Var x, const LstmWeights& w, bool reverse) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& wih = t.value(w.w_ih);
  const Mat<T>& whh = t.value(w.w_hh);
  const Mat<T>& bv = t.value(w.bias);
  const Eigen::Index steps = xv.rows();
  if (steps == 0) throw LengthError("lstm: empty input sequence");
  const Eigen::Index h = whh.rows();
  if (wih.rows() != xv.cols() || wih.cols() != 4 * h || whh.cols() != 4 * h ||
      bv.rows() != 1 || bv.cols() != 4 * h) {
    throw DimensionError("lstm: input " + dims(xv) + " vs w_ih " + dims(wih) +
                         ", w_hh " + dims(whh) + ", bias " + dims(bv));
  }

  // gates: activated [i, f, g, o] per step (in processing order).
  Mat<T> pre = xv * wih;
  pre.rowwise() += bv.row(0);
  Mat<T> gates(steps, 4 * h);
  Mat<T> hs = Mat<T>::Zero(steps + 1, h);  // hs.row(0) is the initial state
  Mat<T> cs = Mat<T>::Zero(steps + 1, h);
  Mat<T> y(steps, h);
  for (Eigen::Index n = 0; n < steps; ++n) {
    const Eigen::Index s = reverse ? steps - 1 - n : n;
    Eigen::Matrix<T, 1, Eigen::Dynamic> a = pre.row(s);
    a.noalias() += hs.row(n) * whh;
    for (Eigen::Index j = 0; j < h; ++j) {
      const T ig = sigmoid_scalar(a(j));
      const T fg = sigmoid_scalar(a(h + j));
      const T gg = std::tanh(a(2 * h + j));
      const T og = sigmoid_scalar(a(3 * h + j));
      gates(n, j) = ig;
      gates(n, h + j) = fg;
      gates(n, 2 * h + j) = gg;
      gates(n, 3 * h + j) = og;
      const T c = fg * cs(n, j) + ig * gg;
      cs(n + 1, j) = c;
      hs(n + 1, j) = og * std::tanh(c);
    }
    y.row(s) = hs.row(n + 1);
  }

  const LstmWeights wc = w;
  return t.push(
      std::move(y), {x, w.w_ih, w.w_hh, w.bias},
      [x, wc, reverse, steps, h, gates = std::move(gates), hs = std::move(hs),
       cs = std::move(cs)](Tape<T>& t, const Mat<T>& g) {
        Mat<T> dpre(steps, 4 * h);  // indexed by processing order
        Eigen::Matrix<T, 1, Eigen::Dynamic> dh_next =
            Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(h);
        Eigen::Matrix<T, 1, Eigen::Dynamic> dc_next =
            Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(h);
        const Mat<T>& whh = t.value(wc.w_hh);
        for (Eigen::Index n = steps - 1; n >= 0; --n) {
          const Eigen::Index s = reverse ? steps - 1 - n : n;
          for (Eigen::Index j = 0; j < h; ++j) {
            const T ig = gates(n, j);
            const T fg = gates(n, h + j);
            const T gg = gates(n, 2 * h + j);
            const T og = gates(n, 3 * h + j);
            const T tc = std::tanh(cs(n + 1, j));
            const T dh = g(s, j) + dh_next(j);
            const T dc = dc_next(j) + dh * og * (T(1) - tc * tc);
            dpre(n, j) = dc * gg * ig * (T(1) - ig);
            dpre(n, h + j) = dc * cs(n, j) * fg * (T(1) - fg);
            dpre(n, 2 * h + j) = dc * ig * (T(1) - gg * gg);
            dpre(n, 3 * h + j) = dh * tc * og * (T(1) - og);
            dc_next(j) = dc * fg;
          }
          dh_next.noalias() = dpre.row(n) * whh.transpose();
        }
        if (t.requires_grad(wc.w_hh)) {
          t.grad_acc(wc.w_hh).noalias() += hs.topRows(steps).transpose() * dpre;
        }
        if (t.requires_grad(wc.bias)) t.grad_acc(wc.bias) += dpre.colwise().sum();
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(wc.w_ih);
        if (need_x || need_w) {
          // Back to time order.
          Mat<T> dpre_t(steps, 4 * h);
          for (Eigen::Index n = 0; n < steps; ++n) {
            dpre_t.row(reverse ? steps - 1 - n : n) = dpre.row(n);
          }
          if (need_w) t.grad_acc(wc.w_ih).noalias() += t.value(x).transpose() * dpre_t;
          if (need_x) t.grad_acc(x).noalias() += dpre_t * t.value(wc.w_ih).transpose();
        }
      });
}

template <typename T>
Var bilstm(Tape<T>& t, Var x, const LstmWeights& fw, const LstmWeights& bw) {
  if (t.value(x).rows() == 0) throw LengthError("bilstm: empty input sequence");
  const Var f = lstm(t, x, fw, false);
  const Var b = lstm(t, x, bw, true);
  const Var parts[] = {f, b};
  return concat_cols<T>(t, parts);
}

template <typename T>
Var lstm_cell(Tape<T>& t, Var x, Var h, Var c, const LstmWeights& w) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& hv = t.value(h);
  const Mat<T>& cv = t.value(c);
  const Mat<T>& wih = t.value(w.w_ih);
  const Mat<T>& whh = t.value(w.w_hh);
  const Mat<T>& bv = t.value(w.bias);
  const Eigen::Index hd = whh.rows();
  if (xv.rows() != 1 || hv.rows() != 1 || cv.rows() != 1 || hv.cols() != hd ||
      cv.cols() != hd || wih.rows() != xv.cols() || wih.cols() != 4 * hd ||
      whh.cols() != 4 * hd || bv.cols() != 4 * hd) {
    throw DimensionError("lstm_cell: x " + dims(xv) + ", h " + dims(hv) + ", c " +
                         dims(cv) + ", w_ih " + dims(wih) + ", w_hh " + dims(whh));
  }
  Eigen::Matrix<T, 1, Eigen::Dynamic> a = xv * wih;
  a.noalias() += hv * whh;
  a += bv.row(0);
  Eigen::Matrix<T, 1, Eigen::Dynamic> gates(4 * hd);
  Mat<T> y(1, 2 * hd);
  for (Eigen::Index j = 0; j < hd; ++j) {
    const T ig = sigmoid_scalar(a(j));
    const T fg = sigmoid_scalar(a(hd + j));
    const T gg = std::tanh(a(2 * hd + j));
    const T og = sigmoid_scalar(a(3 * hd + j));
    gates(j) = ig;
    gates(hd + j) = fg;
    gates(2 * hd + j) = gg;
    gates(3 * hd + j) = og;
    const T cn = fg * cv(0, j) + ig * gg;
    y(0, hd + j) = cn;
    y(0, j) = og * std::tanh(cn);
  }
  const LstmWeights wc = w;
  return t.push(
      std::move(y), {x, h, c, w.w_ih, w.w_hh, w.bias},
      [x, h, c, wc, hd, gates](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& cv = t.value(c);
        Mat<T> dpre(1, 4 * hd);
        Mat<T> dc_prev(1, hd);
        for (Eigen::Index j = 0; j < hd; ++j) {
          const T ig = gates(j);
          const T fg = gates(hd + j);
          const T gg = gates(2 * hd + j);
          const T og = gates(3 * hd + j);
          const T cn = fg * cv(0, j) + ig * gg;
          const T tc = std::tanh(cn);
          const T dh = g(0, j);
          const T dc = g(0, hd + j) + dh * og * (T(1) - tc * tc);
          dpre(0, j) = dc * gg * ig * (T(1) - ig);
          dpre(0, hd + j) = dc * cv(0, j) * fg * (T(1) - fg);
          dpre(0, 2 * hd + j) = dc * ig * (T(1) - gg * gg);
          dpre(0, 3 * hd + j) = dh * tc * og * (T(1) - og);
          dc_prev(0, j) = dc * fg;
        }
        if (t.requires_grad(x)) t.grad_acc(x).noalias() += dpre * t.value(wc.w_ih).transpose();
        if (t.requires_grad(h)) t.grad_acc(h).noalias() += dpre * t.value(wc.w_hh).transpose();
        if (t.requires_grad(c)) t.grad_acc(c) += dc_prev;
        if (t.requires_grad(wc.w_ih)) t.grad_acc(wc.w_ih).noalias() += t.value(x).transpose() * dpre;
        if (t.requires_grad(wc.w_hh)) t.grad_acc(wc.w_hh).noalias() += t.value(h).transpose() * dpre;
        if (t.requires_grad(wc.bias)) t.grad_acc(wc.bias) += dpre;
      });
}

template <typename T>
Var masked_softmax(Tape<T>& t, Var logits, const Mask& mask) {
  Mat<T> y = masked_softmax_rows(t.value(logits), mask);
  Mat<T> cache = y;
  return t.push(std::move(y), {logits},
                [logits, cache = std::move(cache)](Tape<T>& t, const Mat<T>& g) {
                  Mat<T>& acc = t.grad_acc(logits);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const T dot = g.row(r).dot(cache.row(r));
                    acc.row(r).array() +=
                        cache.row(r).array() * (g.row(r).array() - dot);
                  }
                });
}

template <typename T>
Var mse(Tape<T>& t, Var pred, const Mat<T>& target) {
  const Mat<T>& pv = t.value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) {
    throw DimensionError("mse: prediction " + dims(pv) + " vs target " +
                         dims(target));
  }
  if (pv.size() == 0) throw LengthError("mse: empty input");
  Mat<T> diff = pv - target;
  const T n = static_cast<T>(diff.size());
  Mat<T> y(1, 1);
  y(0, 0) = diff.squaredNorm() / n;
  return t.push(std::move(y), {pred},
                [pred, n, diff = std::move(diff)](Tape<T>& t, const Mat<T>& g) {
                  t.grad_acc(pred) += diff * (T(2) * g(0, 0) / n);
                });
}

template <typename T>
Var bce_with_logits(Tape<T>& t, Var logits, const Mat<T>& target) {
  const Mat<T>& zv = t.value(logits);
  if (zv.rows() != target.rows() || zv.cols() != target.cols()) {
    throw DimensionError("bce: logits " + dims(zv) + " vs target " + dims(target));
  }
  if (zv.size() == 0) throw LengthError("bce: empty input");
  const T n = static_cast<T>(zv.size());
  T total = 0;
  Mat<T> dz(zv.rows(), zv.cols());
  for (Eigen::Index i = 0; i < zv.size(); ++i) {
    const T z = zv.data()[i];
    const T y = target.data()[i];
    total += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    dz.data()[i] = (sigmoid_scalar(z) - y) / n;
  }
  Mat<T> out(1, 1);
  out(0, 0) = total / n;
  return t.push(std::move(out), {logits},
                [logits, dz = std::move(dz)](Tape<T>& t, const Mat<T>& g) {
                  t.grad_acc(logits) += dz * g(0, 0);
                });
}

}  // namespace nn

template <typename T>
Mat<T> masked_softmax_rows(const Mat<T>& logits, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != logits.cols()) {
    throw DimensionError("masked_softmax: mask of " + std::to_string(mask.size()) +
                         " entries for logits " + dims(logits));
  }
  bool any = false;
  for (auto m : mask) any = any || m;
  if (!any) {
    throw AttentionError("masked_softmax: every position is masked (empty reference set)");
  }
  Mat<T> y = Mat<T>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (mask[c]) mx = std::max(mx, logits(r, c));
    }
    T sum = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (!mask[c]) continue;
      const T e = std::exp(logits(r, c) - mx);
      y(r, c) = e;
      sum += e;
    }
    y.row(r) /= sum;
  }
  return y;
}

#define ATTENTRON_INSTANTIATE_OPS(T)                                            \
  namespace nn {                                                              \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                            \
  template Var matmul<T>(Tape<T>&, Var, Var);                                 \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                              \
  template Var add<T>(Tape<T>&, Var, Var);                                    \
  template Var scale<T>(Tape<T>&, Var, T);                                    \
  template Var relu<T>(Tape<T>&, Var);                                        \
  template Var tanh<T>(Tape<T>&, Var);                                        \
  template Var sigmoid<T>(Tape<T>&, Var);                                     \
  template Var mul_const<T>(Tape<T>&, Var, Mat<T>);                           \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                \
  template Var vstack<T>(Tape<T>&, std::span<const Var>);                     \
  template Var slice_cols<T>(Tape<T>&, Var, Eigen::Index, Eigen::Index);      \
  template Var slice_rows<T>(Tape<T>&, Var, Eigen::Index, Eigen::Index);      \
  template Var pad_rows<T>(Tape<T>&, Var, Eigen::Index);                      \
  template Var broadcast_rows<T>(Tape<T>&, Var, Eigen::Index);                \
  template Var mean_rows<T>(Tape<T>&, Var);                                   \
  template Var embedding<T>(Tape<T>&, Var, const std::vector<int>&);          \
  template Var conv1d<T>(Tape<T>&, Var, Var, Var, int);                       \
  template Var lstm<T>(Tape<T>&, Var, const LstmWeights&, bool);              \
  template Var bilstm<T>(Tape<T>&, Var, const LstmWeights&, const LstmWeights&); \
  template Var lstm_cell<T>(Tape<T>&, Var, Var, Var, const LstmWeights&);     \
  template Var masked_softmax<T>(Tape<T>&, Var, const Mask&);                 \
  template Var mse<T>(Tape<T>&, Var, const Mat<T>&);                          \
  template Var bce_with_logits<T>(Tape<T>&, Var, const Mat<T>&);              \
  }                                                                           \
  template Mat<T> masked_softmax_rows<T>(const Mat<T>&, const Mask&);

ATTENTRON_INSTANTIATE_OPS(float)
ATTENTRON_INSTANTIATE_OPS(double)

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace attentron
