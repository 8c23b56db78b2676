#include "attentron/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace attentron {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) +
                         " elements but data has " +
                         std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_matrix(const Mat<T>& m) {
  std::vector<T> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()),
                 static_cast<std::size_t>(m.cols())},
                std::move(data));
}

template <typename T>
std::pair<Eigen::Index, Eigen::Index> Tensor<T>::matrix_dims() const {
  if (shape_.empty()) return {1, 1};
  if (shape_.size() == 1) return {1, static_cast<Eigen::Index>(shape_[0])};
  const auto rows = static_cast<Eigen::Index>(shape_[0]);
  const auto cols = rows == 0 ? Eigen::Index{0}
                              : static_cast<Eigen::Index>(data_.size()) / rows;
  return {rows, cols};
}

template <typename T>
Eigen::Map<const Mat<T>> Tensor<T>::matrix() const {
  auto [r, c] = matrix_dims();
  return Eigen::Map<const Mat<T>>(data_.data(), r, c);
}

template <typename T>
Eigen::Map<Mat<T>> Tensor<T>::matrix() {
  auto [r, c] = matrix_dims();
  return Eigen::Map<Mat<T>>(data_.data(), r, c);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace attentron
