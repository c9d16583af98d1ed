#include "coseg/autodiff/tensor.hpp"

#include "coseg/error.hpp"

namespace coseg::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative extent in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data size " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_str(shape_));
  }
}

template <class T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <class T>
void Tensor<T>::reset(const Shape& shape) {
  shape_ = shape;
  data_.assign(shape_numel(shape_), T(0));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace coseg::ad
