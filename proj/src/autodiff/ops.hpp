#pragma once

// Factories for the built-in primitives. Internal to the library; users go
// through Tape's builder methods.

#include <memory>
#include <string>
#include <vector>

#include "coseg/autodiff/tape.hpp"

namespace coseg::ad::ops {

template <class T> std::unique_ptr<Op<T>> conv2d(bool has_bias);
template <class T> std::unique_ptr<Op<T>> deconv2x2(bool has_bias);
template <class T>
std::unique_ptr<Op<T>> batch_norm(std::string running_mean, std::string running_var,
                                  BatchNormSettings settings);
template <class T> std::unique_ptr<Op<T>> relu();
template <class T> std::unique_ptr<Op<T>> tanh();
template <class T> std::unique_ptr<Op<T>> sigmoid();
template <class T> std::unique_ptr<Op<T>> max_pool2x2();
template <class T> std::unique_ptr<Op<T>> concat(int axis);
template <class T> std::unique_ptr<Op<T>> slice_batch(int part, int parts);
template <class T> std::unique_ptr<Op<T>> reshape_items(Shape item_shape);
template <class T> std::unique_ptr<Op<T>> matmul(bool transpose_a);
template <class T> std::unique_ptr<Op<T>> l2_normalize(double epsilon);
template <class T> std::unique_ptr<Op<T>> add();
template <class T> std::unique_ptr<Op<T>> mul();
template <class T> std::unique_ptr<Op<T>> reduce(bool mean);
template <class T> std::unique_ptr<Op<T>> loss(LossKind kind, LossConfig cfg);

}  // namespace coseg::ad::ops
