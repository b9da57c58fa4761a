// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#include "aesnet/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace aesnet {

std::size_t shape_product(const Extents& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive");
    n *= e;
  }
  return n;
}

Tensor::Tensor(Extents shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(Extents shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

Tensor Tensor::full(Extents shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

double& Tensor::at3(std::size_t c, std::size_t y, std::size_t x) {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}

double Tensor::at3(std::size_t c, std::size_t y, std::size_t x) const {
  return data_[(c * shape_[1] + y) * shape_[2] + x];
}

double& Tensor::at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

double Tensor::at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

void Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  s += ")";
  return s;
}

}  // namespace aesnet
