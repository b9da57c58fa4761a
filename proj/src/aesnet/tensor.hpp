// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace aesnet {

using Extents = std::vector<std::size_t>;

/// Dense row-major tensor of doubles. The optional grad buffer, when
/// allocated, always has the same number of elements as the data.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Extents shape);
  Tensor(Extents shape, std::vector<double> data);

  static Tensor zeros(Extents shape) { return Tensor(std::move(shape)); }
  static Tensor full(Extents shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Extents& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& buffer() { return data_; }
  const std::vector<double>& buffer() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-checked accessors for the common layouts.
  double& at3(std::size_t c, std::size_t y, std::size_t x);
  double at3(std::size_t c, std::size_t y, std::size_t x) const;
  double& at2(std::size_t r, std::size_t c);
  double at2(std::size_t r, std::size_t c) const;

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  double* grad() { return grad_.data(); }
  const double* grad() const { return grad_.data(); }
  std::vector<double>& grad_buffer() { return grad_; }

  void fill(double value);

  std::string shape_string() const;

private:
  Extents shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

std::size_t shape_product(const Extents& shape);

}  // namespace aesnet
