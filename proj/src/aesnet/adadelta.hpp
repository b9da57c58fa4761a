// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "aesnet/graph.hpp"

namespace aesnet {

/// Adadelta with per-parameter running averages of squared gradients and
/// squared updates. Defaults are the optimizer's canonical rho/epsilon.
class Adadelta {
public:
  explicit Adadelta(std::vector<ParamPtr> params, double rho = 0.95, double eps = 1e-6);

  /// Applies one update from the gradients accumulated in each parameter.
  /// Frozen parameters are skipped entirely (state untouched). Gradients are
  /// left in place; the caller decides when to zero them.
  void step();

  double rho() const { return rho_; }
  double eps() const { return eps_; }
  std::size_t size() const { return params_.size(); }
  std::span<const double> grad_sq_avg(std::size_t i) const { return grad_sq_avg_.at(i); }
  std::span<const double> update_sq_avg(std::size_t i) const { return update_sq_avg_.at(i); }

private:
  std::vector<ParamPtr> params_;
  std::vector<std::vector<double>> grad_sq_avg_;    // E[g^2]
  std::vector<std::vector<double>> update_sq_avg_;  // E[dx^2]
  double rho_;
  double eps_;
};

}  // namespace aesnet
