// Copyright 2026 the aesnet authors
// SPDX-License-Identifier: Apache-2.0

#include "aesnet/adadelta.hpp"

#include <cmath>
#include <stdexcept>

namespace aesnet {

Adadelta::Adadelta(std::vector<ParamPtr> params, double rho, double eps)
    : params_(std::move(params)), rho_(rho), eps_(eps) {
  if (!(rho_ >= 0.0 && rho_ < 1.0)) throw std::invalid_argument("adadelta: rho must be in [0,1)");
  if (!(eps_ > 0.0)) throw std::invalid_argument("adadelta: eps must be positive");
  grad_sq_avg_.reserve(params_.size());
  update_sq_avg_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p) throw std::invalid_argument("adadelta: null parameter");
    grad_sq_avg_.emplace_back(p->value.size(), 0.0);
    update_sq_avg_.emplace_back(p->value.size(), 0.0);
  }
}

void Adadelta::step() {
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    if (p.frozen) continue;
    if (grad_sq_avg_[pi].size() != p.value.size()) {
      throw std::runtime_error("adadelta: state for '" + p.name +
                               "' does not match the parameter shape");
    }
    if (!p.value.has_grad()) {
      throw std::runtime_error("adadelta: parameter '" + p.name + "' has no gradient");
    }
    double* x = p.value.data();
    const double* g = p.value.grad();
    double* eg2 = grad_sq_avg_[pi].data();
    double* edx2 = update_sq_avg_[pi].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      eg2[i] = rho_ * eg2[i] + (1.0 - rho_) * g[i] * g[i];
      const double dx = -std::sqrt((edx2[i] + eps_) / (eg2[i] + eps_)) * g[i];
      edx2[i] = rho_ * edx2[i] + (1.0 - rho_) * dx * dx;
      x[i] += dx;
    }
  }
}

}  // namespace aesnet
