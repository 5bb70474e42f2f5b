/* Copyright 2026 The stquant Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stq/tensor.hpp"

namespace stq {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per element.
// A non-finite f value raises kNonFinite.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps);

// Same estimate for a tensor that `f` reads through a reference; `target` is
// perturbed in place and restored bit-exactly before returning.
Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& target, double eps);

// Gradient norms below this compare by absolute distance: central
// differences of an O(1) function carry roundoff near 1e-11, so smaller
// gradients have no meaningful relative accuracy.
inline constexpr double kRelativeErrorFloor = 1e-5;

// ||a - b|| / max(||a||, ||b||, kRelativeErrorFloor).
double relative_error(const Tensor& analytic, const Tensor& numeric);

struct GradCheckOptions {
  std::size_t points = 100;
  double eps = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 20240;
};

struct GradCheckResult {
  std::string name;
  std::size_t points = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Hand-derived backward passes against finite differences of the function
// each backward actually differentiates, at random points kept at least
// 10 * eps away from every kink. Covers the quantizer surrogates, rescale,
// LSQ, the ST block, the ActiQuan composite, conv, FC, pooling, batch norm,
// ReLU, the smoothed loss and a composed network.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace stq
