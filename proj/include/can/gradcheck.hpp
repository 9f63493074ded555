#pragma once

#include <functional>

#include "can/tensor.hpp"

namespace can {

// Central-difference gradient of a scalar function:
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps);

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor). Scale-aware
// comparison used by the gradient checks.
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace can
