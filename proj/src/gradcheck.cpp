#include "can/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "can/errors.hpp"

namespace can {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

}  // namespace can
