#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace can {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. A tensor that requires grad carries a
// same-shape gradient buffer that Graph::backward accumulates into.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 4-D NCHW accessor.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool requires_grad() const { return requires_grad_; }
  // Enabling allocates a zeroed gradient buffer; disabling drops it.
  void set_requires_grad(bool on);
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad();

  Tensor reshaped(Shape shape) const;

  // Value equality (shape and bitwise values); gradients are ignored.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

// Binary tensor record: "CANT", u32 rank, u32 extents, f64 values, all
// little-endian.
void write_tensor(std::ostream& out, const Tensor& tensor);
// `offset` is advanced past the record and used in parse error messages.
Tensor read_tensor(std::istream& in, std::size_t& offset);

void save_tensor(const std::string& path, const Tensor& tensor);
Tensor load_tensor(const std::string& path);

}  // namespace can
