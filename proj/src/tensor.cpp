#include "can/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "can/errors.hpp"

namespace can {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(values_.size(), 0.0);
  } else {
    grad_.clear();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::operator==(const Tensor& other) const {
  return shape_ == other.shape_ && values_.size() == other.values_.size() &&
         std::memcmp(values_.data(), other.values_.data(),
                     values_.size() * sizeof(double)) == 0;
}

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write("CANT", 4);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t e : tensor.shape()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  }
  for (double v : tensor.values()) detail::write_le<double>(out, v);
}

Tensor read_tensor(std::istream& in, std::size_t& offset) {
  detail::expect_magic(in, offset, "CANT");
  const std::size_t rank_offset = offset;
  const auto rank = detail::read_le<std::uint32_t>(in, offset, "tensor rank");
  if (rank == 0 || rank > 8) {
    throw ParseError("unsupported tensor rank " + std::to_string(rank), rank_offset);
  }
  Shape shape(rank);
  for (auto& e : shape) {
    const std::size_t at = offset;
    e = detail::read_le<std::uint32_t>(in, offset, "tensor extent");
    if (e == 0) throw ParseError("zero tensor extent", at);
  }
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = detail::read_le<double>(in, offset, "tensor value");
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_tensor(out, tensor);
  if (!out) throw Error("failed writing " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::size_t offset = 0;
  return read_tensor(in, offset);
}

}  // namespace can
