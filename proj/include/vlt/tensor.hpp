#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vlt/errors.hpp"

namespace vlt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor of doubles.
///
/// Feature maps are rank 3 in H x W x C order, vectors and matrices are rank 2
/// (a 1 x C selector, a b x C embedding group), scalars have shape {1}.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{1, n}, std::move(v));
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // H x W x C accessors, valid for rank-3 tensors.
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  // Row/column accessors, valid for rank-2 tensors.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t e : s)
      if (e == 0) throw DimensionError("tensor shape " + shape_str(s) + " has a zero extent");
  }

  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

// Golden-file format: `shape: e1 e2 ...` header, then row-major values with 17
// significant digits.

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os << "shape:";
  for (std::size_t e : t.shape()) os << ' ' << e;
  os << '\n';
  char buf[40];
  const auto& d = t.vec();
  const std::size_t row = t.shape().back();
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", d[i]);
    os << buf << ((i + 1) % row == 0 ? '\n' : ' ');
  }
}

inline Tensor read_tensor(std::istream& is) {
  std::string line;
  while (std::getline(is, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  if (line.rfind("shape:", 0) != 0) throw ParseError("tensor block must start with 'shape:', got '" + line + "'");
  std::istringstream hs(line.substr(6));
  Shape shape;
  std::size_t e;
  while (hs >> e) shape.push_back(e);
  if (shape.empty()) throw ParseError("tensor header has no extents");
  const std::size_t n = shape_numel(shape);
  std::vector<double> data;
  data.reserve(n);
  std::string tok;
  while (data.size() < n && is >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ParseError("bad tensor value '" + tok + "'");
    data.push_back(v);
  }
  if (data.size() != n) {
    throw ParseError("tensor block truncated: expected " + std::to_string(n) + " values, got " +
                     std::to_string(data.size()));
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_tensor(os, t);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return read_tensor(is);
}

}  // namespace vlt
