#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "styleguard/errors.hpp"

namespace sguard {

/// NCHW extent. Parameters and scalars reuse the same 4-D layout.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ContractError("negative tensor extent " + shape.str());
    }
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ContractError("tensor data size does not match shape " + shape_.str());
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> span() { return data_; }
  [[nodiscard]] std::span<const double> span() const { return data_; }
  [[nodiscard]] std::vector<double>& vec() { return data_; }
  [[nodiscard]] const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  [[nodiscard]] double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  [[nodiscard]] double item() const {
    if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  /// Copy of sample `i` as a batch of one.
  [[nodiscard]] Tensor sample(int i) const {
    Tensor out(Shape{1, shape_.c, shape_.h, shape_.w});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(i * shape_.sample()), shape_.sample(),
                out.data_.begin());
    return out;
  }

  /// Samples [begin, end) as a new batch.
  [[nodiscard]] Tensor slice(int begin, int end) const {
    Tensor out(Shape{end - begin, shape_.c, shape_.h, shape_.w});
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * shape_.sample()),
              data_.begin() + static_cast<std::ptrdiff_t>(end * shape_.sample()), out.data_.begin());
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  void check_same(const Tensor& o) const {
    if (!(shape_ == o.shape_)) {
      throw ContractError("shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    }
  }

 private:
  [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

/// Concatenate along the batch axis.
inline Tensor concat_batch(const Tensor& a, const Tensor& b) {
  if (a.shape().c != b.shape().c || a.shape().h != b.shape().h || a.shape().w != b.shape().w) {
    throw ContractError("concat_batch: incompatible shapes " + a.shape().str() + " and " +
                        b.shape().str());
  }
  Tensor out(Shape{a.shape().n + b.shape().n, a.shape().c, a.shape().h, a.shape().w});
  std::copy(a.vec().begin(), a.vec().end(), out.vec().begin());
  std::copy(b.vec().begin(), b.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.check_same(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.vec()) s += v * v;
  return s;
}

inline bool all_finite(const Tensor& a) {
  return std::all_of(a.vec().begin(), a.vec().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sguard
