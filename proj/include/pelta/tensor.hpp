#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pelta {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct GraphError : Error {
  using Error::Error;
};
struct MaskedAccessError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_size(shape_))
      throw ShapeError("tensor data length does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double& at(int c, int y, int x) {
    return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size())
      throw ShapeError("reshape from " + shape_str(shape_) + " to " + shape_str(s) +
                       " changes element count");
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// sign with sign(0) == 0
inline double sign(double v) { return (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sign(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// per-element clamp to [center - r, center + r]
Tensor clamp_ball(const Tensor& a, const Tensor& center, double r);
double linf_dist(const Tensor& a, const Tensor& b);
double l1_norm(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
int argmax(const Tensor& a);

}  // namespace pelta
