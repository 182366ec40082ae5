#include "pelta/tensor.hpp"

#include <algorithm>

namespace pelta {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
  return r;
}

Tensor scale(const Tensor& a, double c) {
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
  return r;
}

Tensor sign(const Tensor& a) {
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = sign(a[i]);
  return r;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor r(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) r[i] = std::min(std::max(a[i], lo), hi);
  return r;
}

Tensor clamp_ball(const Tensor& a, const Tensor& center, double r) {
  require_same_shape(a, center, "clamp_ball");
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    out[i] = std::min(std::max(a[i], center[i] - r), center[i] + r);
  return out;
}

double linf_dist(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_dist");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double l1_norm(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += std::fabs(a[i]);
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

int argmax(const Tensor& a) {
  int best = 0;
  for (int64_t i = 1; i < a.size(); ++i)
    if (a[i] > a[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace pelta
