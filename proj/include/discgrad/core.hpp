#pragma once
// Dense rank-0/1/2 tensors of doubles, shapes, and the library error type.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace discgrad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

struct Shape {
  int rank = 0;
  int64_t d0 = 0;  // rows (rank 1: length)
  int64_t d1 = 0;  // cols

  Shape() = default;
  explicit Shape(int64_t n) : rank(1), d0(n) {}
  Shape(int64_t r, int64_t c) : rank(2), d0(r), d1(c) {}

  static Shape scalar() { return Shape{}; }

  int64_t numel() const {
    if (rank == 0) return 1;
    if (rank == 1) return d0;
    return d0 * d1;
  }
  bool operator==(const Shape& o) const {
    return rank == o.rank && d0 == o.d0 && d1 == o.d1;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    char buf[48];
    if (rank == 0) return "[]";
    if (rank == 1) {
      std::snprintf(buf, sizeof buf, "[%lld]", (long long)d0);
    } else {
      std::snprintf(buf, sizeof buf, "[%lld,%lld]", (long long)d0, (long long)d1);
    }
    return buf;
  }
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0) : shape(s), data((size_t)s.numel(), fill) {}
  Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
    require((int64_t)data.size() == shape.numel(), "tensor data size does not match shape " + shape.str());
  }

  static Tensor scalar(double v) {
    Tensor t{Shape::scalar()};
    t.data[0] = v;
    return t;
  }
  static Tensor vec(std::vector<double> d) {
    auto n = (int64_t)d.size();
    return Tensor{Shape{n}, std::move(d)};
  }
  static Tensor zeros(Shape s) { return Tensor{s, 0.0}; }
  static Tensor full(Shape s, double v) { return Tensor{s, v}; }

  int64_t numel() const { return shape.numel(); }
  double item() const {
    require(numel() == 1, "item() on tensor of shape " + shape.str());
    return data[0];
  }
  double& at(int64_t i) { return data[(size_t)i]; }
  double at(int64_t i) const { return data[(size_t)i]; }
  double& at(int64_t i, int64_t j) { return data[(size_t)(i * shape.d1 + j)]; }
  double at(int64_t i, int64_t j) const { return data[(size_t)(i * shape.d1 + j)]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Numerically stable scalar helpers shared across modules.
inline double sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace discgrad
