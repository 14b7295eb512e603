#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvfl/error.hpp"

namespace cvfl {

// Flat real-valued model parameters. Models, updates (deltas), sub-model
// means and noise all share this representation.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParameterVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> view() noexcept { return values_; }
  std::span<const double> view() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool operator==(const ParameterVector&) const = default;

  ParameterVector& operator+=(const ParameterVector& other) {
    check_same_dim(other, "+=");
    for (std::size_t i = 0; i < dim(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  ParameterVector& operator-=(const ParameterVector& other) {
    check_same_dim(other, "-=");
    for (std::size_t i = 0; i < dim(); ++i) values_[i] -= other.values_[i];
    return *this;
  }

  ParameterVector& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }

  // this += a * x
  ParameterVector& axpy(double a, const ParameterVector& x) {
    check_same_dim(x, "axpy");
    for (std::size_t i = 0; i < dim(); ++i) values_[i] += a * x.values_[i];
    return *this;
  }

  void check_same_dim(const ParameterVector& other, const char* op) const {
    if (other.dim() != dim()) {
      throw InputError(std::string("parameter dimension mismatch in ") + op + ": " +
                       std::to_string(dim()) + " vs " + std::to_string(other.dim()));
    }
  }

 private:
  std::vector<double> values_;
};

inline ParameterVector operator+(ParameterVector a, const ParameterVector& b) { return a += b; }
inline ParameterVector operator-(ParameterVector a, const ParameterVector& b) { return a -= b; }
inline ParameterVector operator*(ParameterVector a, double s) { return a *= s; }
inline ParameterVector operator*(double s, ParameterVector a) { return a *= s; }

inline double dot(const ParameterVector& a, const ParameterVector& b) {
  a.check_same_dim(b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const ParameterVector& a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return std::sqrt(acc);
}

inline double max_abs_diff(const ParameterVector& a, const ParameterVector& b) {
  a.check_same_dim(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const ParameterVector& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// Arithmetic mean accumulated in list order.
inline ParameterVector mean_of(std::span<const ParameterVector> vs) {
  if (vs.empty()) throw InputError("mean of an empty list of parameter vectors");
  ParameterVector acc(vs.front().dim());
  for (const auto& v : vs) acc += v;
  acc *= 1.0 / static_cast<double>(vs.size());
  return acc;
}

}  // namespace cvfl
