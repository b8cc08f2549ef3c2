#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace capsnet {

/// A caller broke a documented precondition (as opposed to bad input data).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Capsule-sized dense vector.
using Vec = std::vector<double>;

/// Dense row-major matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> x);

/// (|x|^2 / (1 + |x|^2)) * x / |x|, with squash(0) = 0.
Vec squash(std::span<const double> x);

/// Softmax over `row` plus one implicit zero logit; the orphan component is dropped.
Vec leaky_softmax(std::span<const double> row);

/// Plain softmax, used by the dynamic-routing comparator.
Vec softmax(std::span<const double> row);

// Epanechnikov profile on squared scaled distances. Negative input throws ContractViolation.
double epanechnikov(double x);
double epanechnikov_deriv(double x);

/// |u - v|^2 / bandwidth^2.
double sq_distance(std::span<const double> u, std::span<const double> v, double bandwidth);

/// Cosine similarity; throws std::invalid_argument on a zero-norm argument.
double cosine_sim(std::span<const double> u, std::span<const double> v);

}  // namespace capsnet
