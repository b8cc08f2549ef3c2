#include "capsnet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace capsnet {

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Mat: element count " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

Vec squash(std::span<const double> x) {
  const double sq = dot(x, x);
  Vec out(x.begin(), x.end());
  if (sq == 0.0) return out;
  const double r = std::sqrt(sq);
  const double scale = r / (1.0 + sq);
  for (double& e : out) e *= scale;
  return out;
}

Vec leaky_softmax(std::span<const double> row) {
  // The orphan logit is 0, so the shift must cover it too.
  double shift = 0.0;
  for (double x : row) shift = std::max(shift, x);
  Vec out(row.size());
  double denom = std::exp(-shift);
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = std::exp(row[j] - shift);
    denom += out[j];
  }
  for (double& e : out) e /= denom;
  return out;
}

Vec softmax(std::span<const double> row) {
  if (row.empty()) return {};
  const double shift = *std::max_element(row.begin(), row.end());
  Vec out(row.size());
  double denom = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = std::exp(row[j] - shift);
    denom += out[j];
  }
  for (double& e : out) e /= denom;
  return out;
}

double epanechnikov(double x) {
  if (!(x >= 0.0)) throw ContractViolation("epanechnikov: argument must be >= 0");
  return x < 1.0 ? 1.0 - x : 0.0;
}

double epanechnikov_deriv(double x) {
  if (!(x >= 0.0)) throw ContractViolation("epanechnikov_deriv: argument must be >= 0");
  return x < 1.0 ? -1.0 : 0.0;
}

double sq_distance(std::span<const double> u, std::span<const double> v, double bandwidth) {
  if (u.size() != v.size()) throw std::invalid_argument("sq_distance: dimension mismatch");
  if (!(bandwidth > 0.0)) throw ContractViolation("sq_distance: bandwidth must be > 0");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double diff = u[i] - v[i];
    s += diff * diff;
  }
  return s / (bandwidth * bandwidth);
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_sim: zero-norm input");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

}  // namespace capsnet
