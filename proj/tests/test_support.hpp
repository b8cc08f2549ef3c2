#pragma once
// Straight-line reference implementations used as test oracles. They are written
// from the algorithm statements with plain nested loops and share no code with the
// library beyond the container types.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "capsnet/numerics.hpp"
#include "capsnet/routing.hpp"

namespace oracle {

using capsnet::Mat;
using capsnet::PredictionTensor;
using capsnet::Vec;

// u[j][i] is candidate i of output j.
using Candidates = std::vector<std::vector<Vec>>;

inline Candidates unpack(const PredictionTensor& t) {
  Candidates u(t.n_out, std::vector<Vec>(t.n_in, Vec(t.dim)));
  for (std::size_t j = 0; j < t.n_out; ++j)
    for (std::size_t i = 0; i < t.n_in; ++i)
      for (std::size_t k = 0; k < t.dim; ++k) u[j][i][k] = t.data[(j * t.n_in + i) * t.dim + k];
  return u;
}

inline double dist2(const Vec& a, const Vec& b, double h) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s / (h * h);
}

inline double kernel(double x) { return x < 1.0 ? 1.0 - x : 0.0; }

inline Vec squash(const Vec& x) {
  double n2 = 0.0;
  for (double e : x) n2 += e * e;
  Vec out(x.size(), 0.0);
  if (n2 == 0.0) return out;
  const double scale = n2 / (1.0 + n2) / std::sqrt(n2);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = scale * x[k];
  return out;
}

inline double length(const Vec& x) {
  double s = 0.0;
  for (double e : x) s += e * e;
  return std::sqrt(s);
}

struct Trace {
  std::vector<Vec> v;
  std::vector<std::vector<double>> c;  // [i][j], the normalised couplings of the last step
  int iterations = 0;
  std::vector<double> nas;
  std::vector<double> delta;
};

// Adaptive KDE routing with per-output kernel weights w (1 for ordinary outputs,
// lambda for sampled negatives).
inline Trace kde(const Candidates& u, const std::vector<double>& w, double alpha, double eps, int max_it,
                 double h) {
  const std::size_t n = u.size(), m = u[0].size(), d = u[0][0].size();
  std::vector<std::vector<double>> c(m, std::vector<double>(n, 1.0 / n));
  Trace tr;
  tr.v.assign(n, Vec(d, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) tr.v[j][k] += u[j][i][k] / static_cast<double>(m);
  }
  double last = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= max_it; ++t) {
    std::vector<std::vector<double>> cn(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i) {
      double z = 1.0;  // the orphan logit contributes e^0
      for (std::size_t j = 0; j < n; ++j) z += std::exp(c[i][j]);
      for (std::size_t j = 0; j < n; ++j) cn[i][j] = std::exp(c[i][j]) / z;
    }
    std::vector<Vec> vn = tr.v;
    double delta = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      Vec num(d, 0.0);
      double den = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (dist2(tr.v[j], u[j][i], h) >= 1.0) continue;
        den += cn[i][j];
        for (std::size_t k = 0; k < d; ++k) num[k] += cn[i][j] * u[j][i][k];
      }
      if (den > 0.0)
        for (std::size_t k = 0; k < d; ++k) vn[j][k] = num[k] / den;
      Vec diff(d);
      for (std::size_t k = 0; k < d; ++k) diff[k] = vn[j][k] - tr.v[j][k];
      delta = std::max(delta, length(diff));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double kij = kernel(dist2(vn[j], u[j][i], h));
        c[i][j] = cn[i][j] + alpha * w[j] * kij;
        total += w[j] * c[i][j] * kij;
      }
    }
    const double nas = total > 0.0 ? std::log(total) : -std::numeric_limits<double>::infinity();
    tr.v = vn;
    tr.c = cn;
    tr.iterations = t;
    tr.nas.push_back(nas);
    tr.delta.push_back(delta);
    if (nas == last || std::fabs(nas - last) < eps) break;
    last = nas;
  }
  return tr;
}

// Routing-by-agreement with a fixed number of iterations.
inline Trace dynamic(const Candidates& u, int iterations) {
  const std::size_t n = u.size(), m = u[0].size(), d = u[0][0].size();
  std::vector<std::vector<double>> b(m, std::vector<double>(n, 0.0));
  Trace tr;
  for (int t = 1; t <= iterations; ++t) {
    std::vector<std::vector<double>> c(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += std::exp(b[i][j]);
      for (std::size_t j = 0; j < n; ++j) c[i][j] = std::exp(b[i][j]) / z;
    }
    std::vector<Vec> v(n);
    for (std::size_t j = 0; j < n; ++j) {
      Vec s(d, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) s[k] += c[i][j] * u[j][i][k];
      v[j] = squash(s);
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double agree = 0.0;
        for (std::size_t k = 0; k < d; ++k) agree += u[j][i][k] * v[j][k];
        b[i][j] += agree;
      }
    tr.v = v;
    tr.c = c;
    tr.iterations = t;
  }
  return tr;
}

// Negative agreement score -sum_{i,j} w_j c_ij k(d(v_j, u_ji)).
inline double nas(const std::vector<std::vector<double>>& c, const std::vector<Vec>& v, const Candidates& u,
                  double h) {
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j)
    for (std::size_t i = 0; i < u[j].size(); ++i) s += c[i][j] * kernel(dist2(v[j], u[j][i], h));
  return -s;
}

inline PredictionTensor random_uhat(std::mt19937_64& rng, std::size_t n, std::size_t m, std::size_t d,
                                    double spread) {
  std::normal_distribution<double> normal(0.0, spread / std::sqrt(static_cast<double>(d)));
  PredictionTensor t(n, m, d);
  for (double& e : t.data) e = normal(rng);
  return t;
}

}  // namespace oracle
