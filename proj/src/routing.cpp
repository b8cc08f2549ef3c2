#include "capsnet/routing.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

namespace capsnet {

PredictionTensor PredictionTensor::select_outputs(std::span<const std::size_t> outputs) const {
  PredictionTensor sub(outputs.size(), n_in, dim);
  for (std::size_t q = 0; q < outputs.size(); ++q) {
    if (outputs[q] >= n_out) throw std::out_of_range("select_outputs: output index out of range");
    std::copy_n(data.begin() + outputs[q] * n_in * dim, n_in * dim, sub.data.begin() + q * n_in * dim);
  }
  return sub;
}

void RoutingConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("routing: alpha must be > 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("routing: epsilon must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("routing: max_iterations must be >= 1");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("routing: bandwidth must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("routing: lambda must be >= 0");
}

int RoutingConfig::negatives_for(std::size_t n_pos) const {
  if (neg_samples >= 0) return neg_samples;
  return static_cast<int>(std::min<std::size_t>(2 * n_pos, 10));
}

namespace routing {

namespace {

struct Dims {
  std::size_t n, m, d;
};

Dims dims_of(const ad::Graph& g, ad::NodeId uhat) {
  const auto& s = g.shape(uhat);
  if (s.size() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0) {
    throw std::invalid_argument("routing: prediction tensor must be non-empty n x m x d");
  }
  return {s[0], s[1], s[2]};
}

// v_j = mean_i u_hat[j][i].
ad::NodeId mean_candidates(ad::Graph& g, ad::NodeId uhat) {
  const auto [n, m, d] = dims_of(g, uhat);
  const auto& u = g.value(uhat);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] += u[(j * m + i) * d + k];
  for (double& e : out) e /= static_cast<double>(m);
  return g.op(std::move(out), {n, d}, {uhat}, [uhat, n, m, d](ad::Graph& gr, ad::NodeId self) {
    auto go = gr.grad(self);
    auto gu = gr.grad(uhat);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) gu[(j * m + i) * d + k] += inv * go[j * d + k];
  });
}

template <bool Leaky>
ad::NodeId softmax_rows(ad::Graph& g, ad::NodeId logits) {
  const std::size_t m = g.shape(logits)[0], n = g.shape(logits)[1];
  const auto& x = g.value(logits);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> row(x.data() + i * n, n);
    const Vec y = Leaky ? leaky_softmax(row) : softmax(row);
    std::copy(y.begin(), y.end(), out.begin() + i * n);
  }
  return g.op(std::move(out), {m, n}, {logits}, [logits, m, n](ad::Graph& gr, ad::NodeId self) {
    auto go = gr.grad(self);
    auto gx = gr.grad(logits);
    const auto& y = gr.value(self);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += y[i * n + j] * go[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (go[i * n + j] - s);
    }
  });
}

// D[i][j] = |v_j - u_hat[j][i]|^2 / h^2, shape m x n.
std::vector<double> sq_distances(const std::vector<double>& v, const std::vector<double>& u, Dims dm, double h) {
  const auto [n, m, d] = dm;
  std::vector<double> out(m * n);
  const double inv = 1.0 / (h * h);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = v[j * d + k] - u[(j * m + i) * d + k];
        s += diff * diff;
      }
      out[i * n + j] = s * inv;
    }
  }
  return out;
}

ad::NodeId sq_distance_node(ad::Graph& g, ad::NodeId v, ad::NodeId uhat, double h) {
  const Dims dm = dims_of(g, uhat);
  auto out = sq_distances(g.value(v), g.value(uhat), dm, h);
  return g.op(std::move(out), {dm.m, dm.n}, {v, uhat}, [v, uhat, dm, h](ad::Graph& gr, ad::NodeId self) {
    const auto [n, m, d] = dm;
    auto go = gr.grad(self);
    const auto& vv = gr.value(v);
    const auto& uu = gr.value(uhat);
    const bool want_v = gr.requires_grad(v), want_u = gr.requires_grad(uhat);
    std::span<double> gv = want_v ? gr.grad(v) : std::span<double>{};
    std::span<double> gu = want_u ? gr.grad(uhat) : std::span<double>{};
    const double c = 2.0 / (h * h);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        const double gij = go[i * n + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double t = c * gij * (vv[j * d + k] - uu[(j * m + i) * d + k]);
          if (want_v) gv[j * d + k] += t;
          if (want_u) gu[(j * m + i) * d + k] -= t;
        }
      }
    }
  });
}

ad::NodeId kernel_node(ad::Graph& g, ad::NodeId dist) {
  std::vector<double> out = g.value(dist);
  for (double& e : out) e = epanechnikov(e);
  return g.op(std::move(out), g.shape(dist), {dist}, [dist](ad::Graph& gr, ad::NodeId self) {
    auto go = gr.grad(self);
    auto gd = gr.grad(dist);
    const auto& dv = gr.value(dist);
    for (std::size_t q = 0; q < go.size(); ++q) gd[q] += epanechnikov_deriv(dv[q]) * go[q];
  });
}

// Epanechnikov mean shift. The support mask is piecewise constant in v and carries no gradient.
ad::NodeId mean_shift_node(ad::Graph& g, ad::NodeId c, ad::NodeId uhat, ad::NodeId v_prev,
                           std::vector<char> mask) {
  const Dims dm = dims_of(g, uhat);
  const auto [n, m, d] = dm;
  const auto& cc = g.value(c);
  const auto& uu = g.value(uhat);
  const auto& vp = g.value(v_prev);
  std::vector<double> out(n * d, 0.0);
  std::vector<double> total(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!mask[i * n + j]) continue;
      const double w = cc[i * n + j];
      total[j] += w;
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] += w * uu[(j * m + i) * d + k];
    }
    if (total[j] > 0.0) {
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] /= total[j];
    } else {
      std::copy_n(vp.begin() + j * d, d, out.begin() + j * d);
    }
  }
  return g.op(std::move(out), {n, d}, {c, uhat, v_prev},
              [c, uhat, v_prev, dm, mask = std::move(mask), total = std::move(total)](ad::Graph& gr,
                                                                                     ad::NodeId self) {
                const auto [n, m, d] = dm;
                auto go = gr.grad(self);
                const auto& vn = gr.value(self);
                const auto& cc = gr.value(c);
                const auto& uu = gr.value(uhat);
                const bool want_c = gr.requires_grad(c), want_u = gr.requires_grad(uhat),
                           want_v = gr.requires_grad(v_prev);
                std::span<double> gc = want_c ? gr.grad(c) : std::span<double>{};
                std::span<double> gu = want_u ? gr.grad(uhat) : std::span<double>{};
                std::span<double> gv = want_v ? gr.grad(v_prev) : std::span<double>{};
                for (std::size_t j = 0; j < n; ++j) {
                  if (total[j] == 0.0) {
                    if (want_v)
                      for (std::size_t k = 0; k < d; ++k) gv[j * d + k] += go[j * d + k];
                    continue;
                  }
                  for (std::size_t i = 0; i < m; ++i) {
                    if (!mask[i * n + j]) continue;
                    const double share = cc[i * n + j] / total[j];
                    double proj = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                      const std::size_t q = (j * m + i) * d + k;
                      if (want_u) gu[q] += share * go[j * d + k];
                      proj += (uu[q] - vn[j * d + k]) * go[j * d + k];
                    }
                    if (want_c) gc[i * n + j] += proj / total[j];
                  }
                }
              });
}

// C = Cn + coef_j * K.
ad::NodeId accumulate_node(ad::Graph& g, ad::NodeId cn, ad::NodeId kern, std::vector<double> coef) {
  const std::size_t m = g.shape(cn)[0], n = g.shape(cn)[1];
  std::vector<double> out = g.value(cn);
  const auto& kv = g.value(kern);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += coef[j] * kv[i * n + j];
  return g.op(std::move(out), {m, n}, {cn, kern},
              [cn, kern, m, n, coef = std::move(coef)](ad::Graph& gr, ad::NodeId self) {
                auto go = gr.grad(self);
                if (gr.requires_grad(cn)) {
                  auto gc = gr.grad(cn);
                  for (std::size_t q = 0; q < go.size(); ++q) gc[q] += go[q];
                }
                if (gr.requires_grad(kern)) {
                  auto gk = gr.grad(kern);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gk[i * n + j] += coef[j] * go[i * n + j];
                }
              });
}

// S_j = sum_i C_ij u_hat[j][i], shape n x d.
ad::NodeId weighted_sum_node(ad::Graph& g, ad::NodeId c, ad::NodeId uhat) {
  const Dims dm = dims_of(g, uhat);
  const auto [n, m, d] = dm;
  const auto& cc = g.value(c);
  const auto& uu = g.value(uhat);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] += cc[i * n + j] * uu[(j * m + i) * d + k];
  return g.op(std::move(out), {n, d}, {c, uhat}, [c, uhat, dm](ad::Graph& gr, ad::NodeId self) {
    const auto [n, m, d] = dm;
    auto go = gr.grad(self);
    const auto& cc = gr.value(c);
    const auto& uu = gr.value(uhat);
    const bool want_c = gr.requires_grad(c), want_u = gr.requires_grad(uhat);
    std::span<double> gc = want_c ? gr.grad(c) : std::span<double>{};
    std::span<double> gu = want_u ? gr.grad(uhat) : std::span<double>{};
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t q = (j * m + i) * d + k;
          proj += uu[q] * go[j * d + k];
          if (want_u) gu[q] += cc[i * n + j] * go[j * d + k];
        }
        if (want_c) gc[i * n + j] += proj;
      }
    }
  });
}

// A_ij = u_hat[j][i] . v_j, shape m x n.
ad::NodeId agreement_node(ad::Graph& g, ad::NodeId uhat, ad::NodeId v) {
  const Dims dm = dims_of(g, uhat);
  const auto [n, m, d] = dm;
  const auto& uu = g.value(uhat);
  const auto& vv = g.value(v);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) out[i * n + j] += uu[(j * m + i) * d + k] * vv[j * d + k];
  return g.op(std::move(out), {m, n}, {uhat, v}, [uhat, v, dm](ad::Graph& gr, ad::NodeId self) {
    const auto [n, m, d] = dm;
    auto go = gr.grad(self);
    const auto& uu = gr.value(uhat);
    const auto& vv = gr.value(v);
    const bool want_u = gr.requires_grad(uhat), want_v = gr.requires_grad(v);
    std::span<double> gu = want_u ? gr.grad(uhat) : std::span<double>{};
    std::span<double> gv = want_v ? gr.grad(v) : std::span<double>{};
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        const double gij = go[i * n + j];
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t q = (j * m + i) * d + k;
          if (want_u) gu[q] += gij * vv[j * d + k];
          if (want_v) gv[j * d + k] += gij * uu[q];
        }
      }
    }
  });
}

double max_row_change(const std::vector<double>& before, const std::vector<double>& after, std::size_t d) {
  double best = 0.0;
  for (std::size_t j = 0; j * d < before.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = after[j * d + k] - before[j * d + k];
      s += diff * diff;
    }
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

double weighted_log_sum(const std::vector<double>& c, const std::vector<double>& kern,
                        std::span<const double> weights, std::size_t n) {
  double s = 0.0;
  for (std::size_t q = 0; q < c.size(); ++q) s += weights[q % n] * c[q] * kern[q];
  return s > 0.0 ? std::log(s) : -std::numeric_limits<double>::infinity();
}

}  // namespace

PartialOutputs partial_outputs(std::span<const LabelId> pos, std::span<const LabelId> neg, std::size_t n_out,
                               double lambda) {
  if (pos.empty()) throw std::invalid_argument("partial routing: positive set is empty");
  std::set<LabelId> p(pos.begin(), pos.end());
  std::set<LabelId> all = p;
  for (LabelId j : neg) {
    if (p.count(j)) throw std::invalid_argument("partial routing: label " + std::to_string(j) + " is both positive and negative");
    all.insert(j);
  }
  PartialOutputs out;
  for (LabelId j : all) {
    if (j < 0 || static_cast<std::size_t>(j) >= n_out) {
      throw std::out_of_range("partial routing: label " + std::to_string(j) + " outside output space");
    }
    out.outputs.push_back(static_cast<std::size_t>(j));
    out.weights.push_back(p.count(j) ? 1.0 : lambda);
  }
  return out;
}

ad::NodeId predict(ad::Graph& g, ad::NodeId u, ad::NodeId transforms, std::span<const std::size_t> outputs) {
  const auto& us = g.shape(u);
  const auto& ws = g.shape(transforms);
  if (us.size() != 2 || ws.size() != 3 || ws[1] != us[1] || ws[2] != us[1]) {
    throw std::invalid_argument("predict: need d x d transforms for d-dimensional capsules");
  }
  const std::size_t m = us[0], d = us[1], total = ws[0], n = outputs.size();
  for (std::size_t o : outputs) {
    if (o >= total) throw std::out_of_range("predict: output index out of range");
  }
  const auto& uu = g.value(u);
  const auto& ww = g.value(transforms);
  std::vector<double> out(n * m * d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double* w = ww.data() + outputs[j] * d * d;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += w[r * d + c] * uu[i * d + c];
        out[(j * m + i) * d + r] = s;
      }
    }
  }
  std::vector<std::size_t> outs(outputs.begin(), outputs.end());
  return g.op(std::move(out), {n, m, d}, {u, transforms},
              [u, transforms, outs, m, d](ad::Graph& gr, ad::NodeId self) {
                auto go = gr.grad(self);
                const auto& uu = gr.value(u);
                const auto& ww = gr.value(transforms);
                const bool want_u = gr.requires_grad(u), want_w = gr.requires_grad(transforms);
                std::span<double> gu = want_u ? gr.grad(u) : std::span<double>{};
                std::span<double> gw = want_w ? gr.grad(transforms) : std::span<double>{};
                for (std::size_t j = 0; j < outs.size(); ++j) {
                  const std::size_t wo = outs[j] * d * d;
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t r = 0; r < d; ++r) {
                      const double gr_ = go[(j * m + i) * d + r];
                      if (gr_ == 0.0) continue;
                      for (std::size_t c = 0; c < d; ++c) {
                        if (want_w) gw[wo + r * d + c] += gr_ * uu[i * d + c];
                        if (want_u) gu[i * d + c] += gr_ * ww[wo + r * d + c];
                      }
                    }
                  }
                }
              });
}

Routed kde_route(ad::Graph& g, ad::NodeId uhat, std::span<const double> column_weights, const RoutingConfig& cfg,
                 std::optional<int> fixed_iterations) {
  cfg.validate();
  const Dims dm = dims_of(g, uhat);
  const auto [n, m, d] = dm;
  std::vector<double> weights(column_weights.begin(), column_weights.end());
  if (weights.empty()) weights.assign(n, 1.0);
  if (weights.size() != n) throw std::invalid_argument("kde_route: one column weight per output required");
  const int cap = fixed_iterations ? *fixed_iterations : cfg.max_iterations;
  if (cap < 1) throw std::invalid_argument("kde_route: at least one iteration required");

  std::vector<double> coef(weights);
  for (double& e : coef) e *= cfg.alpha;

  Routed out;
  ad::NodeId c = g.constant(std::vector<double>(m * n, 1.0 / static_cast<double>(n)), {m, n});
  ad::NodeId v = mean_candidates(g, uhat);
  std::vector<double> dist = sq_distances(g.value(v), g.value(uhat), dm, cfg.bandwidth);
  double last_nas = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= cap; ++t) {
    const ad::NodeId cn = softmax_rows<true>(g, c);
    std::vector<char> mask(dist.size());
    for (std::size_t q = 0; q < dist.size(); ++q) mask[q] = dist[q] < 1.0;
    const ad::NodeId v_next = mean_shift_node(g, cn, uhat, v, std::move(mask));
    const ad::NodeId dnode = sq_distance_node(g, v_next, uhat, cfg.bandwidth);
    const ad::NodeId kern = kernel_node(g, dnode);
    c = accumulate_node(g, cn, kern, coef);

    const double nas = weighted_log_sum(g.value(c), g.value(kern), weights, n);
    out.nas_trace.push_back(nas);
    out.delta_trace.push_back(max_row_change(g.value(v), g.value(v_next), d));
    out.c = Mat(m, n, g.value(cn));
    out.iterations = t;
    v = v_next;
    dist = g.value(dnode);

    if (fixed_iterations) continue;
    const double change = nas == last_nas ? 0.0 : std::abs(nas - last_nas);
    if (change < cfg.epsilon) break;
    last_nas = nas;
  }
  out.v = v;
  out.a = row_norms(g, v);
  return out;
}

Routed dynamic_route(ad::Graph& g, ad::NodeId uhat, int iterations, double bandwidth) {
  if (iterations < 1) throw std::invalid_argument("dynamic_route: iterations must be >= 1");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("dynamic_route: bandwidth must be > 0");
  const Dims dm = dims_of(g, uhat);
  const auto [n, m, d] = dm;
  const std::vector<double> ones(n, 1.0);

  Routed out;
  ad::NodeId logits = g.constant(std::vector<double>(m * n, 0.0), {m, n});
  ad::NodeId v = mean_candidates(g, uhat);
  for (int t = 1; t <= iterations; ++t) {
    const ad::NodeId c = softmax_rows<false>(g, logits);
    const ad::NodeId v_next = ad::squash_rows(g, weighted_sum_node(g, c, uhat));
    if (t < iterations) logits = ad::add(g, logits, agreement_node(g, uhat, v_next));

    auto dist = sq_distances(g.value(v_next), g.value(uhat), dm, bandwidth);
    for (double& e : dist) e = epanechnikov(e);
    out.nas_trace.push_back(weighted_log_sum(g.value(c), dist, ones, n));
    out.delta_trace.push_back(t == 1 ? max_row_change(std::vector<double>(n * d, 0.0), g.value(v_next), d)
                                     : max_row_change(g.value(v), g.value(v_next), d));
    out.c = Mat(m, n, g.value(c));
    out.iterations = t;
    v = v_next;
  }
  out.v = v;
  out.a = row_norms(g, v);
  return out;
}

}  // namespace routing

namespace {

RoutingResult to_result(const ad::Graph& g, const routing::Routed& r) {
  RoutingResult res;
  const auto& vv = g.value(r.v);
  const std::size_t n = g.shape(r.v)[0], d = g.shape(r.v)[1];
  res.v.resize(n);
  for (std::size_t j = 0; j < n; ++j) res.v[j].assign(vv.begin() + j * d, vv.begin() + (j + 1) * d);
  res.a = g.value(r.a);
  res.c = r.c;
  res.iterations = r.iterations;
  res.nas_trace = r.nas_trace;
  res.delta_trace = r.delta_trace;
  return res;
}

void check_shapes(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat) {
  if (c.rows() != uhat.n_in || c.cols() != uhat.n_out || v.size() != uhat.n_out) {
    throw std::invalid_argument("nas_score: shape mismatch");
  }
  for (const Vec& vj : v) {
    if (vj.size() != uhat.dim) throw std::invalid_argument("nas_score: capsule dimension mismatch");
  }
}

double weighted_agreement(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat,
                          const RoutingConfig& cfg, std::span<const double> column_weights) {
  check_shapes(c, v, uhat);
  if (!column_weights.empty() && column_weights.size() != uhat.n_out) {
    throw std::invalid_argument("nas_score: one column weight per output required");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < uhat.n_in; ++i) {
    for (std::size_t j = 0; j < uhat.n_out; ++j) {
      const double w = column_weights.empty() ? 1.0 : column_weights[j];
      s += w * c(i, j) * epanechnikov(sq_distance(v[j], uhat.at(j, i), cfg.bandwidth));
    }
  }
  return s;
}

}  // namespace

PredictionTensor predict_candidates(const CapsuleSet& u, std::span<const Mat> transforms) {
  if (u.empty() || transforms.empty()) throw std::invalid_argument("predict_candidates: empty input");
  const std::size_t d = u.front().size();
  std::vector<double> flat_u;
  for (const Vec& ui : u) {
    if (ui.size() != d) throw std::invalid_argument("predict_candidates: capsule dimension mismatch");
    flat_u.insert(flat_u.end(), ui.begin(), ui.end());
  }
  std::vector<double> flat_w;
  for (const Mat& w : transforms) {
    if (w.rows() != d || w.cols() != d) throw std::invalid_argument("predict_candidates: transform must be d x d");
    flat_w.insert(flat_w.end(), w.data().begin(), w.data().end());
  }
  ad::Graph g;
  const auto un = g.constant(std::move(flat_u), {u.size(), d});
  const auto wn = g.constant(std::move(flat_w), {transforms.size(), d, d});
  std::vector<std::size_t> outputs(transforms.size());
  for (std::size_t j = 0; j < outputs.size(); ++j) outputs[j] = j;
  const auto out = routing::predict(g, un, wn, outputs);
  PredictionTensor res(transforms.size(), u.size(), d);
  res.data = g.value(out);
  return res;
}

double nas_score(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat, const RoutingConfig& cfg,
                 std::span<const double> column_weights) {
  return -weighted_agreement(c, v, uhat, cfg, column_weights);
}

double log_nas(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat, const RoutingConfig& cfg,
               std::span<const double> column_weights) {
  const double s = weighted_agreement(c, v, uhat, cfg, column_weights);
  return s > 0.0 ? std::log(s) : -std::numeric_limits<double>::infinity();
}

std::vector<Vec> mean_shift_step(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat,
                                 double bandwidth) {
  check_shapes(c, v, uhat);
  ad::Graph g;
  const auto cn = g.constant(c.data(), {c.rows(), c.cols()});
  const auto un = g.constant(uhat.data, {uhat.n_out, uhat.n_in, uhat.dim});
  std::vector<double> flat_v;
  for (const Vec& vj : v) flat_v.insert(flat_v.end(), vj.begin(), vj.end());
  const auto vn = g.constant(flat_v, {uhat.n_out, uhat.dim});
  std::vector<char> mask(uhat.n_in * uhat.n_out);
  for (std::size_t i = 0; i < uhat.n_in; ++i)
    for (std::size_t j = 0; j < uhat.n_out; ++j)
      mask[i * uhat.n_out + j] = sq_distance(v[j], uhat.at(j, i), bandwidth) < 1.0;
  const auto out = routing::mean_shift_node(g, cn, un, vn, std::move(mask));
  std::vector<Vec> res(uhat.n_out);
  const auto& ov = g.value(out);
  for (std::size_t j = 0; j < uhat.n_out; ++j) res[j].assign(ov.begin() + j * uhat.dim, ov.begin() + (j + 1) * uhat.dim);
  return res;
}

RoutingResult kde_route_adaptive(const PredictionTensor& uhat, const RoutingConfig& cfg) {
  ad::Graph g;
  const auto un = g.constant(uhat.data, {uhat.n_out, uhat.n_in, uhat.dim});
  return to_result(g, routing::kde_route(g, un, {}, cfg));
}

RoutingResult dynamic_route_baseline(const PredictionTensor& uhat, int iterations, double bandwidth) {
  ad::Graph g;
  const auto un = g.constant(uhat.data, {uhat.n_out, uhat.n_in, uhat.dim});
  return to_result(g, routing::dynamic_route(g, un, iterations, bandwidth));
}

RoutingResult partial_route(const PredictionTensor& uhat, std::span<const LabelId> pos,
                            std::span<const LabelId> neg, const RoutingConfig& cfg) {
  const auto subset = routing::partial_outputs(pos, neg, uhat.n_out, cfg.lambda);
  const PredictionTensor sub = uhat.select_outputs(subset.outputs);
  ad::Graph g;
  const auto un = g.constant(sub.data, {sub.n_out, sub.n_in, sub.dim});
  const RoutingResult local = to_result(g, routing::kde_route(g, un, subset.weights, cfg));

  RoutingResult full;
  full.v.assign(uhat.n_out, Vec(uhat.dim, 0.0));
  full.a.assign(uhat.n_out, 0.0);
  full.c = Mat(uhat.n_in, uhat.n_out, 0.0);
  for (std::size_t q = 0; q < subset.outputs.size(); ++q) {
    const std::size_t j = subset.outputs[q];
    full.v[j] = local.v[q];
    full.a[j] = local.a[q];
    for (std::size_t i = 0; i < uhat.n_in; ++i) full.c(i, j) = local.c(i, q);
  }
  full.iterations = local.iterations;
  full.nas_trace = local.nas_trace;
  full.delta_trace = local.delta_trace;
  return full;
}

void write_trace(std::ostream& out, const RoutingResult& result) {
  out << std::setprecision(17);
  for (int t = 0; t < result.iterations; ++t) {
    out << (t + 1) << '\t' << result.nas_trace[t] << '\t' << result.delta_trace[t] << '\n';
  }
}

std::vector<RoutingResult> route_batch(std::span<const PredictionTensor> batch, const RoutingConfig& cfg) {
  cfg.validate();
  std::vector<RoutingResult> out(batch.size());
  const long count = static_cast<long>(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (long b = 0; b < count; ++b) out[b] = kde_route_adaptive(batch[b], cfg);
  return out;
}

std::vector<RoutingResult> route_batch_serial(std::span<const PredictionTensor> batch, const RoutingConfig& cfg) {
  cfg.validate();
  std::vector<RoutingResult> out;
  out.reserve(batch.size());
  for (const auto& p : batch) out.push_back(kde_route_adaptive(p, cfg));
  return out;
}

}  // namespace capsnet
