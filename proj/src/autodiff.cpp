#include "capsnet/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace capsnet::ad {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

NodeId Graph::constant(std::vector<double> value, Shape shape) {
  if (value.size() != element_count(shape)) throw std::invalid_argument("constant: shape mismatch");
  Node n;
  n.value = std::move(value);
  n.shape = std::move(shape);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(std::span<const double> value, Shape shape, std::span<double> grad_sink) {
  if (value.size() != element_count(shape) || grad_sink.size() != value.size()) {
    throw std::invalid_argument("parameter: shape mismatch");
  }
  Node n;
  n.value.assign(value.begin(), value.end());
  n.shape = std::move(shape);
  n.sink = grad_sink;
  n.requires_grad = true;
  n.is_parameter = true;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::op(std::vector<double> value, Shape shape, std::initializer_list<NodeId> parents,
                 Backward backward) {
  return op(std::move(value), std::move(shape), std::span<const NodeId>(parents.begin(), parents.size()),
            std::move(backward));
}

NodeId Graph::op(std::vector<double> value, Shape shape, std::span<const NodeId> parents,
                 Backward backward) {
  if (value.size() != element_count(shape)) throw std::invalid_argument("op: shape mismatch");
  Node n;
  n.value = std::move(value);
  n.shape = std::move(shape);
  for (NodeId p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

std::span<double> Graph::grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(NodeId root, double seed) {
  if (nodes_[root].value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!nodes_[root].requires_grad) return;
  grad(root)[0] += seed;
  for (NodeId id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.is_parameter) {
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.sink[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

namespace {

void require_same(const Graph& g, NodeId a, NodeId b, const char* what) {
  if (g.value(a).size() != g.value(b).size()) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

std::size_t rows_of(const Graph& g, NodeId a) {
  if (g.shape(a).size() != 2) throw std::invalid_argument("expected a 2-D tensor");
  return g.shape(a)[0];
}

std::size_t cols_of(const Graph& g, NodeId a) {
  if (g.shape(a).size() != 2) throw std::invalid_argument("expected a 2-D tensor");
  return g.shape(a)[1];
}

}  // namespace

NodeId add(Graph& g, NodeId a, NodeId b) {
  require_same(g, a, b, "add");
  std::vector<double> out = g.value(a);
  const auto& vb = g.value(b);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += vb[k];
  return g.op(std::move(out), g.shape(a), {a, b}, [a, b](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    for (NodeId p : {a, b}) {
      if (!gr.requires_grad(p)) continue;
      auto gp = gr.grad(p);
      for (std::size_t k = 0; k < go.size(); ++k) gp[k] += go[k];
    }
  });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
  require_same(g, a, b, "sub");
  std::vector<double> out = g.value(a);
  const auto& vb = g.value(b);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= vb[k];
  return g.op(std::move(out), g.shape(a), {a, b}, [a, b](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    if (gr.requires_grad(a)) {
      auto ga = gr.grad(a);
      for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k];
    }
    if (gr.requires_grad(b)) {
      auto gb = gr.grad(b);
      for (std::size_t k = 0; k < go.size(); ++k) gb[k] -= go[k];
    }
  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  require_same(g, a, b, "mul");
  std::vector<double> out = g.value(a);
  const auto& vb = g.value(b);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= vb[k];
  return g.op(std::move(out), g.shape(a), {a, b}, [a, b](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    if (gr.requires_grad(a)) {
      auto ga = gr.grad(a);
      const auto& vb = gr.value(b);
      for (std::size_t k = 0; k < go.size(); ++k) ga[k] += go[k] * vb[k];
    }
    if (gr.requires_grad(b)) {
      auto gb = gr.grad(b);
      const auto& va = gr.value(a);
      for (std::size_t k = 0; k < go.size(); ++k) gb[k] += go[k] * va[k];
    }
  });
}

NodeId scale(Graph& g, NodeId a, double s) {
  std::vector<double> out = g.value(a);
  for (double& e : out) e *= s;
  return g.op(std::move(out), g.shape(a), {a}, [a, s](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    auto ga = gr.grad(a);
    for (std::size_t k = 0; k < go.size(); ++k) ga[k] += s * go[k];
  });
}

NodeId sum(Graph& g, NodeId a) {
  double s = 0.0;
  for (double e : g.value(a)) s += e;
  return g.op({s}, {1}, {a}, [a](Graph& gr, NodeId self) {
    const double go = gr.grad(self)[0];
    for (double& e : gr.grad(a)) e += go;
  });
}

NodeId relu(Graph& g, NodeId a) {
  std::vector<double> out = g.value(a);
  for (double& e : out) e = e > 0.0 ? e : 0.0;
  return g.op(std::move(out), g.shape(a), {a}, [a](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    auto ga = gr.grad(a);
    const auto& va = gr.value(a);
    for (std::size_t k = 0; k < go.size(); ++k) {
      if (va[k] > 0.0) ga[k] += go[k];
    }
  });
}

NodeId matmul(Graph& g, NodeId a, NodeId b) {
  const std::size_t r = rows_of(g, a), k = cols_of(g, a), c = cols_of(g, b);
  if (rows_of(g, b) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double x = va[i * k + t];
      if (x == 0.0) continue;
      const double* brow = vb.data() + t * c;
      double* orow = out.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) orow[j] += x * brow[j];
    }
  }
  return g.op(std::move(out), {r, c}, {a, b}, [a, b, r, k, c](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    if (gr.requires_grad(a)) {
      auto ga = gr.grad(a);
      const auto& vb = gr.value(b);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += go[i * c + j] * vb[t * c + j];
          ga[i * k + t] += s;
        }
      }
    }
    if (gr.requires_grad(b)) {
      auto gb = gr.grad(b);
      const auto& va = gr.value(a);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          const double x = va[i * k + t];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < c; ++j) gb[t * c + j] += x * go[i * c + j];
        }
      }
    }
  });
}

NodeId concat_rows(Graph& g, std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = cols_of(g, parts[0]);
  std::size_t r = 0;
  std::vector<double> out;
  for (NodeId p : parts) {
    if (cols_of(g, p) != c) throw std::invalid_argument("concat_rows: column mismatch");
    r += rows_of(g, p);
    out.insert(out.end(), g.value(p).begin(), g.value(p).end());
  }
  std::vector<NodeId> ids(parts.begin(), parts.end());
  return g.op(std::move(out), {r, c}, parts, [ids](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    std::size_t offset = 0;
    for (NodeId p : ids) {
      const std::size_t n = gr.value(p).size();
      if (gr.requires_grad(p)) {
        auto gp = gr.grad(p);
        for (std::size_t k = 0; k < n; ++k) gp[k] += go[offset + k];
      }
      offset += n;
    }
  });
}

NodeId gather_rows(Graph& g, NodeId a, std::span<const std::size_t> rows) {
  const std::size_t c = cols_of(g, a), total = rows_of(g, a);
  const auto& va = g.value(a);
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= total) throw std::out_of_range("gather_rows: row index out of range");
    out.insert(out.end(), va.begin() + r * c, va.begin() + (r + 1) * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.op(std::move(out), {idx.size(), c}, {a}, [a, idx, c](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    auto ga = gr.grad(a);
    for (std::size_t q = 0; q < idx.size(); ++q) {
      for (std::size_t k = 0; k < c; ++k) ga[idx[q] * c + k] += go[q * c + k];
    }
  });
}

NodeId squash_rows(Graph& g, NodeId a) {
  const std::size_t r = rows_of(g, a), c = cols_of(g, a);
  const auto& va = g.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < c; ++k) sq += va[i * c + k] * va[i * c + k];
    const double factor = std::sqrt(sq) / (1.0 + sq);
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = factor * va[i * c + k];
  }
  return g.op(std::move(out), {r, c}, {a}, [a, r, c](Graph& gr, NodeId self) {
    // y = phi(|x|) x with phi(t) = t / (1 + t^2); dy = phi dx + phi'(t)/t (x.dx) x.
    auto go = gr.grad(self);
    auto ga = gr.grad(a);
    const auto& va = gr.value(a);
    for (std::size_t i = 0; i < r; ++i) {
      const double* x = va.data() + i * c;
      const double* gy = go.data() + i * c;
      double sq = 0.0, xg = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        sq += x[k] * x[k];
        xg += x[k] * gy[k];
      }
      if (sq == 0.0) continue;
      const double t = std::sqrt(sq);
      const double phi = t / (1.0 + sq);
      const double dphi_over_t = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * t);
      for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += phi * gy[k] + dphi_over_t * xg * x[k];
    }
  });
}

NodeId row_norms(Graph& g, NodeId a) {
  const std::size_t r = rows_of(g, a), c = cols_of(g, a);
  const auto& va = g.value(a);
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < c; ++k) sq += va[i * c + k] * va[i * c + k];
    out[i] = std::sqrt(sq);
  }
  return g.op(std::move(out), {r}, {a}, [a, r, c](Graph& gr, NodeId self) {
    auto go = gr.grad(self);
    auto ga = gr.grad(a);
    const auto& va = gr.value(a);
    const auto& vo = gr.value(self);
    for (std::size_t i = 0; i < r; ++i) {
      if (vo[i] == 0.0) continue;
      for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += go[i] * va[i * c + k] / vo[i];
    }
  });
}

NodeId cosine(Graph& g, NodeId a, NodeId b) {
  require_same(g, a, b, "cosine");
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < va.size(); ++k) {
    ab += va[k] * vb[k];
    aa += va[k] * va[k];
    bb += vb[k] * vb[k];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double s = (na == 0.0 || nb == 0.0) ? 0.0 : ab / (na * nb);
  return g.op({s}, {1}, {a, b}, [a, b, na, nb, s](Graph& gr, NodeId self) {
    if (na == 0.0 || nb == 0.0) return;
    const double go = gr.grad(self)[0];
    const auto& va = gr.value(a);
    const auto& vb = gr.value(b);
    if (gr.requires_grad(a)) {
      auto ga = gr.grad(a);
      for (std::size_t k = 0; k < va.size(); ++k) ga[k] += go * (vb[k] / (na * nb) - s * va[k] / (na * na));
    }
    if (gr.requires_grad(b)) {
      auto gb = gr.grad(b);
      for (std::size_t k = 0; k < vb.size(); ++k) gb[k] += go * (va[k] / (na * nb) - s * vb[k] / (nb * nb));
    }
  });
}

}  // namespace capsnet::ad
