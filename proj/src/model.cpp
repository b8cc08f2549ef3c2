#include "capsnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace capsnet {

void ModelConfig::validate() const {
  if (embed_dim == 0) throw std::invalid_argument("model: embed_dim must be >= 1");
  if (window_sizes.empty()) throw std::invalid_argument("model: at least one window size required");
  for (std::size_t k : window_sizes) {
    if (k == 0 || k > max_len) throw std::invalid_argument("model: window sizes must lie in [1, max_len]");
  }
  if (n_filters == 0) throw std::invalid_argument("model: n_filters must be >= 1");
  if (capsule_dim < 2) throw std::invalid_argument("model: capsule_dim must be >= 2");
  if (n_condensed == 0) throw std::invalid_argument("model: n_condensed must be >= 1");
  if (num_labels == 0) throw std::invalid_argument("model: num_labels must be >= 1");
}

std::size_t ModelConfig::primary_count() const {
  std::size_t total = 0;
  for (std::size_t k : window_sizes) total += (max_len - k + 1) * n_filters;
  return total;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(m_minus > 0.0 && m_minus < m_plus && m_plus <= 1.0)) {
    throw std::invalid_argument("train: margins must satisfy 0 < m_minus < m_plus <= 1");
  }
  if (!(down_weight >= 0.0)) throw std::invalid_argument("train: down_weight must be >= 0");
  if (dynamic_iterations < 1) throw std::invalid_argument("train: dynamic_iterations must be >= 1");
  if (candidates == 0) throw std::invalid_argument("train: candidates must be >= 1");
  if (!(aux_weight >= 0.0)) throw std::invalid_argument("train: aux_weight must be >= 0");
  if (!(scorer_lr_scale > 0.0)) throw std::invalid_argument("train: scorer_lr_scale must be > 0");
  if (!(qa_margin >= 0.0)) throw std::invalid_argument("train: qa_margin must be >= 0");
  routing.validate();
}

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg) {
  cfg.validate();
  const std::size_t v = cfg.embed_dim, f = cfg.n_filters, d = cfg.capsule_dim;
  auto add = [this](std::string name, ad::Shape shape) {
    const std::size_t n = ad::element_count(shape);
    tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  };
  for (std::size_t k : cfg.window_sizes) add("conv" + std::to_string(k), {f, k, v});
  for (std::size_t k : cfg.window_sizes) add("group" + std::to_string(k), {f, d});
  add("compression", {cfg.n_condensed, cfg.primary_count()});
  add("transforms", {cfg.num_labels, d, d});
  add("scorer_weight", {cfg.num_labels, v});
  add("scorer_bias", {cfg.num_labels});
}

ModelParams ModelParams::random(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](ParamTensor& t, double stddev) {
    for (double& e : t.value) e = stddev * normal(rng);
  };
  const double v = static_cast<double>(cfg.embed_dim);
  const double d = static_cast<double>(cfg.capsule_dim);
  for (std::size_t w = 0; w < cfg.window_sizes.size(); ++w) {
    fill(p.conv(w), std::sqrt(2.0 / (static_cast<double>(cfg.window_sizes[w]) * v)));
  }
  for (std::size_t w = 0; w < cfg.window_sizes.size(); ++w) fill(p.group(w), 1.0 / std::sqrt(d));
  fill(p.compression(), 2.0 / std::sqrt(static_cast<double>(cfg.primary_count())));
  fill(p.transforms(), 1.0 / std::sqrt(d));
  // The linear candidate scorer starts at zero.
  return p;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

Gradients ModelParams::zero_gradients() const {
  Gradients g;
  g.reserve(tensors_.size());
  for (const auto& t : tensors_) g.emplace_back(t.value.size(), 0.0);
  return g;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

void ModelParams::set_grad(const Gradients& g) {
  if (g.size() != tensors_.size()) throw std::invalid_argument("set_grad: tensor count mismatch");
  for (std::size_t q = 0; q < g.size(); ++q) {
    if (g[q].size() != tensors_[q].grad.size()) throw std::invalid_argument("set_grad: shape mismatch");
    tensors_[q].grad = g[q];
  }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t q = 0; q < a.tensors_.size(); ++q) {
    if (a.tensors_[q].name != b.tensors_[q].name || a.tensors_[q].shape != b.tensors_[q].shape ||
        a.tensors_[q].value != b.tensors_[q].value) {
      return false;
    }
  }
  return true;
}

EncodedDoc encode_document(const DocumentMatrix& tokens, std::size_t max_len) {
  if (tokens.rows() == 0) throw std::invalid_argument("encode_document: empty document");
  const std::size_t v = tokens.cols();
  EncodedDoc out;
  out.matrix = Mat(max_len, v, 0.0);
  const std::size_t keep = std::min(max_len, tokens.rows());
  std::copy_n(tokens.data().begin(), keep * v, out.matrix.data().begin());
  out.pooled.assign(v, 0.0);
  for (std::size_t r = 0; r < tokens.rows(); ++r)
    for (std::size_t c = 0; c < v; ++c) out.pooled[c] += tokens(r, c);
  for (double& e : out.pooled) e /= static_cast<double>(tokens.rows());
  return out;
}

namespace {

struct Bound {
  std::vector<ad::NodeId> conv;
  std::vector<ad::NodeId> group;
  ad::NodeId compression = 0;
  ad::NodeId transforms = 0;
  ad::NodeId scorer_weight = 0;
  ad::NodeId scorer_bias = 0;
};

Bound bind(ad::Graph& g, const ModelParams& p, Gradients* grads) {
  std::vector<ad::NodeId> ids;
  const auto& ts = p.tensors();
  for (std::size_t q = 0; q < ts.size(); ++q) {
    ids.push_back(grads ? g.parameter(ts[q].value, ts[q].shape, (*grads)[q]) : g.constant(ts[q].value, ts[q].shape));
  }
  const std::size_t w = p.config().window_sizes.size();
  Bound b;
  b.conv.assign(ids.begin(), ids.begin() + w);
  b.group.assign(ids.begin() + w, ids.begin() + 2 * w);
  b.compression = ids[2 * w];
  b.transforms = ids[2 * w + 1];
  b.scorer_weight = ids[2 * w + 2];
  b.scorer_bias = ids[2 * w + 3];
  return b;
}

ad::NodeId condensed_capsules(ad::Graph& g, const Bound& b, const EncodedDoc& doc) {
  const auto x = g.constant(doc.matrix.data(), {doc.matrix.rows(), doc.matrix.cols()});
  std::vector<ad::NodeId> caps;
  for (std::size_t w = 0; w < b.conv.size(); ++w) {
    caps.push_back(layers::primary_caps(g, layers::conv_relu(g, x, b.conv[w]), b.group[w]));
  }
  return layers::compress(g, b.compression, ad::concat_rows(g, caps));
}

struct ScheduleCursor {
  const RoutingSchedule* forced = nullptr;
  RoutingSchedule* record = nullptr;
  std::size_t next = 0;
};

routing::Routed route(ad::Graph& g, const Bound& b, ad::NodeId u, std::span<const std::size_t> outputs,
                      std::span<const double> weights, const TrainConfig& cfg, ScheduleCursor& sched) {
  const auto uhat = routing::predict(g, u, b.transforms, outputs);
  std::optional<int> fixed;
  if (sched.forced) {
    if (sched.next >= sched.forced->size()) throw std::invalid_argument("routing schedule exhausted");
    fixed = (*sched.forced)[sched.next++];
  }
  routing::Routed r = cfg.method == RoutingMethod::kde
                          ? routing::kde_route(g, uhat, weights, cfg.routing, fixed)
                          : routing::dynamic_route(g, uhat, fixed ? *fixed : cfg.dynamic_iterations,
                                                   cfg.routing.bandwidth);
  if (sched.record) sched.record->push_back(r.iterations);
  return r;
}

// sum_q y_q max(0, m+ - a_q)^2 + down (1 - y_q) max(0, a_q - m-)^2.
ad::NodeId margin_node(ad::Graph& g, ad::NodeId a, std::vector<char> target, const TrainConfig& cfg) {
  const auto& av = g.value(a);
  double loss = 0.0;
  for (std::size_t q = 0; q < av.size(); ++q) {
    if (target[q]) {
      const double h = std::max(0.0, cfg.m_plus - av[q]);
      loss += h * h;
    } else {
      const double h = std::max(0.0, av[q] - cfg.m_minus);
      loss += cfg.down_weight * h * h;
    }
  }
  return g.op({loss}, {1}, {a},
              [a, target = std::move(target), mp = cfg.m_plus, mm = cfg.m_minus, dw = cfg.down_weight](
                  ad::Graph& gr, ad::NodeId self) {
                const double go = gr.grad(self)[0];
                const auto& av = gr.value(a);
                auto ga = gr.grad(a);
                for (std::size_t q = 0; q < av.size(); ++q) {
                  if (target[q]) {
                    ga[q] += -2.0 * go * std::max(0.0, mp - av[q]);
                  } else {
                    ga[q] += 2.0 * dw * go * std::max(0.0, av[q] - mm);
                  }
                }
              });
}

// Cross-entropy of softmax(logits) against a target distribution.
ad::NodeId softmax_xent(ad::Graph& g, ad::NodeId logits, std::vector<double> target) {
  const Vec p = softmax(g.value(logits));
  double loss = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (target[j] > 0.0) loss -= target[j] * std::log(std::max(p[j], 1e-300));
  }
  return g.op({loss}, {1}, {logits}, [logits, p, target = std::move(target)](ad::Graph& gr, ad::NodeId self) {
    const double go = gr.grad(self)[0];
    auto gl = gr.grad(logits);
    double mass = 0.0;
    for (double t : target) mass += t;
    for (std::size_t j = 0; j < p.size(); ++j) gl[j] += go * (mass * p[j] - target[j]);
  });
}

ad::NodeId scorer_logits(ad::Graph& g, const Bound& b, const EncodedDoc& doc) {
  const auto x = g.constant(doc.pooled, {doc.pooled.size(), 1});
  return ad::add(g, ad::matmul(g, b.scorer_weight, x), b.scorer_bias);
}

// max(0, margin - s_pos + s_neg).
ad::NodeId ranking_hinge(ad::Graph& g, ad::NodeId s_pos, ad::NodeId s_neg, double margin) {
  const double raw = margin - g.value(s_pos)[0] + g.value(s_neg)[0];
  return g.op({std::max(0.0, raw)}, {1}, {s_pos, s_neg}, [s_pos, s_neg, raw](ad::Graph& gr, ad::NodeId self) {
    if (raw <= 0.0) return;
    const double go = gr.grad(self)[0];
    if (gr.requires_grad(s_pos)) gr.grad(s_pos)[0] -= go;
    if (gr.requires_grad(s_neg)) gr.grad(s_neg)[0] += go;
  });
}

const std::vector<std::size_t>& single_output() {
  static const std::vector<std::size_t> out{0};
  return out;
}

ad::NodeId final_capsule_node(ad::Graph& g, const Bound& b, const EncodedDoc& doc, const TrainConfig& cfg,
                              ScheduleCursor& sched) {
  const auto u = condensed_capsules(g, b, doc);
  return route(g, b, u, single_output(), {}, cfg, sched).v;
}

std::vector<std::size_t> sorted_outputs(std::span<const LabelId> labels, std::size_t n_labels) {
  std::set<LabelId> s(labels.begin(), labels.end());
  std::vector<std::size_t> out;
  for (LabelId j : s) {
    if (j < 0 || static_cast<std::size_t>(j) >= n_labels) {
      throw std::out_of_range("label " + std::to_string(j) + " outside label space");
    }
    out.push_back(static_cast<std::size_t>(j));
  }
  return out;
}

double loss_on_graph(ad::Graph& g, const Bound& b, const TrainExample& ex, const ModelParams& params,
                     const TrainConfig& cfg, ScheduleCursor& sched, ad::NodeId& root) {
  if (const auto* doc = std::get_if<LabeledDoc>(&ex)) {
    const std::size_t n_labels = params.config().num_labels;
    const auto subset = routing::partial_outputs(doc->pos, doc->neg, n_labels, cfg.routing.lambda);
    const auto u = condensed_capsules(g, b, doc->doc);
    const auto routed = route(g, b, u, subset.outputs, subset.weights, cfg, sched);
    std::vector<char> target(subset.outputs.size());
    for (std::size_t q = 0; q < target.size(); ++q) {
      target[q] = std::find(doc->pos.begin(), doc->pos.end(), static_cast<LabelId>(subset.outputs[q])) !=
                  doc->pos.end();
    }
    root = margin_node(g, routed.a, std::move(target), cfg);
    if (cfg.aux_weight > 0.0) {
      std::vector<double> dist(n_labels, 0.0);
      const auto positives = sorted_outputs(doc->pos, n_labels);
      for (std::size_t j : positives) dist[j] = 1.0 / static_cast<double>(positives.size());
      const auto xent = softmax_xent(g, scorer_logits(g, b, doc->doc), std::move(dist));
      root = ad::add(g, root, ad::scale(g, xent, cfg.aux_weight));
    }
  } else {
    const auto& t = std::get<RankedTriple>(ex);
    const auto vq = final_capsule_node(g, b, t.question, cfg, sched);
    const auto vp = final_capsule_node(g, b, t.positive, cfg, sched);
    const auto vn = final_capsule_node(g, b, t.negative, cfg, sched);
    root = ranking_hinge(g, ad::cosine(g, vq, vp), ad::cosine(g, vq, vn), cfg.qa_margin);
  }
  return g.value(root)[0];
}

}  // namespace

RoutingResult forward(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg,
                      const ForwardMode& mode) {
  const std::size_t n_labels = params.config().num_labels;
  ad::Graph g;
  const Bound b = bind(g, params, nullptr);
  const auto u = condensed_capsules(g, b, doc);

  routing::PartialOutputs subset;
  if (const auto* train = std::get_if<TrainMode>(&mode)) {
    subset = routing::partial_outputs(train->pos, train->neg, n_labels, cfg.routing.lambda);
  } else {
    subset.outputs = sorted_outputs(std::get<InferMode>(mode).candidates, n_labels);
    if (subset.outputs.empty()) throw std::invalid_argument("forward: empty candidate set");
    subset.weights.assign(subset.outputs.size(), 1.0);
  }
  ScheduleCursor sched;
  const auto routed = route(g, b, u, subset.outputs, subset.weights, cfg, sched);

  const std::size_t d = params.config().capsule_dim;
  const std::size_t m = params.config().n_condensed;
  RoutingResult res;
  res.v.assign(n_labels, Vec(d, 0.0));
  res.a.assign(n_labels, 0.0);
  res.c = Mat(m, n_labels, 0.0);
  const auto& vv = g.value(routed.v);
  const auto& av = g.value(routed.a);
  for (std::size_t q = 0; q < subset.outputs.size(); ++q) {
    const std::size_t j = subset.outputs[q];
    res.v[j].assign(vv.begin() + q * d, vv.begin() + (q + 1) * d);
    res.a[j] = av[q];
    for (std::size_t i = 0; i < m; ++i) res.c(i, j) = routed.c(i, q);
  }
  res.iterations = routed.iterations;
  res.nas_trace = routed.nas_trace;
  res.delta_trace = routed.delta_trace;
  return res;
}

double margin_loss(std::span<const double> a, std::span<const LabelId> labels, const TrainConfig& cfg) {
  double loss = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const bool positive = std::find(labels.begin(), labels.end(), static_cast<LabelId>(j)) != labels.end();
    if (positive) {
      const double h = std::max(0.0, cfg.m_plus - a[j]);
      loss += h * h;
    } else {
      const double h = std::max(0.0, a[j] - cfg.m_minus);
      loss += cfg.down_weight * h * h;
    }
  }
  return loss;
}

double example_loss(const TrainExample& ex, const ModelParams& params, const TrainConfig& cfg, Gradients* grads,
                    double weight, const RoutingSchedule* forced, RoutingSchedule* record) {
  ad::Graph g;
  const Bound b = bind(g, params, grads);
  ScheduleCursor sched{forced, record, 0};
  ad::NodeId root = 0;
  const double loss = loss_on_graph(g, b, ex, params, cfg, sched, root);
  if (grads) g.backward(root, weight);
  return loss;
}

namespace {

void accumulate(Gradients& into, const Gradients& from) {
  for (std::size_t q = 0; q < into.size(); ++q)
    for (std::size_t k = 0; k < into[q].size(); ++k) into[q][k] += from[q][k];
}

constexpr std::size_t kGradientSlots = 8;

}  // namespace

BatchGradient backward(std::span<const TrainExample> batch, const ModelParams& params, const TrainConfig& cfg) {
  BatchGradient out;
  out.grads = params.zero_gradients();
  if (batch.empty()) return out;
  const double weight = 1.0 / static_cast<double>(batch.size());
  // Instance b always lands in slot b % slots, so sums are independent of scheduling.
  const std::size_t slots = std::min(kGradientSlots, batch.size());
  std::vector<Gradients> partial(slots);
  std::vector<double> losses(slots, 0.0);
  const long n_slots = static_cast<long>(slots);
#pragma omp parallel for schedule(static, 1)
  for (long s = 0; s < n_slots; ++s) {
    partial[s] = params.zero_gradients();
    for (std::size_t b = static_cast<std::size_t>(s); b < batch.size(); b += slots) {
      losses[s] += example_loss(batch[b], params, cfg, &partial[s], weight);
    }
  }
  for (std::size_t s = 0; s < slots; ++s) {
    accumulate(out.grads, partial[s]);
    out.loss += losses[s];
  }
  out.loss *= weight;
  return out;
}

BatchGradient backward_serial(std::span<const TrainExample> batch, const ModelParams& params,
                              const TrainConfig& cfg) {
  BatchGradient out;
  out.grads = params.zero_gradients();
  if (batch.empty()) return out;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) out.loss += example_loss(ex, params, cfg, &out.grads, weight);
  out.loss *= weight;
  return out;
}

std::vector<LabelId> candidate_labels(const EncodedDoc& doc, const ModelParams& params, std::size_t k) {
  if (k == 0) throw std::invalid_argument("candidate_labels: K must be >= 1");
  const std::size_t n = params.config().num_labels;
  const std::size_t v = params.config().embed_dim;
  if (doc.pooled.size() != v) throw std::invalid_argument("candidate_labels: pooled embedding has wrong dimension");
  const auto& w = params.scorer_weight().value;
  const auto& bias = params.scorer_bias().value;
  std::vector<double> logits(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = bias[j];
    for (std::size_t c = 0; c < v; ++c) s += w[j * v + c] * doc.pooled[c];
    logits[j] = s;
  }
  std::vector<LabelId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](LabelId x, LabelId y) { return logits[x] > logits[y]; });
  order.resize(std::min(k, n));
  return order;
}

Vec infer_scores(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg) {
  return forward(doc, params, cfg, InferMode{candidate_labels(doc, params, cfg.candidates)}).a;
}

Vec final_capsule(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg) {
  if (params.config().num_labels != 1) throw std::invalid_argument("final_capsule: network must have one output");
  return forward(doc, params, cfg, InferMode{{0}}).v[0];
}

double qa_score(const EncodedDoc& question, const EncodedDoc& answer, const ModelParams& params,
                const TrainConfig& cfg) {
  const Vec vq = final_capsule(question, params, cfg);
  const Vec va = final_capsule(answer, params, cfg);
  if (norm(vq) == 0.0 || norm(va) == 0.0) return 0.0;
  return cosine_sim(vq, va);
}

}  // namespace capsnet
