#include "capsnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "capsnet/optimizer.hpp"

namespace capsnet {

ClassificationSet encode_classification(std::span<const ClassificationRecord> records, const EmbeddingTable& table,
                                        std::size_t max_len) {
  ClassificationSet set;
  for (const auto& r : records) {
    set.docs.push_back(encode_document(table.embed(r.tokens), max_len));
    set.labels.push_back(r.labels);
  }
  return set;
}

QaSet encode_qa(std::span<const QaGroup> groups, const EmbeddingTable& table, std::size_t max_len) {
  QaSet set;
  for (const auto& g : groups) {
    set.questions.push_back(encode_document(table.embed(g.question), max_len));
    std::vector<EncodedDoc> answers;
    for (const auto& a : g.answers) answers.push_back(encode_document(table.embed(a), max_len));
    set.answers.push_back(std::move(answers));
    set.relevant.push_back(g.relevant);
  }
  return set;
}

void write_epoch_line(std::ostream& out, const EpochStats& stats) {
  const auto precision = out.precision();
  out << stats.epoch << '\t' << std::setprecision(10) << stats.loss << '\t' << std::setprecision(4) << stats.seconds
      << '\n';
  out.precision(precision);
}

std::vector<LabelId> sample_negatives(std::span<const LabelId> pos, std::size_t n_labels, const RoutingConfig& cfg,
                                      std::mt19937_64& rng) {
  std::vector<LabelId> pool;
  for (std::size_t j = 0; j < n_labels; ++j) {
    if (std::find(pos.begin(), pos.end(), static_cast<LabelId>(j)) == pos.end()) pool.push_back(static_cast<LabelId>(j));
  }
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(cfg.negatives_for(pos.size())), pool.size());
  // Partial Fisher-Yates: the first `want` slots end up a uniform sample.
  for (std::size_t q = 0; q < want; ++q) {
    const std::size_t r = std::uniform_int_distribution<std::size_t>(q, pool.size() - 1)(rng);
    std::swap(pool[q], pool[r]);
  }
  pool.resize(want);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

class Stepper {
 public:
  Stepper(const ModelParams& params, const TrainConfig& cfg) : cfg_(cfg), scale_(params.tensors().size(), 1.0) {
    if (cfg.use_adam) adam_.emplace(params);
    const auto& ts = params.tensors();
    for (std::size_t q = 0; q < ts.size(); ++q) {
      if (&ts[q] == &params.scorer_weight() || &ts[q] == &params.scorer_bias()) scale_[q] = cfg.scorer_lr_scale;
    }
  }
  void step(ModelParams& params, const Gradients& grads) {
    if (adam_) adam_->step(params, grads, cfg_.learning_rate, scale_);
    else sgd_step(params, grads, cfg_.learning_rate, scale_);
    for (const auto& t : params.tensors()) {
      for (double x : t.value) {
        if (!std::isfinite(x)) throw std::runtime_error("training diverged: non-finite parameter in " + t.name);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> scale_;
  std::optional<Adam> adam_;
};

using Clock = std::chrono::steady_clock;

// Runs one epoch over `examples` in the given order; returns the mean loss.
double run_epoch(ModelParams& params, std::vector<TrainExample>& examples, const TrainConfig& cfg, Stepper& stepper) {
  double total = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
    const std::size_t len = std::min(cfg.batch_size, examples.size() - start);
    const std::span<const TrainExample> batch(examples.data() + start, len);
    BatchGradient bg = backward(batch, params, cfg);
    total += bg.loss * static_cast<double>(len);
    stepper.step(params, bg.grads);
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

}  // namespace

std::vector<EpochStats> train_classifier(ModelParams& params, const ClassificationSet& data, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.docs.size() != data.labels.size()) throw std::invalid_argument("train_classifier: docs/labels mismatch");
  const std::size_t n_labels = params.config().num_labels;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i].empty()) throw std::invalid_argument("train_classifier: document " + std::to_string(i) + " has no labels");
  }
  std::mt19937_64 rng(cfg.seed);
  Stepper stepper(params, cfg);
  std::vector<std::size_t> order(data.docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStats> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<TrainExample> examples;
    examples.reserve(order.size());
    for (std::size_t i : order) {
      LabeledDoc ex{data.docs[i], data.labels[i], sample_negatives(data.labels[i], n_labels, cfg.routing, rng)};
      examples.emplace_back(std::move(ex));
    }
    const double loss = run_epoch(params, examples, cfg, stepper);
    log.push_back({epoch, loss, std::chrono::duration<double>(Clock::now() - t0).count()});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

std::vector<EpochStats> train_qa(ModelParams& params, const QaSet& data, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch) {
  cfg.validate();
  if (params.config().num_labels != 1) throw std::invalid_argument("train_qa: network must have a single output capsule");
  if (data.questions.size() != data.answers.size() || data.answers.size() != data.relevant.size()) {
    throw std::invalid_argument("train_qa: inconsistent question set");
  }
  std::mt19937_64 rng(cfg.seed);
  Stepper stepper(params, cfg);
  std::vector<EpochStats> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::vector<TrainExample> examples;
    for (std::size_t q = 0; q < data.questions.size(); ++q) {
      std::vector<std::size_t> pos, neg;
      for (std::size_t a = 0; a < data.relevant[q].size(); ++a) (data.relevant[q][a] ? pos : neg).push_back(a);
      if (neg.empty()) continue;
      for (std::size_t p : pos) {
        const std::size_t n = neg[std::uniform_int_distribution<std::size_t>(0, neg.size() - 1)(rng)];
        examples.emplace_back(RankedTriple{data.questions[q], data.answers[q][p], data.answers[q][n]});
      }
    }
    std::shuffle(examples.begin(), examples.end(), rng);
    const double loss = run_epoch(params, examples, cfg, stepper);
    log.push_back({epoch, loss, std::chrono::duration<double>(Clock::now() - t0).count()});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

EvalReport evaluate_classifier(const ModelParams& params, const ClassificationSet& data, const TrainConfig& cfg,
                               std::span<const std::size_t> ks) {
  static const std::size_t kDefault[] = {1, 3, 5};
  if (ks.empty()) ks = kDefault;
  const std::size_t n = data.docs.size();
  std::vector<std::vector<LabelId>> ranked(n);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) ranked[i] = rank_by_score(infer_scores(data.docs[i], params, cfg));

  EvalReport report;
  report.instances = n;
  for (std::size_t k : ks) {
    double p = 0.0, g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p += precision_at_k(ranked[i], data.labels[i], k);
      g += ndcg_at_k(ranked[i], data.labels[i], k);
    }
    report.metrics["P@" + std::to_string(k)] = n ? p / static_cast<double>(n) : 0.0;
    report.metrics["NDCG@" + std::to_string(k)] = n ? g / static_cast<double>(n) : 0.0;
  }
  return report;
}

EvalReport evaluate_qa(const ModelParams& params, const QaSet& data, const TrainConfig& cfg) {
  const std::size_t n = data.questions.size();
  std::vector<std::vector<double>> scores(n);
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long q = 0; q < count; ++q) {
    const Vec vq = final_capsule(data.questions[q], params, cfg);
    for (const auto& a : data.answers[q]) {
      const Vec va = final_capsule(a, params, cfg);
      scores[q].push_back(norm(vq) == 0.0 || norm(va) == 0.0 ? 0.0 : cosine_sim(vq, va));
    }
  }
  std::vector<RankedRelevance> ranked;
  std::size_t answerable = 0, wins = 0;
  for (std::size_t q = 0; q < n; ++q) {
    ranked.push_back(rank_relevance(scores[q], data.relevant[q]));
    double worst_pos = 2.0, best_neg = -2.0;
    bool any_pos = false;
    for (std::size_t a = 0; a < scores[q].size(); ++a) {
      if (data.relevant[q][a]) {
        any_pos = true;
        worst_pos = std::min(worst_pos, scores[q][a]);
      } else {
        best_neg = std::max(best_neg, scores[q][a]);
      }
    }
    if (!any_pos) continue;
    ++answerable;
    if (worst_pos > best_neg) ++wins;
  }
  EvalReport report;
  report.instances = n;
  report.metrics["MAP"] = map_score(ranked);
  report.metrics["MRR"] = mrr_score(ranked);
  report.metrics["win_rate"] = static_cast<double>(wins) / static_cast<double>(answerable);
  return report;
}

}  // namespace capsnet
