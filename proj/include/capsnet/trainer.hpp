#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "capsnet/data.hpp"
#include "capsnet/metrics.hpp"
#include "capsnet/model.hpp"

namespace capsnet {

struct ClassificationSet {
  std::vector<EncodedDoc> docs;
  std::vector<std::vector<LabelId>> labels;
};
ClassificationSet encode_classification(std::span<const ClassificationRecord> records, const EmbeddingTable& table,
                                        std::size_t max_len);

struct QaSet {
  std::vector<EncodedDoc> questions;
  std::vector<std::vector<EncodedDoc>> answers;
  std::vector<std::vector<char>> relevant;
};
QaSet encode_qa(std::span<const QaGroup> groups, const EmbeddingTable& table, std::size_t max_len);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over the epoch's examples
  double seconds = 0.0;
};
using EpochCallback = std::function<void(const EpochStats&)>;

/// `epoch<TAB>loss<TAB>seconds`.
void write_epoch_line(std::ostream& out, const EpochStats& stats);

/// Negatives for one document: uniform without replacement from the labels not in
/// `pos`, as many as cfg.routing.negatives_for(|pos|) allows.
std::vector<LabelId> sample_negatives(std::span<const LabelId> pos, std::size_t n_labels, const RoutingConfig& cfg,
                                      std::mt19937_64& rng);

/// Mini-batch training with partial routing; negatives are redrawn every epoch.
/// Everything random derives from cfg.seed.
std::vector<EpochStats> train_classifier(ModelParams& params, const ClassificationSet& data, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

/// Pairwise ranking: each relevant answer is paired with one irrelevant answer of the
/// same question, redrawn every epoch.
std::vector<EpochStats> train_qa(ModelParams& params, const QaSet& data, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {});

/// P@k and NDCG@k under candidate-constrained inference, averaged over documents.
EvalReport evaluate_classifier(const ModelParams& params, const ClassificationSet& data, const TrainConfig& cfg,
                               std::span<const std::size_t> ks = {});

/// MAP and MRR, plus win_rate: the share of answerable questions whose every relevant
/// answer outscores every irrelevant one.
EvalReport evaluate_qa(const ModelParams& params, const QaSet& data, const TrainConfig& cfg);

}  // namespace capsnet
