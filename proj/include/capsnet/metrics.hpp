#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "capsnet/routing.hpp"

namespace capsnet {

/// Indices sorted by descending score, ties by ascending index.
std::vector<LabelId> rank_by_score(std::span<const double> scores);

/// |top-k ∩ truth| / k. Throws std::invalid_argument for k == 0.
double precision_at_k(std::span<const LabelId> ranked, std::span<const LabelId> truth, std::size_t k);

/// Binary-relevance NDCG with a log2(r + 1) discount; 0 for empty truth.
double ndcg_at_k(std::span<const LabelId> ranked, std::span<const LabelId> truth, std::size_t k);

/// Relevance flags of one question's answers, in ranked order.
using RankedRelevance = std::vector<char>;

/// Answer relevance reordered by descending score, ties by original position.
RankedRelevance rank_relevance(std::span<const double> scores, std::span<const char> relevant);

double average_precision(std::span<const char> ranked_relevance);

// Questions without a relevant answer are skipped; if none remain, std::invalid_argument.
double map_score(std::span<const RankedRelevance> questions);
double mrr_score(std::span<const RankedRelevance> questions);

struct EvalReport {
  std::map<std::string, double> metrics;
  std::size_t instances = 0;

  /// Aligned human-readable table.
  void write_text(std::ostream& out) const;
  /// One `metric<TAB>value` line per metric, then `instances<TAB>n`.
  void write_tsv(std::ostream& out) const;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

}  // namespace capsnet
