#include "capsnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <stdexcept>

namespace capsnet {

std::vector<LabelId> rank_by_score(std::span<const double> scores) {
  std::vector<LabelId> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](LabelId x, LabelId y) { return scores[x] > scores[y]; });
  return order;
}

double precision_at_k(std::span<const LabelId> ranked, std::span<const LabelId> truth, std::size_t k) {
  if (k == 0) throw std::invalid_argument("precision_at_k: k must be >= 1");
  const std::set<LabelId> t(truth.begin(), truth.end());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += t.count(ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

double ndcg_at_k(std::span<const LabelId> ranked, std::span<const LabelId> truth, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  const std::set<LabelId> t(truth.begin(), truth.end());
  if (t.empty()) return 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (t.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, t.size()); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / ideal;
}

RankedRelevance rank_relevance(std::span<const double> scores, std::span<const char> relevant) {
  if (scores.size() != relevant.size()) throw std::invalid_argument("rank_relevance: size mismatch");
  RankedRelevance out;
  for (LabelId i : rank_by_score(scores)) out.push_back(relevant[i] ? 1 : 0);
  return out;
}

double average_precision(std::span<const char> ranked_relevance) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (ranked_relevance[r]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return hits ? sum / static_cast<double>(hits) : 0.0;
}

namespace {

bool has_positive(const RankedRelevance& q) {
  return std::any_of(q.begin(), q.end(), [](char c) { return c != 0; });
}

template <class F>
double mean_over_answerable(std::span<const RankedRelevance> questions, const char* name, F per_question) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& q : questions) {
    if (!has_positive(q)) continue;
    sum += per_question(q);
    ++n;
  }
  if (n == 0) throw std::invalid_argument(std::string(name) + ": no question has a relevant answer");
  return sum / static_cast<double>(n);
}

}  // namespace

double map_score(std::span<const RankedRelevance> questions) {
  return mean_over_answerable(questions, "map_score", [](const RankedRelevance& q) { return average_precision(q); });
}

double mrr_score(std::span<const RankedRelevance> questions) {
  return mean_over_answerable(questions, "mrr_score", [](const RankedRelevance& q) {
    const auto it = std::find_if(q.begin(), q.end(), [](char c) { return c != 0; });
    return 1.0 / static_cast<double>(it - q.begin() + 1);
  });
}

void EvalReport::write_text(std::ostream& out) const {
  std::size_t width = std::string("instances").size();
  for (const auto& [name, value] : metrics) width = std::max(width, name.size());
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::left;
  for (const auto& [name, value] : metrics) {
    out << std::setw(static_cast<int>(width)) << name << "  " << std::fixed << std::setprecision(4) << value << '\n';
  }
  out << std::setw(static_cast<int>(width)) << "instances" << "  " << instances << '\n';
  out.flags(flags);
  out.precision(precision);
}

void EvalReport::write_tsv(std::ostream& out) const {
  const auto precision = out.precision();
  out << std::setprecision(17);
  for (const auto& [name, value] : metrics) out << name << '\t' << value << '\n';
  out << "instances\t" << instances << '\n';
  out.precision(precision);
}

}  // namespace capsnet
