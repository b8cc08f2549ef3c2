#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "capsnet/metrics.hpp"
#include "doctest.h"

using namespace capsnet;

namespace {

// Brute-force forms written straight from the definitions.
double bf_precision(const std::vector<LabelId>& ranked, const std::set<LabelId>& truth, std::size_t k) {
  double hits = 0;
  for (std::size_t r = 0; r < k && r < ranked.size(); ++r) hits += truth.count(ranked[r]) ? 1 : 0;
  return hits / static_cast<double>(k);
}

double bf_ndcg(const std::vector<LabelId>& ranked, const std::set<LabelId>& truth, std::size_t k) {
  if (truth.empty()) return 0.0;
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t r = 1; r <= k && r <= ranked.size(); ++r)
    if (truth.count(ranked[r - 1])) dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  for (std::size_t r = 1; r <= std::min(k, truth.size()); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return dcg / ideal;
}

double bf_ap(const std::vector<char>& rel) {
  double found = 0, total = 0;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (!rel[r]) continue;
    found += 1;
    total += found / static_cast<double>(r + 1);
  }
  return found ? total / found : 0.0;
}

double bf_rr(const std::vector<char>& rel) {
  for (std::size_t r = 0; r < rel.size(); ++r)
    if (rel[r]) return 1.0 / static_cast<double>(r + 1);
  return 0.0;
}

}  // namespace

TEST_CASE("precision_at_k examples") {
  const std::vector<LabelId> ranked{4, 1, 7, 2};
  const std::vector<LabelId> perfect{4, 1, 7};
  CHECK(precision_at_k(ranked, perfect, 3) == 1.0);
  const std::vector<LabelId> at_1_3{4, 7};
  CHECK(precision_at_k(ranked, at_1_3, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(precision_at_k(ranked, {}, 2) == 0.0);
  CHECK_THROWS_AS(precision_at_k(ranked, perfect, 0), std::invalid_argument);
}

TEST_CASE("ndcg_at_k examples") {
  const std::vector<LabelId> ranked{0, 1, 2, 3};
  const std::vector<LabelId> top{0, 1};
  CHECK(ndcg_at_k(ranked, top, 2) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<LabelId> second{1};
  CHECK(ndcg_at_k(ranked, second, 2) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
  CHECK(ndcg_at_k(ranked, second, 2) == doctest::Approx(0.6309).epsilon(1e-4));
  const std::vector<LabelId> two_three{1, 2};
  const double expect = (1.0 / std::log2(3.0) + 0.5) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(ndcg_at_k(ranked, two_three, 3) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(ndcg_at_k(ranked, two_three, 3) == doctest::Approx(0.6934).epsilon(1e-4));
  CHECK(ndcg_at_k(ranked, {}, 3) == 0.0);
}

TEST_CASE("map and mrr examples") {
  const std::vector<RankedRelevance> first{{1, 0, 0}};
  CHECK(map_score(first) == 1.0);
  CHECK(mrr_score(first) == 1.0);
  const std::vector<RankedRelevance> one_three{{1, 0, 1, 0}};
  CHECK(map_score(one_three) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  const std::vector<RankedRelevance> fourth{{0, 0, 0, 1}};
  CHECK(mrr_score(fourth) == 0.25);
  // Questions without a positive are skipped.
  const std::vector<RankedRelevance> mixed{{0, 0}, {0, 1}};
  CHECK(map_score(mixed) == 0.5);
  CHECK(mrr_score(mixed) == 0.5);
  const std::vector<RankedRelevance> none{{0, 0}, {0}};
  CHECK_THROWS_AS(map_score(none), std::invalid_argument);
  CHECK_THROWS_AS(mrr_score(none), std::invalid_argument);
}

TEST_CASE("ranking ties break by ascending id") {
  const std::vector<double> scores{0.5, 0.9, 0.5, 0.9, 0.1};
  CHECK(rank_by_score(scores) == std::vector<LabelId>{1, 3, 0, 2, 4});
  const std::vector<char> rel{1, 0, 0, 1, 0};
  CHECK(rank_relevance(scores, rel) == RankedRelevance{0, 1, 1, 0, 0});
  CHECK_THROWS(rank_relevance(scores, std::vector<char>{1, 0}));
}

TEST_CASE("property: metrics equal brute force on 500 random cases") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<double> scores(n);
    for (double& s : scores) s = static_cast<double>(rng() % 5);  // plenty of ties
    std::set<LabelId> truth;
    for (std::size_t j = 0; j < n; ++j)
      if (rng() % 3 == 0) truth.insert(static_cast<LabelId>(j));
    const std::vector<LabelId> truth_list(truth.begin(), truth.end());

    // Brute-force ranking: selection of the best remaining score, lowest id on ties.
    std::vector<LabelId> ranked_bf;
    std::vector<char> used(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = n;
      for (std::size_t j = 0; j < n; ++j)
        if (!used[j] && (best == n || scores[j] > scores[best])) best = j;
      used[best] = 1;
      ranked_bf.push_back(static_cast<LabelId>(best));
    }
    const auto ranked = rank_by_score(scores);
    REQUIRE(ranked == ranked_bf);

    for (std::size_t k = 1; k <= n + 1; ++k) {
      const double p = precision_at_k(ranked, truth_list, k);
      const double g = ndcg_at_k(ranked, truth_list, k);
      CHECK(std::fabs(p - bf_precision(ranked, truth, k)) <= 1e-12);
      CHECK(std::fabs(g - bf_ndcg(ranked, truth, k)) <= 1e-12);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      CHECK(g >= 0.0);
      CHECK(g <= 1.0 + 1e-15);
    }
    CHECK(precision_at_k(ranked, truth_list, 1) == ndcg_at_k(ranked, truth_list, 1));

    std::vector<char> rel(n);
    for (std::size_t j = 0; j < n; ++j) rel[j] = truth.count(static_cast<LabelId>(j)) ? 1 : 0;
    const auto rr = rank_relevance(scores, rel);
    std::vector<char> rr_bf;
    for (LabelId j : ranked_bf) rr_bf.push_back(rel[j]);
    REQUIRE(rr == rr_bf);
    CHECK(std::fabs(average_precision(rr) - bf_ap(rr_bf)) <= 1e-12);
    if (!truth.empty()) {
      const std::vector<RankedRelevance> one{rr};
      CHECK(std::fabs(map_score(one) - bf_ap(rr_bf)) <= 1e-12);
      CHECK(std::fabs(mrr_score(one) - bf_rr(rr_bf)) <= 1e-12);
    }
  }
}

TEST_CASE("property: map and mrr over many questions") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RankedRelevance> qs(1 + rng() % 6);
    double ap = 0, rr = 0, counted = 0;
    for (auto& q : qs) {
      q.resize(1 + rng() % 8);
      for (auto& e : q) e = rng() % 3 == 0;
      if (std::find(q.begin(), q.end(), 1) == q.end()) continue;
      ap += bf_ap(q);
      rr += bf_rr(q);
      counted += 1;
    }
    if (counted == 0) {
      CHECK_THROWS(map_score(qs));
      continue;
    }
    CHECK(std::fabs(map_score(qs) - ap / counted) <= 1e-12);
    CHECK(std::fabs(mrr_score(qs) - rr / counted) <= 1e-12);
  }
}

TEST_CASE("EvalReport output formats") {
  EvalReport r;
  r.metrics = {{"P@1", 0.75}, {"NDCG@3", 0.5}};
  r.instances = 4;
  std::ostringstream tsv;
  r.write_tsv(tsv);
  CHECK(tsv.str() == "NDCG@3\t0.5\nP@1\t0.75\ninstances\t4\n");
  std::ostringstream text;
  r.write_text(text);
  CHECK(text.str().find("P@1") != std::string::npos);
  CHECK(text.str().find("0.7500") != std::string::npos);
}
