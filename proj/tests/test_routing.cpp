#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "capsnet/routing.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace capsnet;

namespace {

void check_close(const std::vector<Vec>& a, const std::vector<Vec>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    REQUIRE(a[j].size() == b[j].size());
    for (std::size_t k = 0; k < a[j].size(); ++k) CHECK(std::fabs(a[j][k] - b[j][k]) <= tol);
  }
}

void check_matches_oracle(const RoutingResult& r, const oracle::Trace& o, double tol) {
  REQUIRE(r.iterations == o.iterations);
  check_close(r.v, o.v, tol);
  for (std::size_t i = 0; i < o.c.size(); ++i)
    for (std::size_t j = 0; j < o.c[i].size(); ++j) CHECK(std::fabs(r.c(i, j) - o.c[i][j]) <= tol);
  REQUIRE(r.nas_trace.size() == o.nas.size());
  for (std::size_t t = 0; t < o.nas.size(); ++t) {
    CHECK(std::fabs(r.nas_trace[t] - o.nas[t]) <= tol);
    CHECK(std::fabs(r.delta_trace[t] - o.delta[t]) <= tol);
  }
}

RoutingResult run_route(const PredictionTensor& u, const RoutingConfig& cfg) { return kde_route_adaptive(u, cfg); }

}  // namespace

TEST_CASE("predict_candidates examples") {
  const CapsuleSet u{{0.2, 0.5}, {0.0, 0.0}};
  const std::vector<Mat> eye{Mat(2, 2, {1, 0, 0, 1})};
  const auto id = predict_candidates(u, eye);
  CHECK(id.at(0, 0)[0] == 0.2);
  CHECK(id.at(0, 0)[1] == 0.5);

  const std::vector<Mat> swap{Mat(2, 2, {0, 1, 1, 0}), Mat(2, 2, {2, 0, 0, 3})};
  const auto p = predict_candidates(u, swap);
  CHECK(p.n_out == 2);
  CHECK(p.n_in == 2);
  CHECK(p.at(0, 0)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p.at(0, 0)[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(p.at(1, 0)[0] == doctest::Approx(0.4));
  CHECK(p.at(1, 0)[1] == doctest::Approx(1.5));
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(p.at(j, 1)[0] == 0.0);
    CHECK(p.at(j, 1)[1] == 0.0);
  }

  CHECK_THROWS(predict_candidates(u, std::vector<Mat>{Mat(3, 3)}));
  CHECK_THROWS(predict_candidates(CapsuleSet{{1, 2}, {1, 2, 3}}, eye));
}

TEST_CASE("nas_score examples") {
  RoutingConfig cfg;
  PredictionTensor one(1, 1, 2);
  one.data = {0.3, -0.1};
  CHECK(nas_score(Mat(1, 1, 1.0), {{0.3, -0.1}}, one, cfg) == -1.0);
  CHECK(log_nas(Mat(1, 1, 1.0), {{0.3, -0.1}}, one, cfg) == 0.0);

  // Both candidates at distance >= bandwidth.
  PredictionTensor far(1, 2, 2);
  far.data = {1.0, 0.0, 0.0, -1.5};
  CHECK(nas_score(Mat(2, 1, 0.5), {{0.0, 0.0}}, far, cfg) == 0.0);
  CHECK(std::isinf(log_nas(Mat(2, 1, 0.5), {{0.0, 0.0}}, far, cfg)));
  CHECK(log_nas(Mat(2, 1, 0.5), {{0.0, 0.0}}, far, cfg) < 0.0);

  // Squared distances 0 and 0.5.
  PredictionTensor two(1, 2, 2);
  two.data = {0.0, 0.0, std::sqrt(0.5), 0.0};
  CHECK(nas_score(Mat(2, 1, 0.5), {{0.0, 0.0}}, two, cfg) == doctest::Approx(-0.75).epsilon(1e-14));

  // Column weights scale whole outputs.
  PredictionTensor pair(2, 1, 1);
  pair.data = {0.0, 0.0};
  const std::vector<double> w{1.0, 0.25};
  CHECK(nas_score(Mat(1, 2, 1.0), {{0.0}, {0.0}}, pair, cfg, w) == doctest::Approx(-1.25));
}

TEST_CASE("kde routing: single candidate") {
  PredictionTensor u(1, 1, 3);
  u.data = {0.4, -0.2, 0.1};
  RoutingConfig cfg;
  const auto r = run_route(u, cfg);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.v[0][k] == doctest::Approx(u.data[k]).epsilon(1e-15));
  // Only the coupling keeps moving; the count comes from the straight-line oracle.
  const auto o = oracle::kde(oracle::unpack(u), {1.0}, cfg.alpha, cfg.epsilon, cfg.max_iterations, cfg.bandwidth);
  check_matches_oracle(r, o, 1e-12);
  CHECK(r.iterations >= 2);
  CHECK(r.delta_trace[0] < 1e-15);
  CHECK(std::fabs(r.nas_trace.back() - r.nas_trace[r.nas_trace.size() - 2]) < cfg.epsilon);
}

TEST_CASE("kde routing: identical candidates per output") {
  RoutingConfig cfg;
  PredictionTensor u(2, 5, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    u.at(0, i)[0] = 0.3;
    u.at(0, i)[1] = 0.6;
    u.at(1, i)[0] = -0.5;
    u.at(1, i)[1] = 0.1;
  }
  const auto r = run_route(u, cfg);
  CHECK(r.v[0][0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.v[0][1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.v[1][0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(r.v[1][1] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("kde routing: two separated clusters") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.05);
  const std::size_t m = 12, d = 2;
  PredictionTensor u(2, m, d);
  const double centre[2][2] = {{0.6, 0.2}, {-0.4, -0.5}};
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) u.at(j, i)[k] = centre[j][k] + noise(rng);
  RoutingConfig cfg;
  const auto r = run_route(u, cfg);
  check_matches_oracle(r, oracle::kde(oracle::unpack(u), {1.0, 1.0}, cfg.alpha, cfg.epsilon, cfg.max_iterations,
                                      cfg.bandwidth),
                       1e-12);
  CHECK(r.iterations <= cfg.max_iterations);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t i = 0; i < m; ++i) {
        lo = std::min(lo, u.at(j, i)[k]);
        hi = std::max(hi, u.at(j, i)[k]);
      }
      CHECK(r.v[j][k] >= lo);
      CHECK(r.v[j][k] <= hi);
    }
  }
}

TEST_CASE("kde routing: outliers leave the support") {
  // Three tight points and one far outlier: the outlier pulls the initial mean and is
  // dropped once it falls outside the kernel.
  PredictionTensor u(1, 4, 1);
  u.data = {0.0, 0.1, -0.1, 3.0};
  RoutingConfig cfg;
  const auto r = run_route(u, cfg);
  check_matches_oracle(
      r, oracle::kde(oracle::unpack(u), {1.0}, cfg.alpha, cfg.epsilon, cfg.max_iterations, cfg.bandwidth), 1e-12);
  CHECK(std::fabs(r.v[0][0]) < 0.1);
}

TEST_CASE("kde routing: empty support freezes v") {
  // The uniform mean of +-2 is 0, outside both supports.
  PredictionTensor u(1, 2, 1);
  u.data = {2.0, -2.0};
  RoutingConfig cfg;
  const auto r = run_route(u, cfg);
  CHECK(r.v[0][0] == 0.0);
  CHECK(r.a[0] == 0.0);
  CHECK(std::isinf(r.nas_trace[0]));
  CHECK(r.iterations == 2);  // -inf twice counts as no change
}

TEST_CASE("kde routing matches the straight-line oracle on random instances") {
  std::mt19937_64 rng(5);
  RoutingConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 20, d = 2 + rng() % 6;
    const double spread = 0.3 + 0.2 * static_cast<double>(rng() % 6);
    const auto u = oracle::random_uhat(rng, n, m, d, spread);
    check_matches_oracle(run_route(u, cfg),
                         oracle::kde(oracle::unpack(u), std::vector<double>(n, 1.0), cfg.alpha, cfg.epsilon,
                                     cfg.max_iterations, cfg.bandwidth),
                         1e-12);
  }
}

TEST_CASE("dynamic routing examples") {
  std::mt19937_64 rng(2);
  SUBCASE("m = n = 1 gives squash of the candidate") {
    PredictionTensor u(1, 1, 3);
    u.data = {0.5, -1.0, 2.0};
    for (int it : {1, 3}) {
      const auto r = dynamic_route_baseline(u, it);
      const Vec s = oracle::squash(u.data);
      for (std::size_t k = 0; k < 3; ++k) CHECK(r.v[0][k] == doctest::Approx(s[k]).epsilon(1e-14));
      CHECK(r.iterations == it);
    }
  }
  SUBCASE("one iteration squashes the uniform mean") {
    // Zero logits give c = 1/n, which is the uniform mean only when m == n.
    const auto u = oracle::random_uhat(rng, 4, 4, 2, 1.0);
    const auto r = dynamic_route_baseline(u, 1);
    const auto cand = oracle::unpack(u);
    for (std::size_t j = 0; j < 4; ++j) {
      Vec mean(2, 0.0);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 2; ++k) mean[k] += cand[j][i][k] / 4.0;
      const Vec s = oracle::squash(mean);
      for (std::size_t k = 0; k < 2; ++k) CHECK(r.v[j][k] == doctest::Approx(s[k]).epsilon(1e-14));
    }
  }
  SUBCASE("m = 3, n = 2 random instances match the oracle step for step") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto u = oracle::random_uhat(rng, 2, 3, 4, 1.5);
      for (int it = 1; it <= 4; ++it) {
        const auto r = dynamic_route_baseline(u, it);
        const auto o = oracle::dynamic(oracle::unpack(u), it);
        CHECK(r.iterations == it);
        CHECK(r.nas_trace.size() == static_cast<std::size_t>(it));
        check_close(r.v, o.v, 1e-12);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 2; ++j) CHECK(r.c(i, j) == doctest::Approx(o.c[i][j]).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS(dynamic_route_baseline(PredictionTensor(1, 1, 2), 0));
}

TEST_CASE("partial routing examples") {
  std::mt19937_64 rng(9);
  RoutingConfig cfg;

  SUBCASE("full coverage with lambda = 1 equals full routing") {
    cfg.lambda = 1.0;
    const auto u = oracle::random_uhat(rng, 4, 10, 3, 0.8);
    const auto full = kde_route_adaptive(u, cfg);
    const auto part = partial_route(u, std::vector<LabelId>{0, 2}, std::vector<LabelId>{1, 3}, cfg);
    CHECK(part.iterations == full.iterations);
    check_close(part.v, full.v, 1e-9);
  }
  SUBCASE("no negatives equals routing on the positive sub-tensor") {
    cfg.lambda = 0.3;
    const auto u = oracle::random_uhat(rng, 5, 8, 3, 0.8);
    const std::vector<LabelId> pos{1, 4};
    const std::vector<std::size_t> outs{1, 4};
    const auto sub = kde_route_adaptive(u.select_outputs(outs), cfg);
    const auto part = partial_route(u, pos, {}, cfg);
    CHECK(part.iterations == sub.iterations);
    for (std::size_t q = 0; q < 2; ++q)
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(part.v[outs[q]][k] - sub.v[q][k]) <= 1e-12);
    for (std::size_t j : {0, 2, 3}) {
      CHECK(part.a[j] == 0.0);
      for (double e : part.v[j]) CHECK(e == 0.0);
      for (std::size_t i = 0; i < 8; ++i) CHECK(part.c(i, j) == 0.0);
    }
  }
  SUBCASE("6 labels, 2 positive, 2 negative, lambda 0.5 matches the weighted oracle") {
    cfg.lambda = 0.5;
    for (int trial = 0; trial < 50; ++trial) {
      const auto u = oracle::random_uhat(rng, 6, 12, 4, 0.9);
      std::vector<LabelId> labels(6);
      std::iota(labels.begin(), labels.end(), 0);
      std::shuffle(labels.begin(), labels.end(), rng);
      const std::vector<LabelId> pos{labels[0], labels[1]}, neg{labels[2], labels[3]};
      const auto r = partial_route(u, pos, neg, cfg);

      std::vector<LabelId> kept{labels[0], labels[1], labels[2], labels[3]};
      std::sort(kept.begin(), kept.end());
      const auto all = oracle::unpack(u);
      oracle::Candidates sub;
      std::vector<double> w;
      for (LabelId j : kept) {
        sub.push_back(all[j]);
        w.push_back(std::find(pos.begin(), pos.end(), j) != pos.end() ? 1.0 : 0.5);
      }
      const auto o = oracle::kde(sub, w, cfg.alpha, cfg.epsilon, cfg.max_iterations, cfg.bandwidth);
      REQUIRE(r.iterations == o.iterations);
      for (std::size_t q = 0; q < kept.size(); ++q)
        for (std::size_t k = 0; k < 4; ++k) CHECK(std::fabs(r.v[kept[q]][k] - o.v[q][k]) <= 1e-12);
      for (std::size_t t = 0; t < o.nas.size(); ++t) CHECK(std::fabs(r.nas_trace[t] - o.nas[t]) <= 1e-12);
      for (LabelId j = 0; j < 6; ++j) {
        if (std::find(kept.begin(), kept.end(), j) == kept.end()) CHECK(r.a[j] == 0.0);
      }
    }
  }
  SUBCASE("errors") {
    const auto u = oracle::random_uhat(rng, 3, 2, 2, 1.0);
    CHECK_THROWS_AS(partial_route(u, {}, std::vector<LabelId>{1}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(partial_route(u, std::vector<LabelId>{1}, std::vector<LabelId>{1, 2}, cfg),
                    std::invalid_argument);
    CHECK_THROWS(partial_route(u, std::vector<LabelId>{5}, {}, cfg));
  }
}

TEST_CASE("property: one mean-shift step never increases the objective") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 8, m = 1 + rng() % 32, d = 1 + rng() % 16;
    const double h = 0.5 + unif(rng);
    const auto u = oracle::random_uhat(rng, n, m, d, 0.5 + 0.5 * static_cast<double>(trial % 3));
    Mat c(m, n);
    for (double& e : c.data()) e = unif(rng);
    std::vector<Vec> v(n, Vec(d));
    std::normal_distribution<double> normal(0.0, 0.4 / std::sqrt(static_cast<double>(d)));
    for (auto& vj : v)
      for (double& e : vj) e = normal(rng);
    RoutingConfig cfg;
    cfg.bandwidth = h;
    const double before = nas_score(c, v, u, cfg);
    const double after = nas_score(c, mean_shift_step(c, v, u, h), u, cfg);
    CHECK(after <= before + 1e-9);
  }
}

TEST_CASE("property: termination rule and trace shape") {
  std::mt19937_64 rng(3);
  for (int max_it : {1, 3, 10}) {
    RoutingConfig cfg;
    cfg.max_iterations = max_it;
    for (int trial = 0; trial < 200; ++trial) {
      const auto u = oracle::random_uhat(rng, 1 + rng() % 8, 1 + rng() % 32, 2 + rng() % 8,
                                         0.2 + 0.1 * static_cast<double>(rng() % 15));
      const auto r = kde_route_adaptive(u, cfg);
      REQUIRE(r.iterations >= 1);
      REQUIRE(r.iterations <= max_it);
      REQUIRE(r.nas_trace.size() == static_cast<std::size_t>(r.iterations));
      REQUIRE(r.delta_trace.size() == static_cast<std::size_t>(r.iterations));
      const bool converged = r.iterations >= 2 && (r.nas_trace[r.iterations - 1] == r.nas_trace[r.iterations - 2] ||
                                                   std::fabs(r.nas_trace[r.iterations - 1] -
                                                             r.nas_trace[r.iterations - 2]) < cfg.epsilon);
      CHECK((converged || r.iterations == max_it));
      for (std::size_t j = 0; j < r.v.size(); ++j) CHECK(r.a[j] == norm(r.v[j]));
    }
  }
}

TEST_CASE("property: couplings stay positive with row sums below one") {
  std::mt19937_64 rng(8);
  RoutingConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const auto u = oracle::random_uhat(rng, 1 + rng() % 6, 1 + rng() % 16, 3, 0.7);
    const auto r = kde_route_adaptive(u, cfg);
    for (std::size_t i = 0; i < r.c.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.c.cols(); ++j) {
        CHECK(r.c(i, j) > 0.0);
        s += r.c(i, j);
      }
      CHECK(s < 1.0);
    }
  }
}

TEST_CASE("property: iteration counts adapt per instance while dynamic routing is fixed") {
  std::mt19937_64 rng(4);
  RoutingConfig cfg;
  std::vector<PredictionTensor> batch;
  for (int b = 0; b < 20; ++b) {
    const double spread = b % 2 ? 1e-3 : 0.9;  // tight vs dispersed clusters
    batch.push_back(oracle::random_uhat(rng, 4, 16, 4, spread));
  }
  std::set<int> kde_counts, dyn_counts;
  for (const auto& u : batch) {
    kde_counts.insert(kde_route_adaptive(u, cfg).iterations);
    dyn_counts.insert(dynamic_route_baseline(u, 3).iterations);
  }
  CHECK(kde_counts.size() >= 2);
  CHECK(dyn_counts == std::set<int>{3});
}

TEST_CASE("property: permutation equivariance over input capsules") {
  std::mt19937_64 rng(6);
  RoutingConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 5, m = 2 + rng() % 15, d = 2 + rng() % 5;
    const auto u = oracle::random_uhat(rng, n, m, d, 0.8);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PredictionTensor p(n, m, d);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) std::copy_n(u.at(j, perm[i]).begin(), d, p.at(j, i).begin());
    const auto a = kde_route_adaptive(u, cfg);
    const auto b = kde_route_adaptive(p, cfg);
    REQUIRE(a.iterations == b.iterations);
    check_close(a.v, b.v, 1e-12);
    for (std::size_t j = 0; j < n; ++j) CHECK(std::fabs(a.a[j] - b.a[j]) <= 1e-12);
    for (std::size_t t = 0; t < a.nas_trace.size(); ++t) CHECK(std::fabs(a.nas_trace[t] - b.nas_trace[t]) <= 1e-12);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(std::fabs(b.c(i, j) - a.c(perm[i], j)) <= 1e-12);
  }
}

TEST_CASE("route_batch equals the serial reference") {
  std::mt19937_64 rng(12);
  std::vector<PredictionTensor> batch;
  for (int b = 0; b < 64; ++b) batch.push_back(oracle::random_uhat(rng, 3, 10, 4, 0.8));
  RoutingConfig cfg;
  const auto par = route_batch(batch, cfg);
  const auto ser = route_batch_serial(batch, cfg);
  REQUIRE(par.size() == ser.size());
  for (std::size_t b = 0; b < par.size(); ++b) {
    CHECK(par[b].iterations == ser[b].iterations);
    CHECK(par[b].v == ser[b].v);
    CHECK(par[b].nas_trace == ser[b].nas_trace);
  }
}

TEST_CASE("trace export: one line per iteration") {
  std::mt19937_64 rng(13);
  RoutingConfig cfg;
  const auto r = kde_route_adaptive(oracle::random_uhat(rng, 3, 10, 4, 0.8), cfg);
  std::ostringstream out;
  write_trace(out, r);
  std::istringstream in(out.str());
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    ++count;
    std::istringstream fields(line);
    int it = 0;
    double nas = 0, delta = 0;
    fields >> it >> nas >> delta;
    CHECK(it == count);
    CHECK(nas == r.nas_trace[count - 1]);
    CHECK(delta == r.delta_trace[count - 1]);
    CHECK(std::count(line.begin(), line.end(), '\t') == 2);
  }
  CHECK(count == r.iterations);
}

TEST_CASE("routing config validation") {
  RoutingConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = RoutingConfig{};
  cfg.max_iterations = 0;
  CHECK_THROWS(cfg.validate());
  cfg = RoutingConfig{};
  cfg.bandwidth = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = RoutingConfig{};
  CHECK(cfg.negatives_for(2) == 4);
  CHECK(cfg.negatives_for(7) == 10);
  cfg.neg_samples = 3;
  CHECK(cfg.negatives_for(7) == 3);
}
