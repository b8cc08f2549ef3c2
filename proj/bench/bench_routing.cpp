// Parallel vs serial timings for batch routing and the batch gradient.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include <omp.h>

#include "capsnet/model.hpp"
#include "capsnet/routing.hpp"

using namespace capsnet;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

bool same_routes(const std::vector<RoutingResult>& a, const std::vector<RoutingResult>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iterations != b[i].iterations || a[i].a != b[i].a) return false;
  }
  return true;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 0.5);

  const std::size_t batch = 256, n_out = 8, n_in = 32, dim = 8;
  std::vector<PredictionTensor> uhats;
  for (std::size_t b = 0; b < batch; ++b) {
    PredictionTensor u(n_out, n_in, dim);
    for (double& x : u.data) x = normal(rng);
    uhats.push_back(std::move(u));
  }
  RoutingConfig rc;
  std::vector<RoutingResult> par, ser;
  const double t_par = best_of(5, [&] { par = route_batch(uhats, rc); });
  const double t_ser = best_of(5, [&] { ser = route_batch_serial(uhats, rc); });
  std::printf("threads %d\n", omp_get_max_threads());
  std::printf("route_batch     %8.4f s  serial %8.4f s  speedup %.2fx  identical %s\n", t_par, t_ser,
              t_ser / t_par, same_routes(par, ser) ? "yes" : "NO");

  ModelConfig mc;
  mc.embed_dim = 32;
  mc.max_len = 16;
  mc.window_sizes = {2, 4};
  mc.n_filters = 8;
  mc.capsule_dim = 8;
  mc.n_condensed = 16;
  mc.num_labels = 6;
  const ModelParams params = ModelParams::random(mc, 3);
  TrainConfig tc;
  std::vector<TrainExample> examples;
  for (int b = 0; b < 64; ++b) {
    DocumentMatrix doc(mc.max_len, mc.embed_dim);
    for (std::size_t r = 0; r < doc.rows(); ++r)
      for (std::size_t c = 0; c < doc.cols(); ++c) doc(r, c) = normal(rng);
    LabeledDoc ld{encode_document(doc, mc.max_len), {b % 6}, {(b + 1) % 6, (b + 3) % 6}};
    examples.emplace_back(std::move(ld));
  }
  BatchGradient gp, gs;
  const double b_par = best_of(3, [&] { gp = backward(examples, params, tc); });
  const double b_ser = best_of(3, [&] { gs = backward_serial(examples, params, tc); });
  // Slot reduction reorders the sums, so compare against the serial reference up to rounding.
  double rel = 0.0;
  for (std::size_t q = 0; q < gs.grads.size(); ++q)
    for (std::size_t k = 0; k < gs.grads[q].size(); ++k)
      rel = std::max(rel, std::fabs(gp.grads[q][k] - gs.grads[q][k]) / (1.0 + std::fabs(gs.grads[q][k])));
  std::printf("backward        %8.4f s  serial %8.4f s  speedup %.2fx  max rel diff %.2e\n", b_par, b_ser,
              b_ser / b_par, rel);
  return 0;
}
