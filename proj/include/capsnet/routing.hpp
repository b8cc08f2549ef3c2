#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "capsnet/autodiff.hpp"
#include "capsnet/layers.hpp"
#include "capsnet/numerics.hpp"

namespace capsnet {

using LabelId = int;

/// Candidates u_hat[j][i] (output j, input i), each a d-vector. Stored [j][i][k].
struct PredictionTensor {
  std::size_t n_out = 0;
  std::size_t n_in = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  PredictionTensor() = default;
  PredictionTensor(std::size_t outputs, std::size_t inputs, std::size_t d)
      : n_out(outputs), n_in(inputs), dim(d), data(outputs * inputs * d, 0.0) {}

  std::span<double> at(std::size_t j, std::size_t i) { return {data.data() + (j * n_in + i) * dim, dim}; }
  std::span<const double> at(std::size_t j, std::size_t i) const {
    return {data.data() + (j * n_in + i) * dim, dim};
  }

  /// Sub-tensor of the listed outputs, in list order.
  PredictionTensor select_outputs(std::span<const std::size_t> outputs) const;
};

struct RoutingConfig {
  double alpha = 0.1;
  double epsilon = 1e-3;  // on the log-NAS scale
  int max_iterations = 10;
  double bandwidth = 1.0;
  double lambda = 0.5;
  int neg_samples = -1;  // < 0: 2 * |pos| capped at 10

  void validate() const;
  int negatives_for(std::size_t n_pos) const;
};

struct RoutingResult {
  std::vector<Vec> v;
  Vec a;                // a[j] == norm(v[j])
  Mat c;                // m x n coupling coefficients used for the final v
  int iterations = 0;
  std::vector<double> nas_trace;    // log-NAS after each iteration
  std::vector<double> delta_trace;  // max_j |v_j(t) - v_j(t-1)| per iteration
};

/// u_hat[j][i] = transforms[j] * u[i].
PredictionTensor predict_candidates(const CapsuleSet& u, std::span<const Mat> transforms);

/// f = -sum_{i,j} w_j c_ij k(d(v_j, u_hat[j][i])) with column weights w (all 1 when empty).
double nas_score(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat,
                 const RoutingConfig& cfg, std::span<const double> column_weights = {});

/// log(-f), or -infinity when every pair is outside kernel support.
double log_nas(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat,
               const RoutingConfig& cfg, std::span<const double> column_weights = {});

/// One Epanechnikov mean-shift update of every v_j with c held fixed.
/// An output with no candidate inside kernel support keeps its previous value.
std::vector<Vec> mean_shift_step(const Mat& c, const std::vector<Vec>& v, const PredictionTensor& uhat,
                                 double bandwidth);

/// Adaptive KDE routing: iterates until the log-NAS change drops below epsilon.
RoutingResult kde_route_adaptive(const PredictionTensor& uhat, const RoutingConfig& cfg);

/// Routing-by-agreement with a fixed iteration count. `bandwidth` only affects nas_trace.
RoutingResult dynamic_route_baseline(const PredictionTensor& uhat, int iterations, double bandwidth = 1.0);

/// KDE routing restricted to pos and neg outputs, with neg kernel terms weighted by lambda.
/// Outputs outside pos and neg come back as zero capsules with zero coupling.
RoutingResult partial_route(const PredictionTensor& uhat, std::span<const LabelId> pos,
                            std::span<const LabelId> neg, const RoutingConfig& cfg);

/// One `iter<TAB>log_nas<TAB>max_delta_v` line per iteration.
void write_trace(std::ostream& out, const RoutingResult& result);

/// Routes many instances; OpenMP over instances.
std::vector<RoutingResult> route_batch(std::span<const PredictionTensor> batch, const RoutingConfig& cfg);
/// Single-threaded reference for route_batch.
std::vector<RoutingResult> route_batch_serial(std::span<const PredictionTensor> batch, const RoutingConfig& cfg);

namespace routing {

/// Output subset of a partial routing: ascending label ids with their kernel weights
/// (1 for positives, lambda for negatives). Throws on empty pos, overlap, or out-of-range ids.
struct PartialOutputs {
  std::vector<std::size_t> outputs;
  std::vector<double> weights;
};
PartialOutputs partial_outputs(std::span<const LabelId> pos, std::span<const LabelId> neg, std::size_t n_out,
                               double lambda);

struct Routed {
  ad::NodeId v = 0;  // n x d
  ad::NodeId a = 0;  // n
  Mat c;
  int iterations = 0;
  std::vector<double> nas_trace;
  std::vector<double> delta_trace;
};

/// u: (m x d); transforms: (N x d x d). Returns (n x m x d) for the listed outputs.
ad::NodeId predict(ad::Graph& g, ad::NodeId u, ad::NodeId transforms, std::span<const std::size_t> outputs);

/// Differentiable adaptive KDE routing over uhat (n x m x d). `column_weights` has one
/// entry per output (empty means all ones). `fixed_iterations` replaces the convergence
/// test with an exact iteration count.
Routed kde_route(ad::Graph& g, ad::NodeId uhat, std::span<const double> column_weights, const RoutingConfig& cfg,
                 std::optional<int> fixed_iterations = std::nullopt);

/// Differentiable routing-by-agreement.
Routed dynamic_route(ad::Graph& g, ad::NodeId uhat, int iterations, double bandwidth = 1.0);

}  // namespace routing

}  // namespace capsnet
