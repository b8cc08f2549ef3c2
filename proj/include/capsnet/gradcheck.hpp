#pragma once

#include <cstdint>
#include <string>

#include "capsnet/model.hpp"

namespace capsnet {

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() against central differences on every parameter entry.
/// Relative error uses max(|g|, |g_fd|, 1e-8) as denominator. Routing iteration
/// counts are frozen at the values of the unperturbed evaluation, matching the
/// stop-gradient on the termination decision.
GradcheckReport finite_diff_check(const ModelParams& params, const TrainExample& example, const TrainConfig& cfg,
                                  double step = 1e-5);

/// A small random model (at most 6 condensed capsules, 4 labels, d = 4) with one example,
/// redrawn until it is away from ReLU and hinge kinks and every gradient entry is
/// either exactly 0 or at least 1e-6 in magnitude.
struct GradcheckCase {
  ModelParams params;
  TrainExample example;
  TrainConfig config;
};
GradcheckCase random_gradcheck_case(std::uint64_t seed, RoutingMethod method = RoutingMethod::kde);

}  // namespace capsnet
