#pragma once

#include <cstddef>
#include <span>

#include "capsnet/model.hpp"

namespace capsnet {

/// p <- p - lr * g, in place.
void sgd_step(ModelParams& params, const Gradients& grads, double lr);

/// As above with tensor q stepped by lr * scale[q].
void sgd_step(ModelParams& params, const Gradients& grads, double lr, std::span<const double> scale);

/// Adam with bias correction. Owns its moment buffers; one instance per training run.
class Adam {
 public:
  explicit Adam(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams& params, const Gradients& grads, double lr);
  /// Tensor q uses learning rate lr * scale[q].
  void step(ModelParams& params, const Gradients& grads, double lr, std::span<const double> scale);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  Gradients m_, v_;
};

}  // namespace capsnet
