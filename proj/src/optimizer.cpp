#include "capsnet/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace capsnet {

namespace {

void check_layout(const ModelParams& params, const Gradients& grads) {
  const auto& ts = params.tensors();
  if (grads.size() != ts.size()) throw std::invalid_argument("optimizer: gradient tensor count mismatch");
  for (std::size_t q = 0; q < ts.size(); ++q) {
    if (grads[q].size() != ts[q].value.size()) throw std::invalid_argument("optimizer: gradient shape mismatch");
  }
}

void check_scale(const ModelParams& params, std::span<const double> scale) {
  if (scale.size() != params.tensors().size()) throw std::invalid_argument("optimizer: learning-rate scale count mismatch");
  for (double s : scale) {
    if (!(s > 0.0)) throw std::invalid_argument("optimizer: learning-rate scales must be > 0");
  }
}

}  // namespace

void sgd_step(ModelParams& params, const Gradients& grads, double lr) {
  const std::vector<double> ones(params.tensors().size(), 1.0);
  sgd_step(params, grads, lr, ones);
}

void sgd_step(ModelParams& params, const Gradients& grads, double lr, std::span<const double> scale) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  check_layout(params, grads);
  check_scale(params, scale);
  auto& ts = params.tensors();
  for (std::size_t q = 0; q < ts.size(); ++q)
    for (std::size_t k = 0; k < ts[q].value.size(); ++k) ts[q].value[k] -= lr * scale[q] * grads[q][k];
}

Adam::Adam(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(params.zero_gradients()), v_(params.zero_gradients()) {}

void Adam::step(ModelParams& params, const Gradients& grads, double lr) {
  const std::vector<double> ones(params.tensors().size(), 1.0);
  step(params, grads, lr, ones);
}

void Adam::step(ModelParams& params, const Gradients& grads, double lr, std::span<const double> scale) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
  check_layout(params, grads);
  check_scale(params, scale);
  if (m_.size() != grads.size()) throw std::invalid_argument("adam: optimizer bound to a different model");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& ts = params.tensors();
  for (std::size_t q = 0; q < ts.size(); ++q) {
    for (std::size_t k = 0; k < ts[q].value.size(); ++k) {
      const double g = grads[q][k];
      m_[q][k] = beta1_ * m_[q][k] + (1.0 - beta1_) * g;
      v_[q][k] = beta2_ * v_[q][k] + (1.0 - beta2_) * g * g;
      const double mhat = m_[q][k] / c1;
      const double vhat = v_[q][k] / c2;
      ts[q].value[k] -= lr * scale[q] * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace capsnet
