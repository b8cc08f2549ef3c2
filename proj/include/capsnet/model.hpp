#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "capsnet/autodiff.hpp"
#include "capsnet/layers.hpp"
#include "capsnet/routing.hpp"

namespace capsnet {

struct ModelConfig {
  std::size_t embed_dim = 300;
  std::size_t max_len = 32;  // documents are zero-padded or truncated to this many tokens
  std::vector<std::size_t> window_sizes{2, 4, 8};
  std::size_t n_filters = 32;
  std::size_t capsule_dim = 16;
  std::size_t n_condensed = 256;
  std::size_t num_labels = 2;

  void validate() const;
  std::size_t primary_count() const;
};

enum class RoutingMethod { kde, dynamic };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  double m_plus = 0.9;
  double m_minus = 0.1;
  double down_weight = 0.5;
  RoutingConfig routing;
  RoutingMethod method = RoutingMethod::kde;
  int dynamic_iterations = 3;
  std::size_t candidates = 200;
  double aux_weight = 1.0;
  double scorer_lr_scale = 1.0;  // learning-rate multiplier for the candidate scorer
  bool use_adam = true;
  double qa_margin = 0.2;

  void validate() const;
};

struct ParamTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// One gradient vector per parameter tensor, aligned with ModelParams::tensors().
using Gradients = std::vector<std::vector<double>>;

/// Every learnable tensor, each with a same-shape gradient buffer.
///
/// Tensor order: conv filters per window (F x k x v), group-conv weights per window
/// (F x d), compression matrix (n_condensed x n_primary), transforms (labels x d x d),
/// candidate-scorer weights (labels x v) and bias (labels).
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);  // all zeros
  static ModelParams random(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  ParamTensor& conv(std::size_t window_index) { return tensors_[window_index]; }
  ParamTensor& group(std::size_t window_index) { return tensors_[windows() + window_index]; }
  ParamTensor& compression() { return tensors_[2 * windows()]; }
  ParamTensor& transforms() { return tensors_[2 * windows() + 1]; }
  ParamTensor& scorer_weight() { return tensors_[2 * windows() + 2]; }
  ParamTensor& scorer_bias() { return tensors_[2 * windows() + 3]; }
  const ParamTensor& conv(std::size_t window_index) const { return tensors_[window_index]; }
  const ParamTensor& group(std::size_t window_index) const { return tensors_[windows() + window_index]; }
  const ParamTensor& compression() const { return tensors_[2 * windows()]; }
  const ParamTensor& transforms() const { return tensors_[2 * windows() + 1]; }
  const ParamTensor& scorer_weight() const { return tensors_[2 * windows() + 2]; }
  const ParamTensor& scorer_bias() const { return tensors_[2 * windows() + 3]; }

  std::size_t scalar_count() const;
  Gradients zero_gradients() const;
  void zero_grad();
  /// Copies `g` into the per-tensor grad buffers.
  void set_grad(const Gradients& g);

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::size_t windows() const { return config_.window_sizes.size(); }
  ModelConfig config_;
  std::vector<ParamTensor> tensors_;
};

/// A document ready for the network: fixed-length embedding matrix plus its mean-pooled
/// embedding (over real tokens) for the candidate scorer.
struct EncodedDoc {
  DocumentMatrix matrix;
  Vec pooled;
};

/// Pads with zero rows or truncates to `max_len` and records the pooled embedding.
EncodedDoc encode_document(const DocumentMatrix& tokens, std::size_t max_len);

struct LabeledDoc {
  EncodedDoc doc;
  std::vector<LabelId> pos;
  std::vector<LabelId> neg;
};

/// Question with one relevant and one irrelevant answer, for the pairwise ranking loss.
struct RankedTriple {
  EncodedDoc question;
  EncodedDoc positive;
  EncodedDoc negative;
};

using TrainExample = std::variant<LabeledDoc, RankedTriple>;

struct TrainMode {
  std::vector<LabelId> pos;
  std::vector<LabelId> neg;
};
struct InferMode {
  std::vector<LabelId> candidates;
};
using ForwardMode = std::variant<TrainMode, InferMode>;

/// Iteration count of every routing call made while evaluating one example, in call order.
using RoutingSchedule = std::vector<int>;

/// Full pipeline; the result spans the whole label space (unrouted labels are zero).
RoutingResult forward(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg,
                      const ForwardMode& mode);

/// Capsule margin loss on lengths: sum_j y_j max(0, m+ - a_j)^2 + down (1 - y_j) max(0, a_j - m-)^2.
double margin_loss(std::span<const double> a, std::span<const LabelId> labels, const TrainConfig& cfg);

/// Loss of one example; adds weight * d(loss)/d(params) into `grads` when given.
/// With `forced` set, each routing call runs exactly that many iterations; with
/// `record` set, the executed counts are appended.
double example_loss(const TrainExample& ex, const ModelParams& params, const TrainConfig& cfg,
                    Gradients* grads = nullptr, double weight = 1.0, const RoutingSchedule* forced = nullptr,
                    RoutingSchedule* record = nullptr);

struct BatchGradient {
  double loss = 0.0;  // mean over the batch
  Gradients grads;
};

/// Mean batch loss and its gradient. Instances run in parallel; the reduction order is
/// fixed so the result does not depend on the thread count.
BatchGradient backward(std::span<const TrainExample> batch, const ModelParams& params, const TrainConfig& cfg);
/// Single-threaded reference for backward().
BatchGradient backward_serial(std::span<const TrainExample> batch, const ModelParams& params,
                              const TrainConfig& cfg);

/// Top-K labels by the linear scorer on the pooled embedding, ties by ascending id.
std::vector<LabelId> candidate_labels(const EncodedDoc& doc, const ModelParams& params, std::size_t k);

/// Label scores (capsule lengths) under candidate-constrained inference.
Vec infer_scores(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg);

/// Final capsule of a single-output network.
Vec final_capsule(const EncodedDoc& doc, const ModelParams& params, const TrainConfig& cfg);

/// Cosine similarity of the two final capsules; 0 if either is zero.
double qa_score(const EncodedDoc& question, const EncodedDoc& answer, const ModelParams& params,
                const TrainConfig& cfg);

}  // namespace capsnet
