#pragma once

// Minimal reverse-mode differentiation over flat double tensors.
//
// A Graph records nodes in creation order; every op node stores its forward
// value and a closure that pushes its output gradient into its parents. Nodes
// that do not depend on any parameter carry no closure, so a graph built from
// constants only is a plain forward evaluator.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace capsnet::ad {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::size_t element_count(const Shape& shape);

class Graph {
 public:
  using Backward = std::function<void(Graph&, NodeId self)>;

  NodeId constant(std::vector<double> value, Shape shape);

  /// Leaf whose gradient is accumulated into `grad_sink` by backward().
  NodeId parameter(std::span<const double> value, Shape shape, std::span<double> grad_sink);

  /// Adds an op node. `backward` is dropped when no parent requires a gradient.
  NodeId op(std::vector<double> value, Shape shape, std::initializer_list<NodeId> parents,
            Backward backward);
  NodeId op(std::vector<double> value, Shape shape, std::span<const NodeId> parents,
            Backward backward);

  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  const std::vector<double>& value(NodeId id) const { return nodes_[id].value; }
  const Shape& shape(NodeId id) const { return nodes_[id].shape; }

  /// Gradient buffer of a node, zero-allocated on first access.
  std::span<double> grad(NodeId id);
  bool has_grad(NodeId id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(root)/d(root) = seed and propagates to every parameter sink. Call once per graph.
  void backward(NodeId root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    Shape shape;
    Backward backward;
    std::span<double> sink;
    bool requires_grad = false;
    bool is_parameter = false;
  };
  std::vector<Node> nodes_;
};

// Generic elementwise and linear-algebra ops.
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double s);
NodeId sum(Graph& g, NodeId a);
NodeId relu(Graph& g, NodeId a);

/// (r x k) * (k x c) -> (r x c).
NodeId matmul(Graph& g, NodeId a, NodeId b);

/// Row-wise concatenation of 2-D tensors with equal column counts.
NodeId concat_rows(Graph& g, std::span<const NodeId> parts);

/// Rows `rows` of a 2-D tensor, in the given order.
NodeId gather_rows(Graph& g, NodeId a, std::span<const std::size_t> rows);

/// Row-wise squash of a 2-D tensor.
NodeId squash_rows(Graph& g, NodeId a);

/// Euclidean norm of each row of a 2-D tensor; gradient at a zero row is 0.
NodeId row_norms(Graph& g, NodeId a);

/// Cosine similarity of two equal-length vectors; 0 (with zero gradient) if either is zero.
NodeId cosine(Graph& g, NodeId a, NodeId b);

}  // namespace capsnet::ad
