#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capsnet/autodiff.hpp"
#include "capsnet/numerics.hpp"

namespace capsnet {

/// l x v matrix of stacked token embeddings.
using DocumentMatrix = Mat;

/// Ordered capsules of one common dimension.
using CapsuleSet = std::vector<Vec>;

/// n_filters filters of shape window x embed_dim, stored [filter][row][col].
struct FilterBank {
  std::size_t window = 0;
  std::size_t n_filters = 0;
  std::size_t embed_dim = 0;
  std::vector<double> weights;
};

/// One (positions x n_filters) activation map per window size, in bank order.
struct FeatureMaps {
  std::vector<std::size_t> windows;
  std::vector<Mat> maps;
};

/// Stride-1 convolution followed by ReLU, one map per filter bank.
/// Documents shorter than a window are left-padded with zero rows.
FeatureMaps conv_features(const DocumentMatrix& doc, std::span<const FilterBank> banks);

/// Group convolution: every scalar m of channel c becomes squash(m * w_c).
/// `group_weights[k]` is the (n_filters x d) weight matrix for map k.
/// Output is ordered map by map, position-major, channel-minor.
CapsuleSet primary_capsules(const FeatureMaps& fm, std::span<const Mat> group_weights);

/// Condensed capsule i = squash(sum_j B(i, j) * p_j).
CapsuleSet compress(const CapsuleSet& caps, const Mat& weights);

namespace layers {

// Differentiable counterparts; the value-level functions above are built on these.

/// doc: (l x v); filters: (F x k x v). Returns (max(l, k) - k + 1) x F.
ad::NodeId conv_relu(ad::Graph& g, ad::NodeId doc, ad::NodeId filters);

/// features: (P x F); group_weights: (F x d). Returns (P * F) x d squashed capsules.
ad::NodeId primary_caps(ad::Graph& g, ad::NodeId features, ad::NodeId group_weights);

/// weights: (n_condensed x n_primary); primary: (n_primary x d).
ad::NodeId compress(ad::Graph& g, ad::NodeId weights, ad::NodeId primary);

}  // namespace layers

}  // namespace capsnet
