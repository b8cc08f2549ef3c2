#include "capsnet/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace capsnet {

namespace layers {

ad::NodeId conv_relu(ad::Graph& g, ad::NodeId doc, ad::NodeId filters) {
  const auto& ds = g.shape(doc);
  const auto& fs = g.shape(filters);
  if (ds.size() != 2 || fs.size() != 3) throw std::invalid_argument("conv_relu: bad tensor rank");
  const std::size_t l = ds[0], v = ds[1];
  const std::size_t n_filters = fs[0], k = fs[1];
  if (fs[2] != v) throw std::invalid_argument("conv_relu: filter width does not match embedding dim");
  if (k == 0) throw std::invalid_argument("conv_relu: zero window");
  // Left padding: row r of the padded document is row r - pad of the original.
  const std::size_t pad = l < k ? k - l : 0;
  const std::size_t positions = l + pad - k + 1;

  const auto& x = g.value(doc);
  const auto& w = g.value(filters);
  std::vector<double> pre(positions * n_filters, 0.0);
  for (std::size_t i = 0; i < positions; ++i) {
    for (std::size_t f = 0; f < n_filters; ++f) {
      double s = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        if (i + r < pad) continue;
        const double* xrow = x.data() + (i + r - pad) * v;
        const double* wrow = w.data() + (f * k + r) * v;
        for (std::size_t c = 0; c < v; ++c) s += wrow[c] * xrow[c];
      }
      pre[i * n_filters + f] = s;
    }
  }
  std::vector<double> out(pre.size());
  for (std::size_t q = 0; q < pre.size(); ++q) out[q] = pre[q] > 0.0 ? pre[q] : 0.0;

  return g.op(std::move(out), {positions, n_filters}, {doc, filters},
              [doc, filters, positions, n_filters, k, v, pad](ad::Graph& gr, ad::NodeId self) {
                auto go = gr.grad(self);
                const auto& out = gr.value(self);
                const auto& x = gr.value(doc);
                const auto& w = gr.value(filters);
                const bool want_w = gr.requires_grad(filters);
                const bool want_x = gr.requires_grad(doc);
                std::span<double> gw = want_w ? gr.grad(filters) : std::span<double>{};
                std::span<double> gx = want_x ? gr.grad(doc) : std::span<double>{};
                for (std::size_t i = 0; i < positions; ++i) {
                  for (std::size_t f = 0; f < n_filters; ++f) {
                    const double gpre = out[i * n_filters + f] > 0.0 ? go[i * n_filters + f] : 0.0;
                    if (gpre == 0.0) continue;
                    for (std::size_t r = 0; r < k; ++r) {
                      if (i + r < pad) continue;
                      const std::size_t xr = (i + r - pad) * v;
                      const std::size_t wr = (f * k + r) * v;
                      for (std::size_t c = 0; c < v; ++c) {
                        if (want_w) gw[wr + c] += gpre * x[xr + c];
                        if (want_x) gx[xr + c] += gpre * w[wr + c];
                      }
                    }
                  }
                }
              });
}

ad::NodeId primary_caps(ad::Graph& g, ad::NodeId features, ad::NodeId group_weights) {
  const auto& fs = g.shape(features);
  const auto& ws = g.shape(group_weights);
  if (fs.size() != 2 || ws.size() != 2 || fs[1] != ws[0]) {
    throw std::invalid_argument("primary_caps: need one weight vector per channel");
  }
  const std::size_t positions = fs[0], channels = fs[1], d = ws[1];
  const auto& m = g.value(features);
  const auto& w = g.value(group_weights);
  std::vector<double> out(positions * channels * d);
  for (std::size_t q = 0; q < positions * channels; ++q) {
    const std::size_t ch = q % channels;
    const double mq = m[q];
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += mq * w[ch * d + c] * mq * w[ch * d + c];
    const double factor = std::sqrt(sq) / (1.0 + sq);
    for (std::size_t c = 0; c < d; ++c) out[q * d + c] = factor * mq * w[ch * d + c];
  }
  return g.op(std::move(out), {positions * channels, d}, {features, group_weights},
              [features, group_weights, positions, channels, d](ad::Graph& gr, ad::NodeId self) {
                auto go = gr.grad(self);
                const auto& m = gr.value(features);
                const auto& w = gr.value(group_weights);
                const bool want_m = gr.requires_grad(features);
                const bool want_w = gr.requires_grad(group_weights);
                std::span<double> gm = want_m ? gr.grad(features) : std::span<double>{};
                std::span<double> gw = want_w ? gr.grad(group_weights) : std::span<double>{};
                std::vector<double> gx(d);
                for (std::size_t q = 0; q < positions * channels; ++q) {
                  const std::size_t ch = q % channels;
                  const double mq = m[q];
                  if (mq == 0.0) continue;  // squash has zero derivative at the origin
                  double sq = 0.0, xg = 0.0;
                  for (std::size_t c = 0; c < d; ++c) {
                    const double xc = mq * w[ch * d + c];
                    sq += xc * xc;
                    xg += xc * go[q * d + c];
                  }
                  if (sq == 0.0) continue;
                  const double t = std::sqrt(sq);
                  const double phi = t / (1.0 + sq);
                  const double dphi_over_t = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * t);
                  double gmq = 0.0;
                  for (std::size_t c = 0; c < d; ++c) {
                    const double xc = mq * w[ch * d + c];
                    gx[c] = phi * go[q * d + c] + dphi_over_t * xg * xc;
                    gmq += gx[c] * w[ch * d + c];
                  }
                  if (want_m) gm[q] += gmq;
                  if (want_w) {
                    for (std::size_t c = 0; c < d; ++c) gw[ch * d + c] += mq * gx[c];
                  }
                }
              });
}

ad::NodeId compress(ad::Graph& g, ad::NodeId weights, ad::NodeId primary) {
  return ad::squash_rows(g, ad::matmul(g, weights, primary));
}

}  // namespace layers

namespace {

std::vector<double> flatten(const CapsuleSet& caps, std::size_t& dim) {
  dim = caps.empty() ? 0 : caps.front().size();
  std::vector<double> flat;
  flat.reserve(caps.size() * dim);
  for (const Vec& c : caps) {
    if (c.size() != dim) throw std::invalid_argument("capsule set with mixed dimensions");
    flat.insert(flat.end(), c.begin(), c.end());
  }
  return flat;
}

CapsuleSet unflatten(const std::vector<double>& flat, std::size_t rows, std::size_t dim) {
  CapsuleSet caps(rows);
  for (std::size_t i = 0; i < rows; ++i) caps[i].assign(flat.begin() + i * dim, flat.begin() + (i + 1) * dim);
  return caps;
}

}  // namespace

FeatureMaps conv_features(const DocumentMatrix& doc, std::span<const FilterBank> banks) {
  if (doc.rows() == 0 || doc.cols() == 0) throw std::invalid_argument("conv_features: empty document");
  FeatureMaps fm;
  for (const FilterBank& bank : banks) {
    if (bank.embed_dim != doc.cols()) {
      throw std::invalid_argument("conv_features: filter bank for window " + std::to_string(bank.window) +
                                  " expects embedding dim " + std::to_string(bank.embed_dim));
    }
    ad::Graph g;
    const auto x = g.constant(doc.data(), {doc.rows(), doc.cols()});
    const auto w = g.constant(bank.weights, {bank.n_filters, bank.window, bank.embed_dim});
    const auto out = layers::conv_relu(g, x, w);
    fm.windows.push_back(bank.window);
    fm.maps.emplace_back(g.shape(out)[0], g.shape(out)[1], g.value(out));
  }
  return fm;
}

CapsuleSet primary_capsules(const FeatureMaps& fm, std::span<const Mat> group_weights) {
  if (group_weights.size() != fm.maps.size()) {
    throw std::invalid_argument("primary_capsules: need one group-weight matrix per feature map");
  }
  CapsuleSet caps;
  for (std::size_t k = 0; k < fm.maps.size(); ++k) {
    const Mat& map = fm.maps[k];
    const Mat& w = group_weights[k];
    if (w.cols() < 2) throw ContractViolation("primary_capsules: capsule dimension must be >= 2");
    ad::Graph g;
    const auto m = g.constant(map.data(), {map.rows(), map.cols()});
    const auto wb = g.constant(w.data(), {w.rows(), w.cols()});
    const auto out = layers::primary_caps(g, m, wb);
    CapsuleSet part = unflatten(g.value(out), g.shape(out)[0], w.cols());
    caps.insert(caps.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return caps;
}

CapsuleSet compress(const CapsuleSet& caps, const Mat& weights) {
  if (weights.cols() != caps.size()) {
    throw std::invalid_argument("compress: weight matrix has " + std::to_string(weights.cols()) +
                                " columns for " + std::to_string(caps.size()) + " capsules");
  }
  std::size_t dim = 0;
  auto flat = flatten(caps, dim);
  ad::Graph g;
  const auto b = g.constant(weights.data(), {weights.rows(), weights.cols()});
  const auto p = g.constant(std::move(flat), {caps.size(), dim});
  const auto out = layers::compress(g, b, p);
  return unflatten(g.value(out), weights.rows(), dim);
}

}  // namespace capsnet
