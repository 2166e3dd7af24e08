#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moeflow/init.hpp"
#include "moeflow/ops.hpp"

namespace moeflow {

// Two linear maps from raw window values to node embeddings; their pairwise
// dot products become attention logits and, after a row softmax, the dynamic
// adjacency of the window.
struct GraphAttnParams {
  int embed_dim = 16;
  Tensor w_src;  // (T, d_a)
  Tensor w_dst;  // (T, d_a)

  static GraphAttnParams init(int window, int embed_dim, Rng& rng) {
    GraphAttnParams p;
    p.embed_dim = embed_dim;
    p.w_src = fan_in_uniform({window, embed_dim}, window, rng);
    p.w_dst = fan_in_uniform({window, embed_dim}, window, rng);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".w_src", w_src}, {prefix + ".w_dst", w_dst}};
  }
};

// x: (B, K, T) raw window values -> row-stochastic adjacency (B, K, K).
// Plain dot-product logits, no sqrt(d) scaling.
inline Tensor learn_graph_batch(const Tensor& x, const GraphAttnParams& p) {
  if (x.rank() != 3) detail::shape_error("learn-graph", x.shape());
  Tensor src = matmul(x, p.w_src);                      // (B, K, d_a)
  Tensor dst = transpose(matmul(x, p.w_dst), 1, 2);     // (B, d_a, K)
  return row_softmax(matmul(src, dst));
}

inline Tensor learn_graph(const Tensor& window, const GraphAttnParams& p) {
  if (window.rank() != 2) detail::shape_error("learn-graph", window.shape());
  const int k = window.dim(0);
  Tensor a = learn_graph_batch(reshape(window, {1, k, window.dim(1)}), p);
  return reshape(a, {k, k});
}

struct GnnLayerParams {
  Tensor w_conv;  // graph convolution weight (d, d)
  Tensor w_hist;  // history information weight (d, d)
  Tensor w_out;   // output weight (d, d)

  static GnnLayerParams init(int hidden_dim, Rng& rng) {
    GnnLayerParams p;
    p.w_conv = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.w_hist = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.w_out = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".w_conv", w_conv},
            {prefix + ".w_hist", w_hist},
            {prefix + ".w_out", w_out}};
  }
};

// One spatio-temporal layer:
//   H_t = ReLU(A * H_prev_t * W_conv + H_prev_{t-1} * W_hist) * W_out
// with H_prev_{-1} = 0. adjacency: (B, K, K); h_prev: (B, K, T, d).
inline Tensor gnn_layer(const Tensor& adjacency, const Tensor& h_prev,
                        const GnnLayerParams& p) {
  if (h_prev.rank() != 4 || adjacency.rank() != 3)
    detail::shape_error("gnn-layer", adjacency.shape(), h_prev.shape());
  const int b = h_prev.dim(0);
  const int k = h_prev.dim(1);
  const int t_len = h_prev.dim(2);
  const int d = h_prev.dim(3);
  if (adjacency.dim(0) != b || adjacency.dim(1) != k || adjacency.dim(2) != k)
    detail::shape_error("gnn-layer", adjacency.shape(), h_prev.shape());

  // A acts on the entity axis for every t at once via a flattened view
  Tensor mixed = reshape(matmul(adjacency, reshape(h_prev, {b, k, t_len * d})),
                         {b, k, t_len, d});
  Tensor conv = matmul(mixed, p.w_conv);

  Tensor shifted = concat({Tensor::zeros({b, k, 1, d}),
                           slice(h_prev, 2, 0, t_len - 1)}, 2);
  Tensor hist = matmul(shifted, p.w_hist);

  return matmul(relu(add(conv, hist)), p.w_out);
}

// Runs L layers and keeps every intermediate output; downstream experts
// consume the whole stack, not just the deepest layer.
inline std::vector<Tensor> run_stack(const Tensor& adjacency, const Tensor& h0,
                                     const std::vector<GnnLayerParams>& layers) {
  if (layers.empty())
    raise(ErrorKind::Contract, "run_stack needs at least one layer");
  std::vector<Tensor> stack;
  stack.reserve(layers.size());
  Tensor h = h0;
  for (const GnnLayerParams& p : layers) {
    h = gnn_layer(adjacency, h, p);
    stack.push_back(h);
  }
  return stack;
}

}  // namespace moeflow
