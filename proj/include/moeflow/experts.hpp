#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "moeflow/init.hpp"
#include "moeflow/ops.hpp"

namespace moeflow {

// One expert per GNN layer: cross-attention over the entity axis (queries
// from the RNN embedding, keys/values from that layer's output) followed by
// a two-layer FFN.
struct ExpertParams {
  Tensor w_q, w_k, w_v, w_o;              // (d, d)
  Tensor ln_gamma, ln_beta;               // (d)
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // d -> d_ff -> d

  static ExpertParams init(int hidden_dim, int ffn_dim, Rng& rng) {
    ExpertParams p;
    p.w_q = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.w_k = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.w_v = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.w_o = fan_in_uniform({hidden_dim, hidden_dim}, hidden_dim, rng);
    p.ln_gamma = Tensor::full({hidden_dim}, 1.0);
    p.ln_gamma.set_requires_grad(true);
    p.ln_beta = Tensor::zeros({hidden_dim});
    p.ln_beta.set_requires_grad(true);
    p.ffn_w1 = fan_in_uniform({hidden_dim, ffn_dim}, hidden_dim, rng);
    p.ffn_b1 = fan_in_uniform({ffn_dim}, hidden_dim, rng);
    p.ffn_w2 = fan_in_uniform({ffn_dim, hidden_dim}, ffn_dim, rng);
    p.ffn_b2 = fan_in_uniform({hidden_dim}, ffn_dim, rng);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".w_q", w_q},         {prefix + ".w_k", w_k},
            {prefix + ".w_v", w_v},         {prefix + ".w_o", w_o},
            {prefix + ".ln_gamma", ln_gamma}, {prefix + ".ln_beta", ln_beta},
            {prefix + ".ffn_w1", ffn_w1},   {prefix + ".ffn_b1", ffn_b1},
            {prefix + ".ffn_w2", ffn_w2},   {prefix + ".ffn_b2", ffn_b2}};
  }
};

struct ExpertOutput {
  Tensor attended;   // LN(attention output), (B, K, T, d)
  Tensor aligned;    // FFN(attended), (B, K, T, d)
  Tensor attention;  // attention weights (B, T, K, K), rows sum to 1
};

// h: RNN embedding (B, K, T, d); h_layer: one GNN layer output, same shape.
// Attention runs over entities independently at each time step, single head,
// scaled by 1/sqrt(d).
inline ExpertOutput expert_forward(const Tensor& h, const Tensor& h_layer,
                                   const ExpertParams& p) {
  if (h.rank() != 4 || h.shape() != h_layer.shape())
    detail::shape_error("expert", h.shape(), h_layer.shape());
  const int b = h.dim(0);
  const int k = h.dim(1);
  const int t_len = h.dim(2);
  const int d = h.dim(3);

  Tensor hq = reshape(transpose(h, 1, 2), {b * t_len, k, d});
  Tensor hkv = reshape(transpose(h_layer, 1, 2), {b * t_len, k, d});
  Tensor q = matmul(hq, p.w_q);
  Tensor key = matmul(hkv, p.w_k);
  Tensor val = matmul(hkv, p.w_v);

  Tensor logits = scale(matmul(q, transpose(key)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = row_softmax(logits);  // (B*T, K, K)

  Tensor ctx = matmul(matmul(attn, val), p.w_o);
  Tensor normed = add(mul(layer_norm(ctx), p.ln_gamma), p.ln_beta);

  ExpertOutput out;
  out.attended = transpose(reshape(normed, {b, t_len, k, d}), 1, 2);
  Tensor hidden = relu(add(matmul(out.attended, p.ffn_w1), p.ffn_b1));
  out.aligned = add(matmul(hidden, p.ffn_w2), p.ffn_b2);
  out.attention = reshape(attn, {b, t_len, k, k});
  return out;
}

// Stacks per-layer tensors along a new leading hierarchy axis, order
// preserved: L inputs of shape S -> (L, S...).
inline Tensor collect_hierarchy(const std::vector<Tensor>& levels) {
  if (levels.empty())
    raise(ErrorKind::Contract, "collect_hierarchy needs at least one level");
  const Shape& s0 = levels[0].shape();
  std::vector<Tensor> expanded;
  expanded.reserve(levels.size());
  for (const Tensor& t : levels) {
    if (t.shape() != s0)
      detail::shape_error("collect-hierarchy", s0, t.shape());
    Shape with_axis = s0;
    with_axis.insert(with_axis.begin(), 1);
    expanded.push_back(reshape(t, with_axis));
  }
  return concat(expanded, 0);
}

namespace detail {

inline void check_router_weights(const char* op, std::span<const double> r,
                                 std::size_t experts) {
  if (r.size() != experts)
    raise(ErrorKind::Contract,
          std::string(op) + ": router weight count " + std::to_string(r.size()) +
              " does not match expert count " + std::to_string(experts));
  double sum = 0.0;
  for (double v : r) {
    if (v < 0.0)
      raise(ErrorKind::Contract, std::string(op) + ": negative router weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    raise(ErrorKind::Contract,
          std::string(op) + ": router weights sum to " + std::to_string(sum));
}

}  // namespace detail

// C = sum_l R_l * aligned_l for one window. r: (L,).
inline Tensor mix(const Tensor& r, const std::vector<Tensor>& aligned) {
  detail::check_router_weights("mix", r.values(), aligned.size());
  Tensor acc;
  for (std::size_t l = 0; l < aligned.size(); ++l) {
    Tensor term = mul(aligned[l], reshape(slice(r, 0, static_cast<int>(l), 1), {}));
    acc = l == 0 ? term : add(acc, term);
  }
  return acc;
}

// Batched mixture: routes (B, L); aligned_l each (B, ...). Window b is mixed
// with its own routing row.
inline Tensor mix_batch(const Tensor& routes, const std::vector<Tensor>& aligned) {
  if (routes.rank() != 2 ||
      routes.dim(1) != static_cast<int>(aligned.size()))
    detail::shape_error("mix", routes.shape(),
                        aligned.empty() ? Shape{} : aligned[0].shape());
  const int b = routes.dim(0);
  Tensor acc;
  for (std::size_t l = 0; l < aligned.size(); ++l) {
    Tensor rl = reshape(slice(routes, 1, static_cast<int>(l), 1), {b});
    Tensor term = scale_rows(aligned[l], rl);
    acc = l == 0 ? term : add(acc, term);
  }
  return acc;
}

}  // namespace moeflow
