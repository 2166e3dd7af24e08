#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "moeflow/init.hpp"
#include "moeflow/ops.hpp"

namespace moeflow {

// Memory matrix of global historical temporal features. The recurrence is
// strictly sequential across windows; one writer owns a state.
struct MemoryState {
  Tensor m;  // (slots, d_m)
  std::size_t step = 0;
};

struct RouterParams {
  int slots = 4;
  int mem_dim = 32;
  int levels = 3;  // experts routed over

  Tensor input_proj;                      // (d_h, d_m), hierarchy rows -> memory width
  Tensor w_q, w_k, w_v;                   // (d_m, d_m) memory attention
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // residual MLP d_m -> d_m -> d_m
  Tensor w_forget, u_forget;              // (d_m, d_m)
  Tensor w_input, u_input;                // (d_m, d_m)
  Tensor route_w, route_b;                // (slots*d_m, L), (L)
  Tensor m0;                              // (slots, d_m), fixed constants

  static RouterParams init(int slots, int mem_dim, int hidden_dim, int levels,
                           Rng& rng) {
    RouterParams p;
    p.slots = slots;
    p.mem_dim = mem_dim;
    p.levels = levels;
    p.input_proj = fan_in_uniform({hidden_dim, mem_dim}, hidden_dim, rng);
    p.w_q = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.w_k = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.w_v = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.mlp_w1 = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.mlp_b1 = fan_in_uniform({mem_dim}, mem_dim, rng);
    p.mlp_w2 = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.mlp_b2 = fan_in_uniform({mem_dim}, mem_dim, rng);
    p.w_forget = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.u_forget = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.w_input = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.u_input = fan_in_uniform({mem_dim, mem_dim}, mem_dim, rng);
    p.route_w = fan_in_uniform({slots * mem_dim, levels}, slots * mem_dim, rng);
    p.route_b = fan_in_uniform({levels}, slots * mem_dim, rng);
    // The initial memory is a fixed small constant block drawn once from
    // seed 0 so that runs are reproducible; it is not trained.
    Rng m0_rng(module_seed(0, "memory.m0"));
    p.m0 = Tensor::uniform({slots, mem_dim}, m0_rng, -0.01, 0.01);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".input_proj", input_proj},
            {prefix + ".w_q", w_q},
            {prefix + ".w_k", w_k},
            {prefix + ".w_v", w_v},
            {prefix + ".mlp_w1", mlp_w1},
            {prefix + ".mlp_b1", mlp_b1},
            {prefix + ".mlp_w2", mlp_w2},
            {prefix + ".mlp_b2", mlp_b2},
            {prefix + ".w_forget", w_forget},
            {prefix + ".u_forget", u_forget},
            {prefix + ".w_input", w_input},
            {prefix + ".u_input", u_input},
            {prefix + ".route_w", route_w},
            {prefix + ".route_b", route_b}};
  }
};

inline MemoryState reset(const RouterParams& p) {
  MemoryState s;
  s.m = p.m0.clone();
  s.m.set_requires_grad(false);
  s.step = 0;
  return s;
}

// Mean over entities and time of one window's hierarchy features:
// (L, K, T, d_h) -> (L, d_h). The smallest reduction that keeps one row per
// expert level.
inline Tensor pool_hierarchy(const Tensor& hierarchy) {
  if (hierarchy.rank() != 4) detail::shape_error("pool-hierarchy", hierarchy.shape());
  return reshape(reduce_mean(reduce_mean(hierarchy, 2, false), 1, false),
                 {hierarchy.dim(0), hierarchy.dim(3)});
}

struct MemoryAttend {
  Tensor z;          // (slots, d_m)
  Tensor attention;  // (slots, slots + L_in), rows sum to 1
};

// Eq-style memory read: Y = [M_prev ; rows], Z = Attention(Q: M_prev, K/V: Y).
// rows: (L_in, d_m) projected hierarchy rows.
inline MemoryAttend memory_attend(const Tensor& m_prev, const Tensor& rows,
                                  const RouterParams& p) {
  if (m_prev.rank() != 2 || rows.rank() != 2 || rows.dim(1) != m_prev.dim(1))
    detail::shape_error("memory-attend", m_prev.shape(), rows.shape());
  Tensor y = concat({m_prev, rows}, 0);
  Tensor q = matmul(m_prev, p.w_q);
  Tensor key = matmul(y, p.w_k);
  Tensor val = matmul(y, p.w_v);
  MemoryAttend out;
  out.attention = row_softmax(
      scale(matmul(q, transpose(key)), 1.0 / std::sqrt(static_cast<double>(p.mem_dim))));
  out.z = matmul(out.attention, val);
  return out;
}

// M~ = MLP(Z + M_prev) + Z + M_prev
inline Tensor residual_update(const Tensor& z, const Tensor& m_prev,
                              const RouterParams& p) {
  if (z.shape() != m_prev.shape())
    detail::shape_error("residual-update", z.shape(), m_prev.shape());
  Tensor s = add(z, m_prev);
  Tensor hidden = relu(add(matmul(s, p.mlp_w1), p.mlp_b1));
  return add(add(matmul(hidden, p.mlp_w2), p.mlp_b2), s);
}

// Forget and input gates balance the old memory against the candidate:
//   G^f = h W^f + tanh(M_prev) U^f     (h broadcast across slots)
//   M_t = sigmoid(G^f) . M_prev + sigmoid(G^i) . tanh(M~)
// where h is the level-mean of the projected hierarchy rows; the paper-side
// shapes leave the rows-vs-slots adaptation open, so the gate input is pooled
// once more to a single row.
inline Tensor gated_update(const Tensor& m_prev, const Tensor& rows,
                           const Tensor& m_tilde, const RouterParams& p) {
  if (m_prev.shape() != m_tilde.shape())
    detail::shape_error("gated-update", m_prev.shape(), m_tilde.shape());
  Tensor h = reduce_mean(rows, 0, false);  // (d_m)
  Tensor th = tanh_op(m_prev);
  Tensor gf = add(matmul(th, p.u_forget),
                  reshape(matmul(reshape(h, {1, p.mem_dim}), p.w_forget), {p.mem_dim}));
  Tensor gi = add(matmul(th, p.u_input),
                  reshape(matmul(reshape(h, {1, p.mem_dim}), p.w_input), {p.mem_dim}));
  return add(mul(sigmoid(gf), m_prev), mul(sigmoid(gi), tanh_op(m_tilde)));
}

// R = softmax(phi_R(flatten(M_t))), a probability vector over the L experts.
inline Tensor route(const Tensor& m_t, const RouterParams& p) {
  Tensor flat = reshape(m_t, {1, p.slots * p.mem_dim});
  Tensor logits = add(matmul(flat, p.route_w), p.route_b);
  return reshape(row_softmax(logits), {p.levels});
}

struct RouterStep {
  MemoryState state;
  Tensor routes;     // (L,)
  Tensor attention;  // memory attention weights, for diagnostics
};

// One full update for one window: project pooled hierarchy rows, read memory,
// apply residual MLP and gates, emit expert weights.
inline RouterStep router_step(const MemoryState& prev, const Tensor& hierarchy,
                              const RouterParams& p) {
  Tensor rows = matmul(pool_hierarchy(hierarchy), p.input_proj);
  MemoryAttend att = memory_attend(prev.m, rows, p);
  Tensor m_tilde = residual_update(att.z, prev.m, p);
  RouterStep out;
  out.state.m = gated_update(prev.m, rows, m_tilde, p);
  out.state.step = prev.step + 1;
  out.routes = route(out.state.m, p);
  out.attention = att.attention;
  return out;
}

}  // namespace moeflow
