#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moeflow/init.hpp"
#include "moeflow/ops.hpp"

namespace moeflow {

enum class CellKind { Gru, Lstm };

inline const char* cell_kind_name(CellKind k) {
  return k == CellKind::Gru ? "gru" : "lstm";
}

// One recurrent cell shared across all entities; the input is the scalar
// observation of one entity at one step. Gate layout: GRU [r, z, n],
// LSTM [i, f, g, o].
struct RnnParams {
  CellKind kind = CellKind::Gru;
  int hidden_dim = 32;
  Tensor w_ih;  // (1, G*d)
  Tensor w_hh;  // (d, G*d)
  Tensor b_ih;  // (G*d)
  Tensor b_hh;  // (G*d)

  static RnnParams init(CellKind kind, int hidden_dim, Rng& rng) {
    RnnParams p;
    p.kind = kind;
    p.hidden_dim = hidden_dim;
    const int gates = kind == CellKind::Gru ? 3 : 4;
    const int gd = gates * hidden_dim;
    p.w_ih = fan_in_uniform({1, gd}, 1, rng);
    p.w_hh = fan_in_uniform({hidden_dim, gd}, hidden_dim, rng);
    p.b_ih = fan_in_uniform({gd}, hidden_dim, rng);
    p.b_hh = fan_in_uniform({gd}, hidden_dim, rng);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    return {{prefix + ".w_ih", w_ih},
            {prefix + ".w_hh", w_hh},
            {prefix + ".b_ih", b_ih},
            {prefix + ".b_hh", b_hh}};
  }
};

struct RnnState {
  Tensor h;  // (N, d)
  Tensor c;  // (N, d), LSTM only

  static RnnState zeros(CellKind kind, int rows, int hidden_dim) {
    RnnState s;
    s.h = Tensor::zeros({rows, hidden_dim});
    if (kind == CellKind::Lstm) s.c = Tensor::zeros({rows, hidden_dim});
    return s;
  }
};

// x: (N, 1) scalar inputs, one row per (window, entity) pair.
inline RnnState rnn_cell_step(const Tensor& x, const RnnState& state,
                              const RnnParams& p) {
  const int d = p.hidden_dim;
  Tensor gi = add(matmul(x, p.w_ih), p.b_ih);
  Tensor gh = add(matmul(state.h, p.w_hh), p.b_hh);
  if (p.kind == CellKind::Gru) {
    Tensor r = sigmoid(add(slice(gi, 1, 0, d), slice(gh, 1, 0, d)));
    Tensor z = sigmoid(add(slice(gi, 1, d, d), slice(gh, 1, d, d)));
    Tensor n = tanh_op(add(slice(gi, 1, 2 * d, d), mul(r, slice(gh, 1, 2 * d, d))));
    RnnState next;
    next.h = add(sub(n, mul(z, n)), mul(z, state.h));  // (1-z)*n + z*h
    return next;
  }
  Tensor gates = add(gi, gh);
  Tensor i = sigmoid(slice(gates, 1, 0, d));
  Tensor f = sigmoid(slice(gates, 1, d, d));
  Tensor g = tanh_op(slice(gates, 1, 2 * d, d));
  Tensor o = sigmoid(slice(gates, 1, 3 * d, d));
  RnnState next;
  next.c = add(mul(f, state.c), mul(i, g));
  next.h = mul(o, tanh_op(next.c));
  return next;
}

// windows: (B, K, T) -> temporal embedding (B, K, T, d). The state starts at
// zero and the same cell parameters serve every entity.
inline Tensor encode_windows(const Tensor& windows, const RnnParams& p) {
  if (windows.rank() != 3)
    detail::shape_error("encode-windows", windows.shape());
  const int b = windows.dim(0);
  const int k = windows.dim(1);
  const int t_len = windows.dim(2);
  const int rows = b * k;
  RnnState state = RnnState::zeros(p.kind, rows, p.hidden_dim);
  std::vector<Tensor> steps;
  steps.reserve(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    Tensor xt = reshape(slice(windows, 2, t, 1), {rows, 1});
    state = rnn_cell_step(xt, state, p);
    steps.push_back(reshape(state.h, {b, k, 1, p.hidden_dim}));
  }
  return concat(steps, 2);
}

// single-window convenience: (K, T) -> (K, T, d)
inline Tensor encode_window(const Tensor& window, const RnnParams& p) {
  if (window.rank() != 2) detail::shape_error("encode-window", window.shape());
  Tensor h = encode_windows(
      reshape(window, {1, window.dim(0), window.dim(1)}), p);
  return reshape(h, {window.dim(0), window.dim(1), p.hidden_dim});
}

}  // namespace moeflow
