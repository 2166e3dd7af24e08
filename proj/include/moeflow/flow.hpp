#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "moeflow/init.hpp"
#include "moeflow/ops.hpp"

namespace moeflow {

// Affine coupling layer. The passive half of the input and the condition
// vector feed two small MLPs producing a bounded log-scale and a shift for
// the active half; the Jacobian log-determinant is the sum of log-scales.
struct CouplingParams {
  bool swap = false;  // false: transform the second half, true: the first
  Tensor s_w1, s_b1, s_w2, s_b2;
  Tensor t_w1, t_b1, t_w2, t_b2;
};

struct FlowParams {
  int dim = 0;       // D, per-entity window length
  int cond_dim = 0;  // condition width per row
  int hidden = 64;
  double scale_clamp = 5.0;  // s_max
  std::vector<CouplingParams> couplings;  // blocks * 2, masks alternate

  static FlowParams init(int dim, int cond_dim, int hidden, int blocks, Rng& rng) {
    if (dim < 1 || cond_dim < 1 || blocks < 1)
      raise(ErrorKind::Config, "flow needs dim >= 1, cond_dim >= 1, blocks >= 1");
    FlowParams p;
    p.dim = dim;
    p.cond_dim = cond_dim;
    p.hidden = hidden;
    const int d1 = dim / 2;
    for (int b = 0; b < blocks; ++b) {
      for (int half = 0; half < 2; ++half) {
        CouplingParams c;
        c.swap = half == 1;
        const int passive = c.swap ? dim - d1 : d1;
        const int active = dim - passive;
        const int in = passive + cond_dim;
        c.s_w1 = fan_in_uniform({in, hidden}, in, rng);
        c.s_b1 = fan_in_uniform({hidden}, in, rng);
        c.s_w2 = fan_in_uniform({hidden, active}, hidden, rng);
        c.s_b2 = fan_in_uniform({active}, hidden, rng);
        c.t_w1 = fan_in_uniform({in, hidden}, in, rng);
        c.t_b1 = fan_in_uniform({hidden}, in, rng);
        c.t_w2 = fan_in_uniform({hidden, active}, hidden, rng);
        c.t_b2 = fan_in_uniform({active}, hidden, rng);
        p.couplings.push_back(std::move(c));
      }
    }
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < couplings.size(); ++i) {
      const CouplingParams& c = couplings[i];
      const std::string base = prefix + ".c" + std::to_string(i);
      out.emplace_back(base + ".s_w1", c.s_w1);
      out.emplace_back(base + ".s_b1", c.s_b1);
      out.emplace_back(base + ".s_w2", c.s_w2);
      out.emplace_back(base + ".s_b2", c.s_b2);
      out.emplace_back(base + ".t_w1", c.t_w1);
      out.emplace_back(base + ".t_b1", c.t_b1);
      out.emplace_back(base + ".t_w2", c.t_w2);
      out.emplace_back(base + ".t_b2", c.t_b2);
    }
    return out;
  }
};

namespace detail {

struct CouplingNets {
  Tensor log_scale;  // bounded: s_max * tanh(raw / s_max)
  Tensor shift;
};

inline CouplingNets coupling_nets(const Tensor& passive, const Tensor& cond,
                                  const CouplingParams& c, double s_max) {
  Tensor in = passive.numel() == 0 ? cond : concat({passive, cond}, 1);
  Tensor hs = relu(add(matmul(in, c.s_w1), c.s_b1));
  Tensor raw = add(matmul(hs, c.s_w2), c.s_b2);
  CouplingNets nets;
  nets.log_scale = scale(tanh_op(scale(raw, 1.0 / s_max)), s_max);
  Tensor ht = relu(add(matmul(in, c.t_w1), c.t_b1));
  nets.shift = add(matmul(ht, c.t_w2), c.t_b2);
  return nets;
}

}  // namespace detail

struct FlowForward {
  Tensor z;        // (N, D)
  Tensor log_det;  // (N,), exact sum of coupling log-scales
};

// x: (N, D) rows, cond: (N, cond_dim) rows aligned with x.
inline FlowForward flow_forward(const Tensor& x, const Tensor& cond,
                                const FlowParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.dim || cond.rank() != 2 ||
      cond.dim(0) != x.dim(0) || cond.dim(1) != p.cond_dim)
    detail::shape_error("flow-forward", x.shape(), cond.shape());
  const int n = x.dim(0);
  const int d1 = p.dim / 2;
  FlowForward out;
  out.z = x;
  out.log_det = Tensor::zeros({n});
  for (const CouplingParams& c : p.couplings) {
    const int passive_w = c.swap ? p.dim - d1 : d1;
    const int active_w = p.dim - passive_w;
    if (active_w == 0) continue;  // degenerate half at D=1
    const int passive_off = c.swap ? d1 : 0;
    const int active_off = c.swap ? 0 : d1;
    Tensor passive = slice(out.z, 1, passive_off, passive_w);
    Tensor active = slice(out.z, 1, active_off, active_w);
    detail::CouplingNets nets =
        detail::coupling_nets(passive, cond, c, p.scale_clamp);
    Tensor transformed = add(mul(active, exp_op(nets.log_scale)), nets.shift);
    out.z = c.swap ? concat({transformed, passive}, 1)
                   : concat({passive, transformed}, 1);
    out.log_det = add(out.log_det, reduce_sum(nets.log_scale, 1));
  }
  return out;
}

// Exact inverse; the passive half of each coupling is untouched by its own
// transform, so the nets can be re-evaluated from the output.
inline Tensor flow_inverse(const Tensor& z, const Tensor& cond,
                           const FlowParams& p) {
  if (z.rank() != 2 || z.dim(1) != p.dim || cond.rank() != 2 ||
      cond.dim(0) != z.dim(0) || cond.dim(1) != p.cond_dim)
    detail::shape_error("flow-inverse", z.shape(), cond.shape());
  const int d1 = p.dim / 2;
  Tensor x = z;
  for (auto it = p.couplings.rbegin(); it != p.couplings.rend(); ++it) {
    const CouplingParams& c = *it;
    const int passive_w = c.swap ? p.dim - d1 : d1;
    const int active_w = p.dim - passive_w;
    if (active_w == 0) continue;
    const int passive_off = c.swap ? d1 : 0;
    const int active_off = c.swap ? 0 : d1;
    Tensor passive = slice(x, 1, passive_off, passive_w);
    Tensor transformed = slice(x, 1, active_off, active_w);
    detail::CouplingNets nets =
        detail::coupling_nets(passive, cond, c, p.scale_clamp);
    Tensor active =
        mul(sub(transformed, nets.shift), exp_op(scale(nets.log_scale, -1.0)));
    x = c.swap ? concat({active, passive}, 1) : concat({passive, active}, 1);
  }
  return x;
}

// Per-row negative log-likelihood under a standard normal base:
//   nll = 0.5*|z|^2 + (D/2)*log(2*pi) - log_det
inline Tensor nll_rows(const FlowForward& f, int dim) {
  Tensor sq = reduce_sum(mul(f.z, f.z), 1);
  Tensor base = add_scalar(scale(sq, 0.5),
                           0.5 * dim * std::log(2.0 * std::numbers::pi));
  return sub(base, f.log_det);
}

// Mean NLL over all rows (windows x entities); the MLE training objective.
inline Tensor nll_loss(const Tensor& x, const Tensor& cond, const FlowParams& p) {
  return mean_all(nll_rows(flow_forward(x, cond, p), p.dim));
}

}  // namespace moeflow
