#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <utility>
#include <vector>

#include "moeflow/tensor.hpp"

// Reverse-mode ops over dense fp64 tensors. Every op computes its forward
// value eagerly; when a tape is active and some input requires gradients, a
// node with a backward closure is recorded. Without an active tape the same
// functions serve as plain numeric kernels (inference, finite differences).
//
// Reductions run left-to-right over row-major buffers, so forward results are
// bitwise reproducible for identical inputs.

namespace moeflow {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using CMatMap = Eigen::Map<const EMat>;

inline void check_finite(const char* op, const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) [[unlikely]]
      raise(ErrorKind::Numeric,
            std::string("non-finite value produced by op '") + op + "'");
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a) {
  raise(ErrorKind::InvalidShape,
        std::string("op '") + op + "' cannot accept shape " + shape_str(a));
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  raise(ErrorKind::InvalidShape, std::string("op '") + op +
                                     "' got incompatible shapes " + shape_str(a) +
                                     " and " + shape_str(b));
}

inline void record(const char* op, std::initializer_list<Tensor> inputs,
                   Tensor& out, std::function<void()> backward) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool needed = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) {
      needed = true;
      break;
    }
  if (!needed) return;
  out.set_requires_grad(true);
  TapeNode node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    tape->touch(t.data());
    node.inputs.push_back(t.data());
  }
  tape->touch(out.data());
  node.output = out.data();
  node.backward = std::move(backward);
  tape->record(std::move(node));
}

inline void record(const char* op, const std::vector<Tensor>& inputs,
                   Tensor& out, std::function<void()> backward) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool needed = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) {
      needed = true;
      break;
    }
  if (!needed) return;
  out.set_requires_grad(true);
  TapeNode node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    tape->touch(t.data());
    node.inputs.push_back(t.data());
  }
  tape->touch(out.data());
  node.output = out.data();
  node.backward = std::move(backward);
  tape->record(std::move(node));
}

inline int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    raise(ErrorKind::InvalidShape,
          std::string("op '") + op + "': axis out of range for rank " +
              std::to_string(rank));
  return axis;
}

// Broadcast rule for binary elementwise ops: identical shapes, scalar rhs, or
// rhs shape equal to a trailing suffix of lhs shape.
enum class Bcast { Same, Scalar, Suffix };

inline Bcast bcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (shape_numel(b) == 1) return Bcast::Scalar;
  if (b.size() < a.size()) {
    std::size_t off = a.size() - b.size();
    bool ok = !b.empty();
    for (std::size_t i = 0; i < b.size(); ++i)
      if (a[off + i] != b[i]) ok = false;
    if (ok) return Bcast::Suffix;
  }
  shape_error(op, a, b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binaries

namespace detail {

template <class Fwd, class BwdA, class BwdB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                 BwdA bwd_a, BwdB bwd_b) {
  Bcast kind = bcast_kind(op, a.shape(), b.shape());
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values_mut();
  const std::int64_t n = a.numel();
  const std::int64_t nb = b.numel();
  if (kind == Bcast::Same) {
    for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
  } else if (kind == Bcast::Scalar) {
    const double s = bv[0];
    for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], s);
  } else {
    for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i % nb]);
  }
  check_finite(op, out);
  record(op, {a, b}, out,
         [ad = a.data(), bd = b.data(), od = out.data(), kind, bwd_a, bwd_b] {
           const auto& g = od->grad;
           const std::int64_t n = ad->numel();
           const std::int64_t nb = bd->numel();
           auto bval = [&](std::int64_t i) -> double {
             switch (kind) {
               case Bcast::Same: return bd->values[static_cast<std::size_t>(i)];
               case Bcast::Scalar: return bd->values[0];
               default: return bd->values[static_cast<std::size_t>(i % nb)];
             }
           };
           if (ad->requires_grad) {
             for (std::int64_t i = 0; i < n; ++i)
               ad->grad[static_cast<std::size_t>(i)] +=
                   bwd_a(g[static_cast<std::size_t>(i)],
                         ad->values[static_cast<std::size_t>(i)], bval(i));
           }
           if (bd->requires_grad) {
             for (std::int64_t i = 0; i < n; ++i) {
               std::size_t j = kind == Bcast::Same ? static_cast<std::size_t>(i)
                               : kind == Bcast::Scalar
                                   ? 0
                                   : static_cast<std::size_t>(i % nb);
               bd->grad[j] += bwd_b(g[static_cast<std::size_t>(i)],
                                    ad->values[static_cast<std::size_t>(i)],
                                    bval(i));
             }
           }
         });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

// ---------------------------------------------------------------------------
// Elementwise unaries

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Bwd bwd_from_xy) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values_mut();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  check_finite(op, out);
  record(op, {x}, out, [xd = x.data(), od = out.data(), bwd_from_xy] {
    if (!xd->requires_grad) return;
    const std::size_t n = xd->values.size();
    for (std::size_t i = 0; i < n; ++i)
      xd->grad[i] += bwd_from_xy(od->grad[i], xd->values[i], od->values[i]);
  });
  return out;
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  // subgradient 0 at exactly 0
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double xv, double) { return xv > 0.0 ? g : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

inline Tensor tanh_op(const Tensor& x) {
  return detail::unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double g, double, double y) { return g * (1.0 - y * y); });
}

inline Tensor exp_op(const Tensor& x) {
  return detail::unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

inline Tensor log_op(const Tensor& x) {
  return detail::unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double xv, double) { return g / xv; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      "scale", x, [c](double v) { return c * v; },
      [c](double g, double, double) { return c * g; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      "add-scalar", x, [c](double v) { return v + c; },
      [](double g, double, double) { return g; });
}

// ---------------------------------------------------------------------------
// matmul: (..., M, K) x (K, N), or batched (..., M, K) x (..., K, N) with
// identical leading dimensions.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) detail::shape_error("matmul", sa, sb);

  const int K = sa.back();
  const int N = sb.back();

  if (sb.size() == 2) {
    if (sb[0] != K) detail::shape_error("matmul", sa, sb);
    Shape so = sa;
    so.back() = N;
    Tensor out = Tensor::zeros(so);
    const std::int64_t R = a.numel() / K;
    detail::CMatMap A(a.values().data(), R, K);
    detail::CMatMap B(b.values().data(), K, N);
    detail::MatMap C(out.values_mut().data(), R, N);
    C.noalias() = A * B;
    detail::check_finite("matmul", out);
    detail::record("matmul", {a, b}, out,
                   [ad = a.data(), bd = b.data(), od = out.data(), R, K, N] {
                     detail::CMatMap G(od->grad.data(), R, N);
                     if (ad->requires_grad) {
                       detail::CMatMap B(bd->values.data(), K, N);
                       detail::MatMap dA(ad->grad.data(), R, K);
                       dA.noalias() += G * B.transpose();
                     }
                     if (bd->requires_grad) {
                       detail::CMatMap A(ad->values.data(), R, K);
                       detail::MatMap dB(bd->grad.data(), K, N);
                       dB.noalias() += A.transpose() * G;
                     }
                   });
    return out;
  }

  // batched
  if (sa.size() != sb.size()) detail::shape_error("matmul", sa, sb);
  for (std::size_t i = 0; i + 2 < sa.size(); ++i)
    if (sa[i] != sb[i]) detail::shape_error("matmul", sa, sb);
  if (sb[sb.size() - 2] != K) detail::shape_error("matmul", sa, sb);
  const int M = sa[sa.size() - 2];
  Shape so = sa;
  so.back() = N;
  Tensor out = Tensor::zeros(so);
  const std::int64_t batches = a.numel() / (static_cast<std::int64_t>(M) * K);
  {
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    double* op = out.values_mut().data();
    for (std::int64_t i = 0; i < batches; ++i) {
      detail::CMatMap A(ap + i * M * K, M, K);
      detail::CMatMap B(bp + i * K * N, K, N);
      detail::MatMap C(op + i * M * N, M, N);
      C.noalias() = A * B;
    }
  }
  detail::check_finite("matmul", out);
  detail::record(
      "matmul", {a, b}, out,
      [ad = a.data(), bd = b.data(), od = out.data(), batches, M, K, N] {
        for (std::int64_t i = 0; i < batches; ++i) {
          detail::CMatMap G(od->grad.data() + i * M * N, M, N);
          if (ad->requires_grad) {
            detail::CMatMap B(bd->values.data() + i * K * N, K, N);
            detail::MatMap dA(ad->grad.data() + i * M * K, M, K);
            dA.noalias() += G * B.transpose();
          }
          if (bd->requires_grad) {
            detail::CMatMap A(ad->values.data() + i * M * K, M, K);
            detail::MatMap dB(bd->grad.data() + i * K * N, K, N);
            dB.noalias() += A.transpose() * G;
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// transpose: swap two axes (defaults to the last two)

namespace detail {

// dst[..., j, ..., i, ...] = src[..., i, ..., j, ...] for axes a1 < a2.
template <bool Accumulate>
void swap_axes_copy(const double* src, double* dst, const Shape& s, int a1, int a2) {
  std::int64_t outer = 1, mid = 1, inner = 1;
  for (int i = 0; i < a1; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = a1 + 1; i < a2; ++i) mid *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(a2) + 1; i < s.size(); ++i)
    inner *= s[i];
  const std::int64_t d1 = s[static_cast<std::size_t>(a1)];
  const std::int64_t d2 = s[static_cast<std::size_t>(a2)];
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < d1; ++i)
      for (std::int64_t m = 0; m < mid; ++m)
        for (std::int64_t j = 0; j < d2; ++j) {
          const double* sp = src + (((o * d1 + i) * mid + m) * d2 + j) * inner;
          double* dp = dst + (((o * d2 + j) * mid + m) * d1 + i) * inner;
          if constexpr (Accumulate) {
            for (std::int64_t q = 0; q < inner; ++q) dp[q] += sp[q];
          } else {
            std::memcpy(dp, sp, static_cast<std::size_t>(inner) * sizeof(double));
          }
        }
}

}  // namespace detail

inline Tensor transpose(const Tensor& x, int axis1 = -2, int axis2 = -1) {
  const Shape& s = x.shape();
  if (s.size() < 2) detail::shape_error("transpose", s);
  int a1 = detail::normalize_axis("transpose", axis1, x.rank());
  int a2 = detail::normalize_axis("transpose", axis2, x.rank());
  if (a1 == a2) detail::shape_error("transpose", s);
  if (a1 > a2) std::swap(a1, a2);
  Shape so = s;
  std::swap(so[static_cast<std::size_t>(a1)], so[static_cast<std::size_t>(a2)]);
  Tensor out = Tensor::zeros(so);
  detail::swap_axes_copy<false>(x.values().data(), out.values_mut().data(), s, a1, a2);
  detail::record("transpose", {x}, out, [xd = x.data(), od = out.data(), so, a1, a2] {
    if (!xd->requires_grad) return;
    // swapping the same axes of the output grad restores input layout
    detail::swap_axes_copy<true>(od->grad.data(), xd->grad.data(), so, a1, a2);
  });
  return out;
}

// ---------------------------------------------------------------------------
// concat / slice / reshape

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty())
    raise(ErrorKind::Contract, "op 'concat' needs at least one input");
  const Shape& s0 = parts[0].shape();
  int ax = detail::normalize_axis("concat", axis, parts[0].rank());
  std::int64_t total_axis = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) detail::shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != ax && s[i] != s0[i])
        detail::shape_error("concat", s0, s);
    total_axis += s[static_cast<std::size_t>(ax)];
  }
  Shape so = s0;
  so[static_cast<std::size_t>(ax)] = static_cast<int>(total_axis);
  Tensor out = Tensor::zeros(so);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s0[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s0.size(); ++i)
    inner *= s0[i];

  double* op = out.values_mut().data();
  const std::int64_t out_stride = total_axis * inner;
  std::int64_t offset = 0;
  for (const Tensor& p : parts) {
    const std::int64_t w = p.dim(ax) * inner;
    const double* pp = p.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(op + o * out_stride + offset, pp + o * w,
                  static_cast<std::size_t>(w) * sizeof(double));
    offset += w;
  }
  detail::record("concat", parts, out,
                 [parts_d = [&] {
                    std::vector<std::shared_ptr<TensorData>> v;
                    v.reserve(parts.size());
                    for (const Tensor& p : parts) v.push_back(p.data());
                    return v;
                  }(),
                  od = out.data(), outer, inner, out_stride, ax] {
                   std::int64_t offset = 0;
                   for (auto& pd : parts_d) {
                     const std::int64_t w =
                         pd->shape[static_cast<std::size_t>(ax)] * inner;
                     if (pd->requires_grad) {
                       for (std::int64_t o = 0; o < outer; ++o) {
                         const double* gp = od->grad.data() + o * out_stride + offset;
                         double* dp = pd->grad.data() + o * w;
                         for (std::int64_t q = 0; q < w; ++q) dp[q] += gp[q];
                       }
                     }
                     offset += w;
                   }
                 });
  return out;
}

inline Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::vector<Tensor>(parts), axis);
}

inline Tensor slice(const Tensor& x, int axis, int start, int len) {
  const Shape& s = x.shape();
  int ax = detail::normalize_axis("slice", axis, x.rank());
  const int d = s[static_cast<std::size_t>(ax)];
  if (start < 0 || len < 0 || start + len > d)
    raise(ErrorKind::InvalidShape,
          "op 'slice': range [" + std::to_string(start) + ", " +
              std::to_string(start + len) + ") out of bounds for axis size " +
              std::to_string(d));
  Shape so = s;
  so[static_cast<std::size_t>(ax)] = len;
  Tensor out = Tensor::zeros(so);

  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s.size(); ++i)
    inner *= s[i];
  const std::int64_t in_stride = static_cast<std::int64_t>(d) * inner;
  const std::int64_t w = static_cast<std::int64_t>(len) * inner;
  const std::int64_t off = static_cast<std::int64_t>(start) * inner;

  double* op = out.values_mut().data();
  const double* xp = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(op + o * w, xp + o * in_stride + off,
                static_cast<std::size_t>(w) * sizeof(double));
  detail::record("slice", {x}, out,
                 [xd = x.data(), od = out.data(), outer, in_stride, w, off] {
                   if (!xd->requires_grad) return;
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const double* gp = od->grad.data() + o * w;
                     double* dp = xd->grad.data() + o * in_stride + off;
                     for (std::int64_t q = 0; q < w; ++q) dp[q] += gp[q];
                   }
                 });
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    detail::shape_error("reshape", x.shape(), shape);
  Tensor out = Tensor::zeros(std::move(shape));
  auto ov = out.values_mut();
  auto xv = x.values();
  std::memcpy(ov.data(), xv.data(), xv.size() * sizeof(double));
  detail::record("reshape", {x}, out, [xd = x.data(), od = out.data()] {
    if (!xd->requires_grad) return;
    for (std::size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// row-softmax over the last axis (max-subtracted for stability)

inline Tensor row_softmax(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) detail::shape_error("row-softmax", s);
  const std::int64_t n = s.back();
  const std::int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(s);
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xp = xv.data() + r * n;
    double* op = ov.data() + r * n;
    double m = xp[0];
    for (std::int64_t i = 1; i < n; ++i) m = std::max(m, xp[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      op[i] = std::exp(xp[i] - m);
      z += op[i];
    }
    const double inv = 1.0 / z;
    for (std::int64_t i = 0; i < n; ++i) op[i] *= inv;
  }
  detail::check_finite("row-softmax", out);
  detail::record("row-softmax", {x}, out, [xd = x.data(), od = out.data(), n, rows] {
    if (!xd->requires_grad) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = od->values.data() + r * n;
      const double* g = od->grad.data() + r * n;
      double* dx = xd->grad.data() + r * n;
      double dot = 0.0;
      for (std::int64_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::int64_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// layer-norm over the last axis, no affine (compose affine from mul/add)

inline Tensor layer_norm(const Tensor& x, double eps = 1e-5) {
  const Shape& s = x.shape();
  if (s.empty()) detail::shape_error("layer-norm", s);
  const std::int64_t n = s.back();
  const std::int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(s);
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xp = xv.data() + r * n;
    double* op = ov.data() + r * n;
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mean += xp[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = inv;
    for (std::int64_t i = 0; i < n; ++i) op[i] = (xp[i] - mean) * inv;
  }
  detail::check_finite("layer-norm", out);
  detail::record("layer-norm", {x}, out,
                 [xd = x.data(), od = out.data(), inv = std::move(inv_std), n, rows] {
                   if (!xd->requires_grad) return;
                   const double dn = static_cast<double>(n);
                   for (std::int64_t r = 0; r < rows; ++r) {
                     const double* y = od->values.data() + r * n;
                     const double* g = od->grad.data() + r * n;
                     double* dx = xd->grad.data() + r * n;
                     double sum_g = 0.0, sum_gy = 0.0;
                     for (std::int64_t i = 0; i < n; ++i) {
                       sum_g += g[i];
                       sum_gy += g[i] * y[i];
                     }
                     const double s = inv[static_cast<std::size_t>(r)];
                     for (std::int64_t i = 0; i < n; ++i)
                       dx[i] += s * (g[i] - sum_g / dn - y[i] * sum_gy / dn);
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor reduce_sum(const Tensor& x, int axis, bool keepdim = false) {
  const Shape& s = x.shape();
  int ax = detail::normalize_axis("sum", axis, x.rank());
  const std::int64_t n = s[static_cast<std::size_t>(ax)];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(ax) + 1; i < s.size(); ++i)
    inner *= s[i];
  Shape so;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) == ax) {
      if (keepdim) so.push_back(1);
    } else {
      so.push_back(s[i]);
    }
  }
  Tensor out = Tensor::zeros(so);
  auto xv = x.values();
  auto ov = out.values_mut();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < n; ++i) {
      const double* xp = xv.data() + (o * n + i) * inner;
      double* op = ov.data() + o * inner;
      for (std::int64_t q = 0; q < inner; ++q) op[q] += xp[q];
    }
  detail::check_finite("sum", out);
  detail::record("sum", {x}, out, [xd = x.data(), od = out.data(), outer, n, inner] {
    if (!xd->requires_grad) return;
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < n; ++i) {
        double* dp = xd->grad.data() + (o * n + i) * inner;
        const double* gp = od->grad.data() + o * inner;
        for (std::int64_t q = 0; q < inner; ++q) dp[q] += gp[q];
      }
  });
  return out;
}

inline Tensor reduce_mean(const Tensor& x, int axis, bool keepdim = false) {
  int ax = detail::normalize_axis("mean", axis, x.rank());
  return scale(reduce_sum(x, ax, keepdim),
               1.0 / static_cast<double>(x.dim(ax)));
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({});
  double acc = 0.0;
  for (double v : x.values()) acc += v;  // left-to-right
  out.values_mut()[0] = acc;
  detail::check_finite("sum", out);
  detail::record("sum", {x}, out, [xd = x.data(), od = out.data()] {
    if (!xd->requires_grad) return;
    const double g = od->grad[0];
    for (double& d : xd->grad) d += g;
  });
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// scale_rows: multiply each slice along axis 0 by its own scalar.
// This is the per-window weighting used when mixing expert outputs.

inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (s.rank() != 1 || x.rank() < 1 || s.dim(0) != x.dim(0))
    detail::shape_error("scale-rows", x.shape(), s.shape());
  const std::int64_t b = x.dim(0);
  const std::int64_t w = x.numel() / b;
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto sv = s.values();
  auto ov = out.values_mut();
  for (std::int64_t i = 0; i < b; ++i) {
    const double c = sv[i];
    const double* xp = xv.data() + i * w;
    double* op = ov.data() + i * w;
    for (std::int64_t q = 0; q < w; ++q) op[q] = c * xp[q];
  }
  detail::check_finite("scale-rows", out);
  detail::record("scale-rows", {x, s}, out,
                 [xd = x.data(), sd = s.data(), od = out.data(), b, w] {
                   for (std::int64_t i = 0; i < b; ++i) {
                     const double* gp = od->grad.data() + i * w;
                     if (xd->requires_grad) {
                       const double c = sd->values[static_cast<std::size_t>(i)];
                       double* dp = xd->grad.data() + i * w;
                       for (std::int64_t q = 0; q < w; ++q) dp[q] += c * gp[q];
                     }
                     if (sd->requires_grad) {
                       const double* xp = xd->values.data() + i * w;
                       double acc = 0.0;
                       for (std::int64_t q = 0; q < w; ++q) acc += gp[q] * xp[q];
                       sd->grad[static_cast<std::size_t>(i)] += acc;
                     }
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// small conveniences built from the ops above

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

}  // namespace moeflow
