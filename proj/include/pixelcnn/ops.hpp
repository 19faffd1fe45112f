#pragma once

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "pixelcnn/tape.hpp"
#include "pixelcnn/tensor.hpp"

namespace pixelcnn {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<MatRM<S>>;
template <class S>
using MapConstMat = Eigen::Map<const MatRM<S>>;

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

namespace detail {

// Channel axis convention: axis 1 for image-like tensors [N,C,H,W], axis 0
// for rank <= 2. These are the only two broadcast forms the model needs
// (per-channel vector over space, scalar over all).
template <class S>
inline int channel_axis(const Tensor<S>& a) {
  return a.rank() >= 3 ? 1 : 0;
}

template <class S>
inline void broadcast_dims(const Tensor<S>& a, const Tensor<S>& b,
                           const char* op, Index& outer, Index& ch,
                           Index& inner) {
  int ax = channel_axis(a);
  if (b.rank() != 1 ||
      (b.size() != a.dim(ax) && b.size() != a.dim(a.rank() - 1)))
    throw ShapeError(std::string(op) + ": cannot broadcast " +
                     shape_str(b.shape()) + " over " + shape_str(a.shape()));
  if (b.size() != a.dim(ax)) ax = a.rank() - 1;  // row-vector over [N,F]
  ch = a.dim(ax);
  outer = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  inner = 1;
  for (int i = ax + 1; i < a.rank(); ++i) inner *= a.dim(i);
}

}  // namespace detail

/// a + b. b may be same-shape, a scalar, or a per-channel vector that is
/// broadcast over all spatial positions.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.shape());
  const bool trace = detail::tracing(a, b);
  if (a.shape() == b.shape()) {
    out.values() = a.values() + b.values();
    check_finite(out, "add");
    if (trace) {
      out.set_requires_grad();
      auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
      Tape<S>::current()->record(on, [an, bn, on] {
        if (!detail::has_out_grad(on)) return;
        if (an->requires_grad) detail::acc(an) += on->grad;
        if (bn->requires_grad) detail::acc(bn) += on->grad;
      });
    }
    return out;
  }
  if (b.size() == 1) {
    out.values() = a.values() + b.values()(0);
    check_finite(out, "add");
    if (trace) {
      out.set_requires_grad();
      auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
      Tape<S>::current()->record(on, [an, bn, on] {
        if (!detail::has_out_grad(on)) return;
        if (an->requires_grad) detail::acc(an) += on->grad;
        if (bn->requires_grad) detail::acc(bn)(0) += on->grad.sum();
      });
    }
    return out;
  }
  Index outer, ch, inner;
  detail::broadcast_dims(a, b, "add", outer, ch, inner);
  for (Index o = 0; o < outer; ++o)
    for (Index c = 0; c < ch; ++c)
      out.values().segment((o * ch + c) * inner, inner) =
          a.values().segment((o * ch + c) * inner, inner) + b.values()(c);
  check_finite(out, "add");
  if (trace) {
    out.set_requires_grad();
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [an, bn, on, outer, ch, inner] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) detail::acc(an) += on->grad;
      if (bn->requires_grad) {
        auto& gb = detail::acc(bn);
        for (Index o = 0; o < outer; ++o)
          for (Index c = 0; c < ch; ++c)
            gb(c) += on->grad.segment((o * ch + c) * inner, inner).sum();
      }
    });
  }
  return out;
}

/// a * b elementwise, with the same broadcast forms as add().
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out(a.shape());
  const bool trace = detail::tracing(a, b);
  if (a.shape() == b.shape()) {
    out.values() = a.values() * b.values();
    check_finite(out, "mul");
    if (trace) {
      out.set_requires_grad();
      auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
      Tape<S>::current()->record(on, [an, bn, on] {
        if (!detail::has_out_grad(on)) return;
        if (an->requires_grad) detail::acc(an) += on->grad * bn->values;
        if (bn->requires_grad) detail::acc(bn) += on->grad * an->values;
      });
    }
    return out;
  }
  if (b.size() == 1) {
    out.values() = a.values() * b.values()(0);
    check_finite(out, "mul");
    if (trace) {
      out.set_requires_grad();
      auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
      Tape<S>::current()->record(on, [an, bn, on] {
        if (!detail::has_out_grad(on)) return;
        if (an->requires_grad) detail::acc(an) += on->grad * bn->values(0);
        if (bn->requires_grad)
          detail::acc(bn)(0) += (on->grad * an->values).sum();
      });
    }
    return out;
  }
  Index outer, ch, inner;
  detail::broadcast_dims(a, b, "mul", outer, ch, inner);
  for (Index o = 0; o < outer; ++o)
    for (Index c = 0; c < ch; ++c)
      out.values().segment((o * ch + c) * inner, inner) =
          a.values().segment((o * ch + c) * inner, inner) * b.values()(c);
  check_finite(out, "mul");
  if (trace) {
    out.set_requires_grad();
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [an, bn, on, outer, ch, inner] {
      if (!detail::has_out_grad(on)) return;
      for (Index o = 0; o < outer; ++o)
        for (Index c = 0; c < ch; ++c) {
          const Index base = (o * ch + c) * inner;
          if (an->requires_grad)
            detail::acc(an).segment(base, inner) +=
                on->grad.segment(base, inner) * bn->values(c);
          if (bn->requires_grad)
            detail::acc(bn)(c) += (on->grad.segment(base, inner) *
                                   an->values.segment(base, inner))
                                      .sum();
        }
    });
  }
  return out;
}

/// x + m where m is a per-(sample, channel) bias [N,C] broadcast over H,W.
template <class S>
Tensor<S> add_sample_bias(const Tensor<S>& x, const Tensor<S>& m) {
  if (x.rank() != 4 || m.rank() != 2 || m.dim(0) != x.dim(0) ||
      m.dim(1) != x.dim(1))
    throw ShapeError("add_sample_bias: need [N,C,H,W] and [N,C], got " +
                     shape_str(x.shape()) + " and " + shape_str(m.shape()));
  const Index NC = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<S> out(x.shape());
  for (Index i = 0; i < NC; ++i)
    out.values().segment(i * hw, hw) =
        x.values().segment(i * hw, hw) + m.values()(i);
  check_finite(out, "add_sample_bias");
  if (detail::tracing(x, m)) {
    out.set_requires_grad();
    auto xn = x.ptr(), mn = m.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, mn, on, NC, hw] {
      if (!detail::has_out_grad(on)) return;
      if (xn->requires_grad) detail::acc(xn) += on->grad;
      if (mn->requires_grad) {
        auto& gm = detail::acc(mn);
        for (Index i = 0; i < NC; ++i)
          gm(i) += on->grad.segment(i * hw, hw).sum();
      }
    });
  }
  return out;
}

namespace detail {

template <class S, class Fwd, class Bwd>
Tensor<S> unary_ew(const Tensor<S>& x, const char* name, Fwd fwd, Bwd dfn) {
  Tensor<S> out(x.shape());
  out.values() = fwd(x.values());
  check_finite(out, name);
  if (tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, dfn] {
      if (!has_out_grad(on)) return;
      acc(xn) += on->grad * dfn(xn->values, on->values);
    });
  }
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "tanh", [](const ArrayX<S>& v) { return v.tanh().eval(); },
      [](const ArrayX<S>&, const ArrayX<S>& y) {
        return (S(1) - y.square()).eval();
      });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "sigmoid",
      [](const ArrayX<S>& v) {
        return (S(0.5) * (S(0.5) * v).tanh() + S(0.5)).eval();
      },
      [](const ArrayX<S>&, const ArrayX<S>& y) {
        return (y * (S(1) - y)).eval();
      });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_ew(
      x, "relu", [](const ArrayX<S>& v) { return v.max(S(0)).eval(); },
      [](const ArrayX<S>& v, const ArrayX<S>&) {
        return (v > S(0)).template cast<S>().eval();
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::unary_ew(
      x, "scale", [c](const ArrayX<S>& v) { return (v * c).eval(); },
      [c](const ArrayX<S>& v, const ArrayX<S>&) {
        return ArrayX<S>::Constant(v.size(), c).eval();
      });
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out(Shape{1});
  out.values()(0) = x.values().sum();
  check_finite(out, "sum");
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on] {
      if (!detail::has_out_grad(on)) return;
      detail::acc(xn) += on->grad(0);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct Pad {
  Index top = 0, bottom = 0, left = 0, right = 0;
};

namespace detail {

// Packs one sample into the [C*kh*kw, Ho*Wo] patch matrix consumed by the
// GEMM below. Out-of-bounds reads are zero.
template <class S>
void im2col(const S* in, Index C, Index H, Index W, Index kh, Index kw,
            Index pt, Index pl, Index Ho, Index Wo, S* colT) {
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < kh; ++i)
      for (Index j = 0; j < kw; ++j) {
        S* row = colT + ((c * kh + i) * kw + j) * (Ho * Wo);
        const Index x0 = std::max<Index>(0, pl - j);
        const Index x1 = std::min<Index>(Wo, W + pl - j);
        for (Index y = 0; y < Ho; ++y) {
          const Index in_y = y + i - pt;
          S* dst = row + y * Wo;
          if (in_y < 0 || in_y >= H || x0 >= x1) {
            std::memset(dst, 0, sizeof(S) * static_cast<std::size_t>(Wo));
            continue;
          }
          if (x0 > 0) std::memset(dst, 0, sizeof(S) * static_cast<std::size_t>(x0));
          std::memcpy(dst + x0, in + (c * H + in_y) * W + (x0 + j - pl),
                      sizeof(S) * static_cast<std::size_t>(x1 - x0));
          if (x1 < Wo)
            std::memset(dst + x1, 0, sizeof(S) * static_cast<std::size_t>(Wo - x1));
        }
      }
}

// Transposed scatter-add of im2col: accumulates patch gradients back into
// the input gradient plane.
template <class S>
void col2im_acc(const S* colT, Index C, Index H, Index W, Index kh, Index kw,
                Index pt, Index pl, Index Ho, Index Wo, S* gin) {
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < kh; ++i)
      for (Index j = 0; j < kw; ++j) {
        const S* row = colT + ((c * kh + i) * kw + j) * (Ho * Wo);
        const Index x0 = std::max<Index>(0, pl - j);
        const Index x1 = std::min<Index>(Wo, W + pl - j);
        if (x0 >= x1) continue;
        for (Index y = 0; y < Ho; ++y) {
          const Index in_y = y + i - pt;
          if (in_y < 0 || in_y >= H) continue;
          Eigen::Map<ArrayX<S>>(gin + (c * H + in_y) * W + (x0 + j - pl),
                                x1 - x0) +=
              Eigen::Map<const ArrayX<S>>(row + y * Wo + x0, x1 - x0);
        }
      }
}

}  // namespace detail

/// 2-D convolution, stride 1, explicit per-side zero padding.
///
/// This is the deep-learning cross-correlation convention: the kernel is
/// NOT flipped. output[n,o,y,x] = sum_{c,i,j} input[n,c,y+i-pad.top,
/// x+j-pad.left] * kernel[o,c,i,j]. Differentiable w.r.t. both arguments.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, Pad pad) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ShapeError("conv2d: need input [N,C,H,W] and kernel [O,C,kh,kw], got " +
                     shape_str(input.shape()) + " and " +
                     shape_str(kernel.shape()));
  const Index N = input.dim(0), C = input.dim(1), H = input.dim(2),
              W = input.dim(3);
  const Index O = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != C)
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(C));
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0)
    throw ShapeError("conv2d: negative padding");
  const Index Ho = H + pad.top + pad.bottom - kh + 1;
  const Index Wo = W + pad.left + pad.right - kw + 1;
  if (Ho <= 0 || Wo <= 0)
    throw ShapeError("conv2d: kernel larger than padded input");
  check_finite(input, "conv2d input");
  check_finite(kernel, "conv2d kernel");

  const Index CKK = C * kh * kw, P = Ho * Wo;
  Tensor<S> out(Shape{N, O, Ho, Wo});
  MatRM<S> colT(CKK, P);
  MapConstMat<S> kmat(kernel.data(), O, CKK);
  for (Index n = 0; n < N; ++n) {
    detail::im2col(input.data() + n * C * H * W, C, H, W, kh, kw, pad.top,
                   pad.left, Ho, Wo, colT.data());
    MapMat<S> on(out.data() + n * O * P, O, P);
    on.noalias() = kmat * colT;
  }
  check_finite(out, "conv2d");

  if (detail::tracing(input, kernel)) {
    out.set_requires_grad();
    auto in_n = input.ptr(), k_n = kernel.ptr(), o_n = out.ptr();
    Tape<S>::current()->record(o_n, [in_n, k_n, o_n, N, C, H, W, O, kh, kw,
                                     pad, Ho, Wo, CKK, P] {
      if (!detail::has_out_grad(o_n)) return;
      MapConstMat<S> kmat(k_n->values.data(), O, CKK);
      MatRM<S> colT(CKK, P);
      for (Index n = 0; n < N; ++n) {
        MapConstMat<S> gout(o_n->grad.data() + n * O * P, O, P);
        if (k_n->requires_grad) {
          detail::im2col(in_n->values.data() + n * C * H * W, C, H, W, kh, kw,
                         pad.top, pad.left, Ho, Wo, colT.data());
          MapMat<S> gk(detail::acc(k_n).data(), O, CKK);
          gk.noalias() += gout * colT.transpose();
        }
        if (in_n->requires_grad) {
          MatRM<S> gcolT(CKK, P);
          gcolT.noalias() = kmat.transpose() * gout;
          detail::col2im_acc(gcolT.data(), C, H, W, kh, kw, pad.top, pad.left,
                             Ho, Wo,
                             detail::acc(in_n).data() + n * C * H * W);
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel,
                 Index same_pad = 0) {
  return conv2d(input, kernel, Pad{same_pad, same_pad, same_pad, same_pad});
}

/// [R,K] x [K,M] -> [R,M].
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const Index R = a.dim(0), K = a.dim(1), M = b.dim(1);
  Tensor<S> out(Shape{R, M});
  MapConstMat<S> A(a.data(), R, K), B(b.data(), K, M);
  MapMat<S>(out.data(), R, M).noalias() = A * B;
  check_finite(out, "matmul");
  if (detail::tracing(a, b)) {
    out.set_requires_grad();
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [an, bn, on, R, K, M] {
      if (!detail::has_out_grad(on)) return;
      MapConstMat<S> A(an->values.data(), R, K), B(bn->values.data(), K, M),
          G(on->grad.data(), R, M);
      if (an->requires_grad)
        MapMat<S>(detail::acc(an).data(), R, K).noalias() += G * B.transpose();
      if (bn->requires_grad)
        MapMat<S>(detail::acc(bn).data(), K, M).noalias() += A.transpose() * G;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

/// Mean over rows of -log softmax(logits)[target]. Log-sum-exp is computed
/// with max subtraction, so arbitrarily large logits are safe.
template <class S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits,
                                const LevelTensor& targets) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be [N,L], got " +
                     shape_str(logits.shape()));
  const Index R = logits.dim(0), L = logits.dim(1);
  if (targets.rank() != 1 || targets.dim(0) != R)
    throw ShapeError("softmax_cross_entropy: targets must be [N], got " +
                     shape_str(targets.shape()));
  for (Index r = 0; r < R; ++r) {
    const auto t = targets.values()(r);
    if (t < 0 || t >= L)
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(L) + ")");
  }
  check_finite(logits, "softmax_cross_entropy logits");

  std::vector<S> lse(static_cast<std::size_t>(R));
  S total = 0;
  for (Index r = 0; r < R; ++r) {
    auto row = logits.values().segment(r * L, L);
    const S m = row.maxCoeff();
    const S ls = m + std::log((row - m).exp().sum());
    lse[static_cast<std::size_t>(r)] = ls;
    total += ls - row(targets.values()(r));
  }
  Tensor<S> out(Shape{1});
  out.values()(0) = total / static_cast<S>(R);
  check_finite(out, "softmax_cross_entropy");

  if (detail::tracing(logits)) {
    out.set_requires_grad();
    auto ln = logits.ptr(), on = out.ptr();
    auto tn = targets.ptr();
    Tape<S>::current()->record(on, [ln, tn, on, R, L, lse = std::move(lse)] {
      if (!detail::has_out_grad(on)) return;
      const S g = on->grad(0) / static_cast<S>(R);
      auto& gl = detail::acc(ln);
      for (Index r = 0; r < R; ++r) {
        auto row = ln->values.segment(r * L, L);
        gl.segment(r * L, L) +=
            g * (row - lse[static_cast<std::size_t>(r)]).exp();
        gl(r * L + tn->values(r)) -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

enum class ShiftDir { down, right };

/// Moves content by `amount` pixels along the axis, zero-filling vacated
/// rows/columns. Shape preserved; the gradient shifts back.
template <class S>
Tensor<S> shift2d(const Tensor<S>& x, ShiftDir dir, Index amount) {
  if (x.rank() < 2) throw ShapeError("shift2d: rank must be >= 2");
  const Index W = x.dim(x.rank() - 1), H = x.dim(x.rank() - 2);
  const Index extent = dir == ShiftDir::down ? H : W;
  if (amount < 0 || amount >= extent)
    throw ShapeError("shift2d: amount " + std::to_string(amount) +
                     " out of range for extent " + std::to_string(extent));
  const Index planes = x.size() / (H * W);
  Tensor<S> out(x.shape());
  for (Index p = 0; p < planes; ++p) {
    const S* src = x.data() + p * H * W;
    S* dst = out.data() + p * H * W;
    if (dir == ShiftDir::down) {
      std::memcpy(dst + amount * W, src,
                  sizeof(S) * static_cast<std::size_t>((H - amount) * W));
    } else {
      for (Index y = 0; y < H; ++y)
        std::memcpy(dst + y * W + amount, src + y * W,
                    sizeof(S) * static_cast<std::size_t>(W - amount));
    }
  }
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, dir, amount, planes, H, W] {
      if (!detail::has_out_grad(on)) return;
      auto& gx = detail::acc(xn);
      for (Index p = 0; p < planes; ++p) {
        const S* g = on->grad.data() + p * H * W;
        S* dst = gx.data() + p * H * W;
        if (dir == ShiftDir::down) {
          Eigen::Map<ArrayX<S>>(dst, (H - amount) * W) +=
              Eigen::Map<const ArrayX<S>>(g + amount * W, (H - amount) * W);
        } else {
          for (Index y = 0; y < H; ++y)
            Eigen::Map<ArrayX<S>>(dst + y * W, W - amount) +=
                Eigen::Map<const ArrayX<S>>(g + y * W + amount, W - amount);
        }
      }
    });
  }
  return out;
}

/// Splits [N,2p,H,W] into two [N,p,H,W] halves along the channel axis.
template <class S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& x) {
  if (x.rank() != 4 || x.dim(1) % 2 != 0)
    throw ShapeError("split_channels: need [N,2p,H,W] with even channels, got " +
                     shape_str(x.shape()));
  const Index N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3), p = C / 2;
  Tensor<S> a(Shape{N, p, x.dim(2), x.dim(3)});
  Tensor<S> b(Shape{N, p, x.dim(2), x.dim(3)});
  for (Index n = 0; n < N; ++n) {
    a.values().segment(n * p * hw, p * hw) =
        x.values().segment(n * C * hw, p * hw);
    b.values().segment(n * p * hw, p * hw) =
        x.values().segment(n * C * hw + p * hw, p * hw);
  }
  if (detail::tracing(x)) {
    a.set_requires_grad();
    b.set_requires_grad();
    auto xn = x.ptr(), an = a.ptr(), bn = b.ptr();
    auto fn = [xn, an, bn, N, C, p, hw] {
      const bool ga = detail::has_out_grad(an), gb = detail::has_out_grad(bn);
      if (!ga && !gb) return;
      auto& gx = detail::acc(xn);
      for (Index n = 0; n < N; ++n) {
        if (ga)
          gx.segment(n * C * hw, p * hw) += an->grad.segment(n * p * hw, p * hw);
        if (gb)
          gx.segment(n * C * hw + p * hw, p * hw) +=
              bn->grad.segment(n * p * hw, p * hw);
      }
    };
    Tape<S>::current()->record(a.ptr(), [] {});
    Tape<S>::current()->record(b.ptr(), std::move(fn));
  }
  return {a, b};
}

/// Inverse of split_channels.
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: incompatible " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const Index N = a.dim(0), ca = a.dim(1), cb = b.dim(1),
              hw = a.dim(2) * a.dim(3);
  Tensor<S> out(Shape{N, ca + cb, a.dim(2), a.dim(3)});
  for (Index n = 0; n < N; ++n) {
    out.values().segment(n * (ca + cb) * hw, ca * hw) =
        a.values().segment(n * ca * hw, ca * hw);
    out.values().segment(n * (ca + cb) * hw + ca * hw, cb * hw) =
        b.values().segment(n * cb * hw, cb * hw);
  }
  if (detail::tracing(a, b)) {
    out.set_requires_grad();
    auto an = a.ptr(), bn = b.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [an, bn, on, N, ca, cb, hw] {
      if (!detail::has_out_grad(on)) return;
      for (Index n = 0; n < N; ++n) {
        if (an->requires_grad)
          detail::acc(an).segment(n * ca * hw, ca * hw) +=
              on->grad.segment(n * (ca + cb) * hw, ca * hw);
        if (bn->requires_grad)
          detail::acc(bn).segment(n * cb * hw, cb * hw) +=
              on->grad.segment(n * (ca + cb) * hw + ca * hw, cb * hw);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: size mismatch " + shape_str(x.shape()) +
                     " -> " + shape_str(shape));
  Tensor<S> out(std::move(shape));
  out.values() = x.values();
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on] {
      if (!detail::has_out_grad(on)) return;
      detail::acc(xn) += on->grad;
    });
  }
  return out;
}

template <class S>
Tensor<S> flatten_samples(const Tensor<S>& x) {
  return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
}

/// Rearranges per-pixel logits [N, groups*L, H, W] (channel-group-major)
/// into rows [N*groups*H*W, L], row order (n, group, y, x), the same flat
/// order as the levels of an image tensor [N, groups, H, W].
template <class S>
Tensor<S> channels_to_logit_rows(const Tensor<S>& x, Index groups) {
  if (x.rank() != 4 || groups <= 0 || x.dim(1) % groups != 0)
    throw ShapeError("channels_to_logit_rows: bad input " +
                     shape_str(x.shape()) + " for " + std::to_string(groups) +
                     " groups");
  const Index N = x.dim(0), L = x.dim(1) / groups, H = x.dim(2), W = x.dim(3);
  const Index hw = H * W;
  Tensor<S> out(Shape{N * groups * hw, L});
  for (Index n = 0; n < N; ++n)
    for (Index g = 0; g < groups; ++g)
      for (Index l = 0; l < L; ++l) {
        const S* src = x.data() + ((n * groups + g) * L + l) * hw;
        S* dst = out.data() + (n * groups + g) * hw * L + l;
        for (Index p = 0; p < hw; ++p) dst[p * L] = src[p];
      }
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, N, groups, L, hw] {
      if (!detail::has_out_grad(on)) return;
      auto& gx = detail::acc(xn);
      for (Index n = 0; n < N; ++n)
        for (Index g = 0; g < groups; ++g)
          for (Index l = 0; l < L; ++l) {
            S* dst = gx.data() + ((n * groups + g) * L + l) * hw;
            const S* src = on->grad.data() + (n * groups + g) * hw * L + l;
            for (Index p = 0; p < hw; ++p) dst[p] += src[p * L];
          }
    });
  }
  return out;
}

/// Nearest-neighbour upsampling by an integer factor.
template <class S>
Tensor<S> upsample_nearest(const Tensor<S>& x, Index factor) {
  if (x.rank() != 4 || factor < 1)
    throw ShapeError("upsample_nearest: need [N,C,H,W] and factor >= 1");
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out(Shape{x.dim(0), x.dim(1), H * factor, W * factor});
  const Index Wo = W * factor;
  for (Index p = 0; p < NC; ++p)
    for (Index y = 0; y < H * factor; ++y) {
      const S* src = x.data() + (p * H + y / factor) * W;
      S* dst = out.data() + (p * H * factor + y) * Wo;
      for (Index xx = 0; xx < Wo; ++xx) dst[xx] = src[xx / factor];
    }
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, NC, H, W, factor] {
      if (!detail::has_out_grad(on)) return;
      auto& gx = detail::acc(xn);
      const Index Wo = W * factor;
      for (Index p = 0; p < NC; ++p)
        for (Index y = 0; y < H * factor; ++y) {
          const S* src = on->grad.data() + (p * H * factor + y) * Wo;
          S* dst = gx.data() + (p * H + y / factor) * W;
          for (Index xx = 0; xx < Wo; ++xx) dst[xx / factor] += src[xx];
        }
    });
  }
  return out;
}

/// Keeps every `factor`-th pixel starting at (0,0); composed with a
/// stride-1 convolution this realizes a strided convolution.
template <class S>
Tensor<S> subsample(const Tensor<S>& x, Index factor) {
  if (x.rank() != 4 || factor < 1)
    throw ShapeError("subsample: need [N,C,H,W] and factor >= 1");
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = (H + factor - 1) / factor, Wo = (W + factor - 1) / factor;
  Tensor<S> out(Shape{x.dim(0), x.dim(1), Ho, Wo});
  for (Index p = 0; p < NC; ++p)
    for (Index y = 0; y < Ho; ++y) {
      const S* src = x.data() + (p * H + y * factor) * W;
      S* dst = out.data() + (p * Ho + y) * Wo;
      for (Index xx = 0; xx < Wo; ++xx) dst[xx] = src[xx * factor];
    }
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, NC, H, W, Ho, Wo, factor] {
      if (!detail::has_out_grad(on)) return;
      auto& gx = detail::acc(xn);
      for (Index p = 0; p < NC; ++p)
        for (Index y = 0; y < Ho; ++y) {
          const S* src = on->grad.data() + (p * Ho + y) * Wo;
          S* dst = gx.data() + (p * H + y * factor) * W;
          for (Index xx = 0; xx < Wo; ++xx) dst[xx * factor] += src[xx];
        }
    });
  }
  return out;
}

/// Top-left spatial crop to Ho x Wo.
template <class S>
Tensor<S> crop2d(const Tensor<S>& x, Index Ho, Index Wo) {
  if (x.rank() != 4 || Ho < 1 || Wo < 1 || Ho > x.dim(2) || Wo > x.dim(3))
    throw ShapeError("crop2d: bad crop " + std::to_string(Ho) + "x" +
                     std::to_string(Wo) + " from " + shape_str(x.shape()));
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out(Shape{x.dim(0), x.dim(1), Ho, Wo});
  for (Index p = 0; p < NC; ++p)
    for (Index y = 0; y < Ho; ++y)
      std::memcpy(out.data() + (p * Ho + y) * Wo, x.data() + (p * H + y) * W,
                  sizeof(S) * static_cast<std::size_t>(Wo));
  if (detail::tracing(x)) {
    out.set_requires_grad();
    auto xn = x.ptr(), on = out.ptr();
    Tape<S>::current()->record(on, [xn, on, NC, H, W, Ho, Wo] {
      if (!detail::has_out_grad(on)) return;
      auto& gx = detail::acc(xn);
      for (Index p = 0; p < NC; ++p)
        for (Index y = 0; y < Ho; ++y)
          Eigen::Map<ArrayX<S>>(gx.data() + (p * H + y) * W, Wo) +=
              Eigen::Map<const ArrayX<S>>(on->grad.data() + (p * Ho + y) * Wo,
                                          Wo);
    });
  }
  return out;
}

}  // namespace pixelcnn
