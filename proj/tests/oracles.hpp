#pragma once

// Test-only reference implementations, kept independent of the library's
// computational paths: quadruple-loop convolution, softmax cross-entropy
// without max subtraction, and central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pixelcnn/ops.hpp"
#include "pixelcnn/rng.hpp"
#include "pixelcnn/tensor.hpp"

namespace oracles {

using pixelcnn::ArrayX;
using pixelcnn::Index;
using pixelcnn::LevelTensor;
using pixelcnn::Shape;
using pixelcnn::Tensor;

/// Direct summation: out[n,o,y,x] = sum_{c,i,j} in[n,c,y+i-pt,x+j-pl]*k[o,c,i,j],
/// reads outside the input as zero. Cross-correlation, no kernel flip.
inline Tensor<double> naive_conv2d(const Tensor<double>& in,
                                   const Tensor<double>& k,
                                   pixelcnn::Pad pad) {
  const Index N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const Index O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index Ho = H + pad.top + pad.bottom - kh + 1;
  const Index Wo = W + pad.left + pad.right - kw + 1;
  Tensor<double> out(Shape{N, O, Ho, Wo});
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index y = 0; y < Ho; ++y)
        for (Index x = 0; x < Wo; ++x) {
          double acc = 0;
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index yy = y + i - pad.top, xx = x + j - pad.left;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += in.at({n, c, yy, xx}) * k.at({o, c, i, j});
              }
          out.at({n, o, y, x}) = acc;
        }
  return out;
}

/// Softmax cross-entropy computed the obvious way (no max subtraction).
inline double naive_softmax_xent(const Tensor<double>& logits,
                                 const std::vector<int>& targets) {
  const Index R = logits.dim(0), L = logits.dim(1);
  double total = 0;
  for (Index r = 0; r < R; ++r) {
    double z = 0;
    for (Index l = 0; l < L; ++l) z += std::exp(logits.at({r, l}));
    total += std::log(z) - logits.at({r, targets[static_cast<std::size_t>(r)]});
  }
  return total / static_cast<double>(R);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

/// Central finite difference of f() w.r.t. element i of t.
inline double fdiff(const std::function<double()>& f, Tensor<double>& t,
                    Index i, double h) {
  const double orig = t.values()(i);
  t.values()(i) = orig + h;
  const double fp = f();
  t.values()(i) = orig - h;
  const double fm = f();
  t.values()(i) = orig;
  return (fp - fm) / (2 * h);
}

/// Max relative error between the taped gradient of loss_fn and central
/// finite differences, over every element of every listed tensor.
/// loss_fn must rebuild the computation from the current tensor values.
inline double gradcheck(const std::function<Tensor<double>()>& loss_fn,
                        std::vector<Tensor<double>> params, double h = 1e-5) {
  using pixelcnn::Tape;
  for (auto& p : params) {
    p.set_requires_grad();
    p.zero_grad();
  }
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<ArrayX<double>> analytic;
  for (auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : ArrayX<double>::Zero(p.size()));
  const auto eval = [&loss_fn] { return loss_fn().values()(0); };
  double worst = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (Index i = 0; i < params[pi].size(); ++i) {
      const double fd = fdiff(eval, params[pi], i, h);
      worst = std::max(worst, rel_err(analytic[pi](i), fd));
    }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, pixelcnn::Rng& rng,
                                    double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = rng.normal() * sd;
  return t;
}

inline LevelTensor random_levels(Shape shape, int levels, pixelcnn::Rng& rng) {
  LevelTensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i)
    t.values()(i) = static_cast<std::int32_t>(rng.below(levels));
  return t;
}

}  // namespace oracles
