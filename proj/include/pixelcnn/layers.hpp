#pragma once

#include "pixelcnn/mask.hpp"
#include "pixelcnn/ops.hpp"
#include "pixelcnn/rng.hpp"

namespace pixelcnn {

enum class Activation { gated, relu, linear };
enum class CondMode { none, global, spatial };

/// Per-forward conditioning information. `h` is a location-independent
/// vector per sample; `s` a spatial map with the image's height/width.
/// Spatially conditioned models compute s = map_spatial(m, h) once per
/// forward pass when the caller has not supplied it.
template <class S>
struct Conditioning {
  CondMode mode = CondMode::none;
  Tensor<S> h;  // [N, d]
  Tensor<S> s;  // [N, cs, H, W]

  static Conditioning none() { return {}; }
  static Conditioning global(Tensor<S> h) {
    Conditioning c;
    c.mode = CondMode::global;
    c.h = std::move(h);
    return c;
  }
  static Conditioning spatial(Tensor<S> s) {
    Conditioning c;
    c.mode = CondMode::spatial;
    c.s = std::move(s);
    return c;
  }
};

namespace detail {

template <class S>
void check_cond_params(const Conditioning<S>& cond, const Tensor<S>& v_f,
                       Index p) {
  if (cond.mode == CondMode::global) {
    if (v_f.rank() != 2 || v_f.dim(1) != p || cond.h.rank() != 2 ||
        cond.h.dim(0) < 1 || cond.h.dim(1) != v_f.dim(0))
      throw ShapeError("conditioning: global mode expects h [N,d] and V [d,p]");
  } else if (cond.mode == CondMode::spatial) {
    if (v_f.rank() != 4 || v_f.dim(0) != p || v_f.dim(2) != 1 ||
        v_f.dim(3) != 1 || cond.s.rank() != 4 || cond.s.dim(1) != v_f.dim(1))
      throw ShapeError(
          "conditioning: spatial mode expects s [N,cs,H,W] and 1x1 kernels "
          "[p,cs,1,1]");
  }
}

/// Conditioning bias for one gate half: V^T h broadcast over positions
/// (global) or an unmasked 1x1 convolution of the spatial map.
template <class S>
Tensor<S> biased(const Tensor<S>& pre, const Conditioning<S>& cond,
                 const Tensor<S>& v) {
  switch (cond.mode) {
    case CondMode::none:
      return pre;
    case CondMode::global:
      return add_sample_bias(pre, matmul(cond.h, v));
    case CondMode::spatial:
      return add(pre, conv2d(cond.s, v, Pad{}));
  }
  throw ShapeError("conditioning: unknown mode");
}

}  // namespace detail

/// Gated activation unit: y = tanh(f + bias_f) * sigmoid(g + bias_g),
/// where (f, g) are the two halves of the combined pre-activation and the
/// biases come from the conditioning mode (zero for none).
template <class S>
Tensor<S> gated_activation(const Tensor<S>& pre, const Conditioning<S>& cond,
                           const Tensor<S>& v_f, const Tensor<S>& v_g) {
  auto [f, g] = split_channels(pre);
  if (cond.mode != CondMode::none) {
    detail::check_cond_params(cond, v_f, f.dim(1));
    detail::check_cond_params(cond, v_g, g.dim(1));
    f = detail::biased(f, cond, v_f);
    g = detail::biased(g, cond, v_g);
  }
  return mul(tanh(f), sigmoid(g));
}

/// Activation unit dispatching on the configured nonlinearity. For gated
/// the pre-activation carries 2p maps, otherwise p; relu replaces the
/// gate (the original PixelCNN nonlinearity), linear removes it entirely
/// (used by the gradient diagnostics).
template <class S>
Tensor<S> activation_unit(const Tensor<S>& pre, const Conditioning<S>& cond,
                          Activation act, const Tensor<S>& v_f,
                          const Tensor<S>& v_g) {
  if (act == Activation::gated) return gated_activation(pre, cond, v_f, v_g);
  Tensor<S> z = pre;
  if (cond.mode != CondMode::none) {
    detail::check_cond_params(cond, v_f, pre.dim(1));
    z = detail::biased(z, cond, v_f);
  }
  return act == Activation::relu ? relu(z) : z;
}

/// All weights of one two-stack layer: combined f/g convolutions for the
/// vertical and horizontal stacks, the unmasked 1x1 stack link, the
/// horizontal residual 1x1, and the per-stack conditioning projections.
template <class S>
struct GatedBlockParams {
  MaskType type = MaskType::B;
  bool residual_conv = true;
  Tensor<S> w_v, b_v;  // [gw, cin, ceil(n/2), n], [gw]
  Tensor<S> w_h, b_h;  // [gw, cin, 1, ceil(n/2)], [gw]
  Tensor<S> h_mask;    // constant, same shape as w_h
  Tensor<S> w_link;    // [gw, gw, 1, 1]
  Tensor<S> w_res, b_res;  // [p, cin, 1, 1], [p]
  Tensor<S> res_mask;      // constant
  Tensor<S> v_f, v_g, h_f, h_g;  // empty unless conditional
};

template <class S>
struct StackPair {
  Tensor<S> v, h;
};

/// One Gated PixelCNN layer.
///
/// The vertical convolution is aligned so each output row reads only the
/// kh rows ending at its own; because the stack input was shifted down a
/// row on entry, every vertical activation depends on strictly-above
/// image rows only. Nothing flows from the horizontal stack back into the
/// vertical one. The 1x1 link taps the vertical pre-activation (before
/// its gate) into the horizontal gate input, and the residual path is a
/// 1x1 convolution of the horizontal input (group-masked so the RGB
/// ordering survives).
template <class S>
StackPair<S> gated_layer_forward(const Tensor<S>& v_in, const Tensor<S>& h_in,
                                 const GatedBlockParams<S>& prm,
                                 const Conditioning<S>& cond, Activation act) {
  const Index kh = prm.w_v.dim(2), n = prm.w_v.dim(3), kw = prm.w_h.dim(3);
  Tensor<S> v_pre =
      add(conv2d(v_in, prm.w_v, Pad{kh - 1, 0, n / 2, n / 2}), prm.b_v);
  Tensor<S> v_out = activation_unit(v_pre, cond, act, prm.v_f, prm.v_g);

  Tensor<S> h_pre =
      add(conv2d(h_in, mul(prm.w_h, prm.h_mask), Pad{0, 0, kw - 1, 0}),
          prm.b_h);
  h_pre = add(h_pre, conv2d(v_pre, prm.w_link, Pad{}));
  Tensor<S> h_act = activation_unit(h_pre, cond, act, prm.h_f, prm.h_g);

  Tensor<S> res =
      prm.residual_conv
          ? add(conv2d(h_in, mul(prm.w_res, prm.res_mask), Pad{}), prm.b_res)
          : h_in;
  return {v_out, add(res, h_act)};
}

/// Upsampling network m() turning a conditioning vector into a spatial
/// map: full connection to a coarse grid, then two rounds of nearest
/// upsampling + 3x3 convolution, cropped to the image dims.
template <class S>
struct SpatialConditioner {
  Index embed_dim = 0, out_channels = 0, height = 0, width = 0;
  Index h0 = 0, w0 = 0;
  Tensor<S> w_fc, b_fc;  // [d, cs*h0*w0], [cs*h0*w0]
  Tensor<S> w_c1, b_c1;  // [cs, cs, 3, 3], [cs]
  Tensor<S> w_c2, b_c2;  // [cs, cs, 3, 3], [cs]
};

template <class S>
Tensor<S> map_spatial(const SpatialConditioner<S>& m, const Tensor<S>& h) {
  if (h.rank() != 2 || h.dim(1) != m.embed_dim)
    throw ShapeError("map_spatial: h must be [N," +
                     std::to_string(m.embed_dim) + "], got " +
                     shape_str(h.shape()));
  const Index N = h.dim(0), cs = m.out_channels;
  Tensor<S> t = add(matmul(h, m.w_fc), m.b_fc);
  t = reshape(t, Shape{N, cs, m.h0, m.w0});
  t = relu(add(conv2d(upsample_nearest(t, 2), m.w_c1, Pad{1, 1, 1, 1}), m.b_c1));
  t = add(conv2d(upsample_nearest(t, 2), m.w_c2, Pad{1, 1, 1, 1}), m.b_c2);
  return crop2d(t, m.height, m.width);
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
Tensor<S> init_kernel(Shape shape, Rng& rng) {
  Tensor<S> w(shape);
  Index fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i)
    fan_in *= shape[i];
  const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < w.size(); ++i)
    w.values()(i) = static_cast<S>(rng.normal() * sd);
  w.set_requires_grad();
  return w;
}

/// Weight matrix [K,M] for h -> h*W maps; fan-in is the input dim K.
template <class S>
Tensor<S> init_linear(Index in, Index out, Rng& rng) {
  Tensor<S> w(Shape{in, out});
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (Index i = 0; i < w.size(); ++i)
    w.values()(i) = static_cast<S>(rng.normal() * sd);
  w.set_requires_grad();
  return w;
}

template <class S>
Tensor<S> init_masked_kernel(Shape shape, const Tensor<S>& mask, Rng& rng) {
  Tensor<S> w = init_kernel<S>(std::move(shape), rng);
  w.values() *= mask.values();  // blocked taps start (and stay) exactly zero
  return w;
}

template <class S>
Tensor<S> init_bias(Index n) {
  Tensor<S> b(Shape{n});
  b.set_requires_grad();
  return b;
}

template <class S>
void init_cond_pair(Tensor<S>& f, Tensor<S>& g, CondMode mode, Index d,
                    Index cs, Index p, bool gate_pair, Rng& rng) {
  if (mode == CondMode::none) return;
  if (mode == CondMode::global) {
    f = init_linear<S>(d, p, rng);
    if (gate_pair) g = init_linear<S>(d, p, rng);
  } else {
    f = init_kernel<S>(Shape{p, cs, 1, 1}, rng);
    if (gate_pair) g = init_kernel<S>(Shape{p, cs, 1, 1}, rng);
  }
}

}  // namespace detail

/// Builds one layer's parameters. `gate_halves` is 2 for the gated unit
/// (combined f/g convolution) and 1 for relu/linear variants, keeping
/// every kernel shape consistent with the feature width p.
template <class S>
GatedBlockParams<S> make_gated_block(Index p, Index cin, Index n, int groups,
                                     MaskType type, bool residual_conv,
                                     Index gate_halves, CondMode cond_mode,
                                     Index embed_dim, Index cond_channels,
                                     Rng& rng) {
  if (n < 1 || n % 2 == 0) throw ShapeError("make_gated_block: filter must be odd");
  const Index kh = (n + 1) / 2, kw = (n + 1) / 2, gw = gate_halves * p;
  GatedBlockParams<S> prm;
  prm.type = type;
  prm.residual_conv = residual_conv || cin != p;
  prm.w_v = detail::init_kernel<S>(Shape{gw, cin, kh, n}, rng);
  prm.b_v = detail::init_bias<S>(gw);
  prm.h_mask = horizontal_mask<S>(p, gate_halves, cin, kw, type, groups);
  prm.w_h = detail::init_masked_kernel<S>(Shape{gw, cin, 1, kw}, prm.h_mask, rng);
  prm.b_h = detail::init_bias<S>(gw);
  prm.w_link = detail::init_kernel<S>(Shape{gw, gw, 1, 1}, rng);
  if (prm.residual_conv) {
    prm.res_mask = build_mask<S>(MaskSpec{1, 1, type, groups}, cin, p);
    prm.w_res = detail::init_masked_kernel<S>(Shape{p, cin, 1, 1}, prm.res_mask, rng);
    prm.b_res = detail::init_bias<S>(p);
  }
  detail::init_cond_pair(prm.v_f, prm.v_g, cond_mode, embed_dim, cond_channels,
                         gw / gate_halves, gate_halves == 2, rng);
  detail::init_cond_pair(prm.h_f, prm.h_g, cond_mode, embed_dim, cond_channels,
                         gw / gate_halves, gate_halves == 2, rng);
  return prm;
}

template <class S>
SpatialConditioner<S> make_spatial_conditioner(Index embed_dim, Index cs,
                                               Index height, Index width,
                                               Rng& rng) {
  SpatialConditioner<S> m;
  m.embed_dim = embed_dim;
  m.out_channels = cs;
  m.height = height;
  m.width = width;
  m.h0 = (height + 3) / 4;
  m.w0 = (width + 3) / 4;
  m.w_fc = detail::init_linear<S>(embed_dim, cs * m.h0 * m.w0, rng);
  m.b_fc = detail::init_bias<S>(cs * m.h0 * m.w0);
  m.w_c1 = detail::init_kernel<S>(Shape{cs, cs, 3, 3}, rng);
  m.b_c1 = detail::init_bias<S>(cs);
  m.w_c2 = detail::init_kernel<S>(Shape{cs, cs, 3, 3}, rng);
  m.b_c2 = detail::init_bias<S>(cs);
  return m;
}

}  // namespace pixelcnn
