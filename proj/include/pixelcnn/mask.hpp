#pragma once

#include "pixelcnn/tensor.hpp"

namespace pixelcnn {

enum class MaskType { A, B };

/// Declarative description of which kernel positions and channel-group
/// connections a masked convolution may use. Type A excludes the current
/// pixel's own channel group at the kernel center (first layer), type B
/// includes it (subsequent layers).
struct MaskSpec {
  Index kernel_h = 1;
  Index kernel_w = 1;
  MaskType type = MaskType::B;
  int color_groups = 1;  // 1 for grayscale, 3 for RGB
};

/// Binary mask [out_ch, in_ch, kh, kw], a pure function of its arguments.
///
/// Spatial rule: rows above the center are allowed, on the center row the
/// columns left of the center are allowed, and everything below or
/// strictly right of the center is blocked. At the center cell, output
/// group g may read input group g' iff g' < g (type A) or g' <= g (type B).
template <class S>
Tensor<S> build_mask(const MaskSpec& spec, Index in_ch, Index out_ch) {
  const int G = spec.color_groups;
  if (G < 1 || in_ch % G != 0 || out_ch % G != 0)
    throw ShapeError("build_mask: channel counts (" + std::to_string(in_ch) +
                     "," + std::to_string(out_ch) + ") not divisible by " +
                     std::to_string(G) + " color groups");
  if (spec.kernel_h < 1 || spec.kernel_w < 1)
    throw ShapeError("build_mask: empty kernel");
  const Index kh = spec.kernel_h, kw = spec.kernel_w;
  const Index cy = kh / 2, cx = kw / 2;
  const Index in_per = in_ch / G, out_per = out_ch / G;
  Tensor<S> m(Shape{out_ch, in_ch, kh, kw});
  for (Index o = 0; o < out_ch; ++o)
    for (Index c = 0; c < in_ch; ++c) {
      const Index go = o / out_per, gi = c / in_per;
      const bool center_ok = spec.type == MaskType::B ? gi <= go : gi < go;
      for (Index r = 0; r < kh; ++r)
        for (Index q = 0; q < kw; ++q) {
          bool ok;
          if (r < cy)
            ok = true;
          else if (r > cy)
            ok = false;
          else if (q < cx)
            ok = true;
          else if (q > cx)
            ok = false;
          else
            ok = center_ok;
          if (ok) m.at({o, c, r, q}) = S(1);
        }
    }
  return m;
}

namespace detail {

/// Stacks `halves` copies of a [p, in, kh, kw] mask along the output axis.
/// The combined f/g convolutions lay their two halves out as [f; g], so
/// each half carries the same group structure.
template <class S>
Tensor<S> tile_out_halves(const Tensor<S>& m, Index halves) {
  const Index p = m.dim(0), rest = m.size() / p;
  Tensor<S> out(Shape{p * halves, m.dim(1), m.dim(2), m.dim(3)});
  for (Index h = 0; h < halves; ++h)
    out.values().segment(h * p * rest, p * rest) = m.values();
  return out;
}

}  // namespace detail

/// Mask for the row-causal horizontal convolution [halves*p, in, 1, kw]:
/// all taps strictly left of the rightmost are open, the rightmost tap
/// (which reads the current pixel) follows the channel-group rule.
template <class S>
Tensor<S> horizontal_mask(Index p, Index halves, Index in_ch, Index kw,
                          MaskType type, int groups) {
  Tensor<S> center =
      build_mask<S>(MaskSpec{1, 1, type, groups}, in_ch, p);  // [p,in,1,1]
  Tensor<S> m = Tensor<S>::full(Shape{p, in_ch, 1, kw}, S(1));
  for (Index o = 0; o < p; ++o)
    for (Index c = 0; c < in_ch; ++c)
      m.at({o, c, 0, kw - 1}) = center.at({o, c, 0, 0});
  return detail::tile_out_halves(m, halves);
}

}  // namespace pixelcnn
