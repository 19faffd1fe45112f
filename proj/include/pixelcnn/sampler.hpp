#pragma once

#include <algorithm>
#include <vector>

#include "pixelcnn/model.hpp"

namespace pixelcnn {

namespace detail {

/// Per-pixel sampling distribution from a logit column. temperature 0
/// degenerates to a deterministic argmax (no randomness consumed).
inline std::vector<double> pixel_probs(const std::vector<double>& logits,
                                       double temperature) {
  std::vector<double> p(logits.size());
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < logits.size(); ++l)
      if (logits[l] > logits[best]) best = l;
    p[best] = 1.0;
    return p;
  }
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    p[l] = std::exp((logits[l] - m) / temperature);
    z += p[l];
  }
  for (double& v : p) v /= z;
  return p;
}

template <class S>
Conditioning<S> cond_row(const Conditioning<S>& cond, Index i) {
  if (cond.mode == CondMode::none) return cond;
  Conditioning<S> one;
  one.mode = cond.mode;
  const Index rows = cond.h.dim(0);
  const Index d = cond.h.dim(1);
  const Index r = rows == 1 ? 0 : i;
  if (r >= rows) throw ShapeError("sample: conditioning rows < image count");
  one.h = Tensor<S>(Shape{1, d});
  one.h.values() = cond.h.values().segment(r * d, d);
  return one;
}

}  // namespace detail

/// Image and the per-step distributions that generated it, in raster
/// order with channels R->G->B within a pixel. The trace is what the
/// sequential/teacher-forced equivalence check compares against.
struct SampleTrace {
  LevelTensor image;  // [1,C,H,W]
  std::vector<std::vector<double>> step_probs;  // (y,x,c) raster order
};

/// Reference sampler for one image: a full forward pass per generated
/// value (no incremental caching), each level drawn by inverse CDF.
/// `start_flat` skips a known raster prefix measured in (y,x,c) steps.
template <class S>
SampleTrace sample_one(const GatedPixelCNN<S>& model,
                       const Conditioning<S>& cond, Rng& rng,
                       double temperature = 1.0, LevelTensor partial = {},
                       Index start_flat = 0) {
  const ModelConfig& c = model.cfg;
  const Index C = c.channels, H = c.height, W = c.width, L = c.levels;
  SampleTrace trace;
  trace.image = partial.size() > 0 ? partial.clone()
                                   : LevelTensor(Shape{1, C, H, W});
  for (Index flat = start_flat; flat < H * W * C; ++flat) {
    const Index y = flat / (W * C), x = flat / C % W, ch = flat % C;
    Tensor<S> logits = forward_logits(model, trace.image, cond);
    std::vector<double> col(static_cast<std::size_t>(L));
    for (Index l = 0; l < L; ++l)
      col[static_cast<std::size_t>(l)] =
          static_cast<double>(logits.at({0, ch, l, y, x}));
    std::vector<double> p = detail::pixel_probs(col, temperature);
    const int level = temperature == 0.0
                          ? static_cast<int>(std::max_element(p.begin(), p.end()) -
                                             p.begin())
                          : rng.categorical(p);
    trace.image.at({0, ch, y, x}) = level;
    trace.step_probs.push_back(std::move(p));
  }
  return trace;
}

/// Draws `count` images sequentially, raster order, channels R->G->B.
/// Each image uses an independent stream forked from (master draw, image
/// index), so concurrent per-image generation would give the same result.
template <class S>
LevelTensor sample(const GatedPixelCNN<S>& model, Index count,
                   const Conditioning<S>& cond, Rng& rng,
                   double temperature = 1.0) {
  const ModelConfig& c = model.cfg;
  if (cond.mode != c.cond_mode)
    throw ShapeError("sample: conditioning mode does not match the model");
  LevelTensor out(Shape{count, c.channels, c.height, c.width});
  const Index stride = c.channels * c.height * c.width;
  Rng base(rng.next_u64());
  for (Index i = 0; i < count; ++i) {
    Rng stream = base.fork(static_cast<std::uint64_t>(i));
    SampleTrace t =
        sample_one(model, detail::cond_row(cond, i), stream, temperature);
    out.values().segment(i * stride, stride) = t.image.values();
  }
  return out;
}

/// Conditioning vectors h_t = (1-t) a + t b on a uniform grid of `steps`
/// points inclusive of both endpoints.
template <class S>
std::vector<Tensor<S>> interpolate_embeddings(const Tensor<S>& h_a,
                                              const Tensor<S>& h_b,
                                              Index steps) {
  if (h_a.shape() != h_b.shape() || h_a.rank() != 1)
    throw ShapeError("interpolate: endpoints must be equal-length vectors");
  if (steps < 2) throw ShapeError("interpolate: need at least 2 steps");
  std::vector<Tensor<S>> hs;
  for (Index i = 0; i < steps; ++i) {
    const S t = static_cast<S>(i) / static_cast<S>(steps - 1);
    Tensor<S> h(Shape{1, h_a.size()});
    h.values() = (S(1) - t) * h_a.values() + t * h_b.values();
    hs.push_back(std::move(h));
  }
  return hs;
}

/// A row of images along the embedding interpolation. Every image is
/// generated with the identical rng seed, which is what makes the
/// transitions smooth.
template <class S>
LevelTensor sample_interpolation(const GatedPixelCNN<S>& model,
                                 const Tensor<S>& h_a, const Tensor<S>& h_b,
                                 Index steps, std::uint64_t seed,
                                 double temperature = 1.0) {
  const ModelConfig& c = model.cfg;
  if (c.cond_mode == CondMode::none)
    throw ShapeError("interpolate: model is unconditional");
  if (h_a.size() != c.embed_dim)
    throw ShapeError("interpolate: embedding dim mismatch, model wants " +
                     std::to_string(c.embed_dim));
  auto hs = interpolate_embeddings(h_a, h_b, steps);
  LevelTensor out(Shape{steps, c.channels, c.height, c.width});
  const Index stride = c.channels * c.height * c.width;
  for (Index i = 0; i < steps; ++i) {
    Conditioning<S> cond;
    cond.mode = c.cond_mode;
    cond.h = hs[static_cast<std::size_t>(i)];
    Rng stream(seed);  // same stream for every column of the row
    SampleTrace t = sample_one(model, cond, stream, temperature);
    out.values().segment(i * stride, stride) = t.image.values();
  }
  return out;
}

/// Resamples the raster suffix of a partially known image. The known
/// region must be a raster prefix of whole pixels; those pixels are
/// copied through untouched.
template <class S>
LevelTensor complete(const GatedPixelCNN<S>& model, const LevelTensor& partial,
                     const std::vector<std::uint8_t>& known_prefix_mask,
                     const Conditioning<S>& cond, Rng& rng,
                     double temperature = 1.0) {
  const ModelConfig& c = model.cfg;
  if (partial.rank() != 4 || partial.dim(0) != 1 ||
      partial.dim(1) != c.channels || partial.dim(2) != c.height ||
      partial.dim(3) != c.width)
    throw ShapeError("complete: partial image does not match the model");
  if (static_cast<Index>(known_prefix_mask.size()) != c.height * c.width)
    throw ShapeError("complete: mask must cover H*W pixels");
  Index prefix_pixels = 0;
  while (prefix_pixels < static_cast<Index>(known_prefix_mask.size()) &&
         known_prefix_mask[static_cast<std::size_t>(prefix_pixels)])
    ++prefix_pixels;
  for (Index i = prefix_pixels; i < static_cast<Index>(known_prefix_mask.size()); ++i)
    if (known_prefix_mask[static_cast<std::size_t>(i)])
      throw ShapeError("complete: known region is not a raster prefix");
  Rng base(rng.next_u64());
  Rng stream = base.fork(0);
  SampleTrace t = sample_one(model, detail::cond_row(cond, 0), stream,
                             temperature, partial, prefix_pixels * c.channels);
  return t.image;
}

}  // namespace pixelcnn
