#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "pixelcnn/model.hpp"

namespace pixelcnn {

/// Boolean influence grid over input pixels for one target position.
/// For a causal model every position at or after the target in raster
/// order stays false.
struct DependencyMap {
  enum class Method { perturbation, gradient };
  Index target_y = 0, target_x = 0;
  int target_channel = 0;
  Index height = 0, width = 0;
  Method method = Method::perturbation;
  std::vector<std::uint8_t> influenced;  // H*W

  bool at(Index y, Index x) const {
    return influenced[static_cast<std::size_t>(y * width + x)] != 0;
  }
};

struct Violation {
  Index src_y = 0, src_x = 0;
  int src_c = 0;
  Index dst_y = 0, dst_x = 0;
  int dst_c = 0;
  double delta = 0;
};

// ---------------------------------------------------------------------------
// blind-spot oracle: pure set propagation, independent of any numerics
// ---------------------------------------------------------------------------

namespace detail {

using Grid = std::vector<std::uint8_t>;

inline Grid dilate(const Grid& g, Index H, Index W,
                   const std::vector<std::pair<int, int>>& offsets) {
  Grid out(g.size(), 0);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      if (!g[static_cast<std::size_t>(y * W + x)]) continue;
      for (auto [dy, dx] : offsets) {
        const Index yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < H && xx >= 0 && xx < W)
          out[static_cast<std::size_t>(yy * W + xx)] = 1;
      }
    }
  return out;
}

inline void merge(Grid& into, const Grid& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] |= from[i];
}

// read offsets of the masked n x n kernel (grayscale, pixel granularity)
inline std::vector<std::pair<int, int>> masked_offsets(int f, bool with_center) {
  std::vector<std::pair<int, int>> off;
  const int r = f / 2;
  for (int dy = -r; dy < 0; ++dy)
    for (int dx = -r; dx <= r; ++dx) off.emplace_back(dy, dx);
  for (int dx = -r; dx < 0; ++dx) off.emplace_back(0, dx);
  if (with_center) off.emplace_back(0, 0);
  return off;
}

// vertical stack convolution: kh = ceil(f/2) rows ending at the output row
inline std::vector<std::pair<int, int>> vertical_offsets(int f) {
  std::vector<std::pair<int, int>> off;
  const int kh = (f + 1) / 2, r = f / 2;
  for (int dy = -(kh - 1); dy <= 0; ++dy)
    for (int dx = -r; dx <= r; ++dx) off.emplace_back(dy, dx);
  return off;
}

// horizontal stack convolution: kw = ceil(f/2) columns ending at the
// output column; the current-pixel tap exists only for type B layers
inline std::vector<std::pair<int, int>> horizontal_offsets(int f,
                                                           bool with_center) {
  std::vector<std::pair<int, int>> off;
  const int kw = (f + 1) / 2;
  for (int dx = -(kw - 1); dx < 0; ++dx) off.emplace_back(0, dx);
  if (with_center) off.emplace_back(0, 0);
  return off;
}

}  // namespace detail

/// Exact reachable-input set of a `depth`-layer stack for one target
/// pixel, by unioning the allowed mask offsets layer by layer. Depth 0 is
/// the footprint of a single masked kernel (same as depth 1).
inline std::vector<std::uint8_t> blind_spot_oracle(ArchKind arch, int depth,
                                                   int filter, Index height,
                                                   Index width, Index ty,
                                                   Index tx) {
  if (filter < 1 || filter % 2 == 0)
    throw ShapeError("blind_spot_oracle: filter must be odd");
  if (ty < 0 || ty >= height || tx < 0 || tx >= width)
    throw ShapeError("blind_spot_oracle: target out of range");
  const int layers = std::max(1, depth);
  detail::Grid target(static_cast<std::size_t>(height * width), 0);
  target[static_cast<std::size_t>(ty * width + tx)] = 1;

  if (arch == ArchKind::single_stack) {
    detail::Grid s = target;
    for (int k = layers; k >= 2; --k)
      detail::merge(s, detail::dilate(s, height, width,
                                      detail::masked_offsets(filter, true)));
    return detail::dilate(s, height, width,
                          detail::masked_offsets(filter, false));
  }

  // two-stack: walk the needed-position sets backwards through the layers
  detail::Grid need_h = target;
  detail::Grid need_v(static_cast<std::size_t>(height * width), 0);
  for (int k = layers; k >= 1; --k) {
    detail::Grid need_vpre = need_h;  // 1x1 link taps the pre-activation
    detail::merge(need_vpre, need_v);
    detail::Grid prev_h = detail::dilate(
        need_h, height, width, detail::horizontal_offsets(filter, k > 1));
    if (k > 1) detail::merge(prev_h, need_h);  // type B residual
    need_v = detail::dilate(need_vpre, height, width,
                            detail::vertical_offsets(filter));
    need_h = prev_h;
  }
  // h_0 is the image; v_0 is the image shifted down one row
  detail::Grid reach = need_h;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      if (need_v[static_cast<std::size_t>(y * width + x)] && y > 0)
        reach[static_cast<std::size_t>((y - 1) * width + x)] = 1;
  return reach;
}

/// Fraction of the causal context (raster predecessors of the target)
/// that the reachable set misses.
inline double missing_fraction(const std::vector<std::uint8_t>& reach,
                               Index height, Index width, Index ty, Index tx) {
  long context = 0, missing = 0;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      if (y > ty || (y == ty && x >= tx)) continue;
      ++context;
      if (!reach[static_cast<std::size_t>(y * width + x)]) ++missing;
    }
  return context == 0 ? 0.0 : static_cast<double>(missing) / context;
}

// ---------------------------------------------------------------------------
// numerical dependence detection
// ---------------------------------------------------------------------------

/// Perturbation sweep over all input pixels: a position influences the
/// target iff setting it to either of two probe values moves any of the
/// target's logits. Runs on the network's real input domain with a zero
/// base image, so structurally blocked paths give a bitwise-zero delta.
template <class S>
DependencyMap receptive_field_map(const GatedPixelCNN<S>& model, Index ty,
                                  Index tx, int tc = 0,
                                  DependencyMap::Method method =
                                      DependencyMap::Method::perturbation,
                                  double tolerance = 0.0) {
  const ModelConfig& c = model.cfg;
  DependencyMap map;
  map.target_y = ty;
  map.target_x = tx;
  map.target_channel = tc;
  map.height = c.height;
  map.width = c.width;
  map.method = method;
  map.influenced.assign(static_cast<std::size_t>(c.height * c.width), 0);
  Conditioning<S> cond;
  cond.mode = c.cond_mode;
  if (c.cond_mode != CondMode::none) cond.h = Tensor<S>(Shape{1, c.embed_dim});

  Tensor<S> base_x(Shape{1, c.channels, c.height, c.width});
  if (method == DependencyMap::Method::gradient) {
    base_x.set_requires_grad();
    Tape<S> tape;
    {
      typename Tape<S>::Scope scope(tape);
      Tensor<S> logits = forward_logits_scaled(model, base_x, cond);
      // select the target's logit column with a constant indicator
      Tensor<S> pick(logits.shape());
      for (Index l = 0; l < c.levels; ++l)
        pick.at({0, tc, l, ty, tx}) = S(1);
      tape.backward(sum(mul(logits, pick)));
    }
    // any nonzero gradient at an input pixel marks dependence
    const auto& g = base_x.grad();
    for (Index y = 0; y < c.height; ++y)
      for (Index x = 0; x < c.width; ++x) {
        double acc = 0;
        for (Index ch = 0; ch < c.channels; ++ch)
          acc += std::abs(static_cast<double>(
              g((ch * c.height + y) * c.width + x)));
        if (acc > tolerance)
          map.influenced[static_cast<std::size_t>(y * c.width + x)] = 1;
      }
    return map;
  }

  Tensor<S> base = forward_logits_scaled(model, base_x, cond);
  const S probes[2] = {S(1), S(-0.5)};
  for (Index y = 0; y < c.height; ++y)
    for (Index x = 0; x < c.width; ++x) {
      bool hit = false;
      for (const S v : probes) {
        if (hit) break;
        Tensor<S> px = base_x.clone();
        for (Index ch = 0; ch < c.channels; ++ch)
          px.at({0, ch, y, x}) = v;
        Tensor<S> got = forward_logits_scaled(model, px, cond);
        for (Index l = 0; l < c.levels && !hit; ++l)
          if (std::abs(static_cast<double>(got.at({0, tc, l, ty, tx}) -
                                           base.at({0, tc, l, ty, tx}))) >
              tolerance)
            hit = true;
      }
      if (hit) map.influenced[static_cast<std::size_t>(y * c.width + x)] = 1;
    }
  return map;
}

/// Probe model for exact receptive-field measurement: all-ones weights on
/// a linear-activation skeleton. Every open path contributes a strictly
/// positive amount on a zero base image, so a perturbation delta is
/// nonzero iff the position is reachable, exactly, at tolerance 0.
template <class S>
GatedPixelCNN<S> make_linear_probe(ArchKind arch, int layers, int filter,
                                   Index height, Index width) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.activation = Activation::linear;
  cfg.layers = layers;
  cfg.features = 1;
  cfg.filter = filter;
  cfg.levels = 2;
  cfg.height = height;
  cfg.width = width;
  cfg.channels = 1;
  cfg.head_width = 1;
  GatedPixelCNN<S> probe(cfg);
  Rng rng(0);
  probe.init(rng);
  for (auto& blk : probe.blocks) {
    blk.w_v.values().setOnes();
    blk.w_h.values() = blk.h_mask.values();
    blk.w_link.values().setOnes();
    blk.b_v.values().setZero();
    blk.b_h.values().setZero();
    if (blk.w_res.size() > 0) {
      blk.w_res.values() = blk.res_mask.values();
      blk.b_res.values().setZero();
    }
  }
  for (auto& l : probe.slayers) {
    l.w.values() = l.mask.values();
    l.b.values().setZero();
  }
  probe.w_h1.values() = probe.mask_h1.values();
  probe.b_h1.values().setZero();
  probe.w_h2.values() = probe.mask_h2.values();
  probe.b_h2.values().setZero();
  return probe;
}

/// Exhaustive perturbation check over every (source, target) position
/// pair, with fresh random parameter draws per trial. A violation is a
/// forbidden pair whose logit delta exceeds the tolerance; an empty
/// result is a pass. The model's parameters are reinitialized.
template <class S>
std::vector<Violation> causality_check(GatedPixelCNN<S>& model, int trials,
                                       double tolerance, Rng& rng) {
  const ModelConfig& c = model.cfg;
  std::vector<Violation> out;
  for (int trial = 0; trial < trials; ++trial) {
    model.init(rng);
    Conditioning<S> cond;
    cond.mode = c.cond_mode;
    if (c.cond_mode != CondMode::none) {
      cond.h = Tensor<S>(Shape{1, c.embed_dim});
      for (Index i = 0; i < c.embed_dim; ++i)
        cond.h.values()(i) = static_cast<S>(rng.normal());
    }
    LevelTensor img(Shape{1, c.channels, c.height, c.width});
    for (Index i = 0; i < img.size(); ++i)
      img.values()(i) = static_cast<std::int32_t>(rng.below(c.levels));
    Tensor<S> base = forward_logits(model, img, cond);
    for (Index y = 0; y < c.height; ++y)
      for (Index x = 0; x < c.width; ++x)
        for (int ch = 0; ch < c.channels; ++ch) {
          const Index src = (y * c.width + x) * c.channels + ch;
          for (int dv = 1; dv <= 2; ++dv) {
            LevelTensor pert = img.clone();
            auto& v = pert.at({0, ch, y, x});
            v = static_cast<std::int32_t>((v + dv) % c.levels);
            Tensor<S> got = forward_logits(model, pert, cond);
            for (Index y2 = 0; y2 < c.height; ++y2)
              for (Index x2 = 0; x2 < c.width; ++x2)
                for (int c2 = 0; c2 < c.channels; ++c2) {
                  const Index dst = (y2 * c.width + x2) * c.channels + c2;
                  if (dst > src) continue;
                  double worst = 0;
                  for (Index l = 0; l < c.levels; ++l)
                    worst = std::max(
                        worst, std::abs(static_cast<double>(
                                   got.at({0, c2, l, y2, x2}) -
                                   base.at({0, c2, l, y2, x2}))));
                  if (worst > tolerance)
                    out.push_back({y, x, ch, y2, x2, c2, worst});
                }
          }
        }
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradient audit
// ---------------------------------------------------------------------------

namespace detail {

inline double grad_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

}  // namespace detail

/// Max relative error between taped gradients and central finite
/// differences over a random subsample of parameters. `linear_loss`
/// switches the objective from the NLL to a plain sum of logits, which is
/// exactly linear in each parameter when the activations are removed.
///
/// Every parameter is jittered first: with zero biases the first pixel's
/// empty causal context parks head pre-activations exactly on the relu
/// kink, where a central difference straddles the subgradient.
template <class S>
double gradient_audit(GatedPixelCNN<S>& model, int samples, double step,
                      Rng& rng, bool linear_loss = false) {
  const ModelConfig& c = model.cfg;
  for (auto& [name, t] : model.parameters())
    for (Index i = 0; i < t.size(); ++i)
      t.values()(i) += static_cast<S>(0.05 * rng.normal());
  LevelTensor img(Shape{1, c.channels, c.height, c.width});
  for (Index i = 0; i < img.size(); ++i)
    img.values()(i) = static_cast<std::int32_t>(rng.below(c.levels));
  Conditioning<S> cond;
  cond.mode = c.cond_mode;
  if (c.cond_mode != CondMode::none) {
    cond.h = Tensor<S>(Shape{1, c.embed_dim});
    for (Index i = 0; i < c.embed_dim; ++i)
      cond.h.values()(i) = static_cast<S>(rng.normal());
  }
  auto loss_value = [&]() -> Tensor<S> {
    Tensor<S> logits = forward_logits(model, img, cond);
    return linear_loss ? sum(logits) : nll_bits_per_dim(logits, img);
  };
  auto params = model.parameters();
  for (auto& [name, t] : params) t.zero_grad();
  Tape<S> tape;
  {
    typename Tape<S>::Scope scope(tape);
    tape.backward(loss_value());
  }
  double worst = 0;
  for (int s = 0; s < samples; ++s) {
    const std::size_t pi =
        static_cast<std::size_t>(rng.below(params.size()));
    Tensor<S>& t = params[pi].second;
    const Index e = static_cast<Index>(rng.below(t.size()));
    const double analytic =
        t.has_grad() ? static_cast<double>(t.grad()(e)) : 0.0;
    const S orig = t.values()(e);
    t.values()(e) = orig + S(step);
    const double fp = static_cast<double>(loss_value().values()(0));
    t.values()(e) = orig - S(step);
    const double fm = static_cast<double>(loss_value().values()(0));
    t.values()(e) = orig;
    const double fd = (fp - fm) / (2 * step);
    worst = std::max(worst, detail::grad_rel_err(analytic, fd));
  }
  return worst;
}

}  // namespace pixelcnn
