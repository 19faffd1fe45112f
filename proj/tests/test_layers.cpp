#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "pixelcnn/layers.hpp"

using namespace pixelcnn;
using oracles::random_tensor;

namespace {

GatedBlockParams<double> random_block(Index p, Index cin, Index n, int groups,
                                      MaskType type, CondMode mode, Index d,
                                      Rng& rng) {
  return make_gated_block<double>(p, cin, n, groups, type, true, 2, mode, d, 4,
                                  rng);
}

}  // namespace

TEST_CASE("gated_activation: zero pre-activation gives zero output") {
  Tensor<double> pre(Shape{2, 8, 3, 3});
  Tensor<double> none;
  Tensor<double> y = gated_activation(pre, Conditioning<double>::none(), none, none);
  REQUIRE(y.shape() == Shape{2, 4, 3, 3});
  CHECK(y.values().abs().maxCoeff() == 0.0);
}

TEST_CASE("gated_activation: saturating global bias is location-independent") {
  const Index p = 3, d = 2;
  Tensor<double> pre(Shape{1, 2 * p, 4, 5});
  Tensor<double> h = Tensor<double>::from({1, d}, {1.0, 1.0});
  Tensor<double> v_f = Tensor<double>::full({d, p}, 50.0);
  Tensor<double> v_g = Tensor<double>::full({d, p}, 50.0);
  Tensor<double> y =
      gated_activation(pre, Conditioning<double>::global(h), v_f, v_g);
  CHECK(y.values().minCoeff() > 0.999);
  // identical at every spatial position
  for (Index c = 0; c < p; ++c) {
    const auto seg = y.values().segment(c * 20, 20);
    CHECK((seg - seg(0)).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gated_activation matches a scalar-loop evaluation of the formula") {
  Rng rng(21);
  const Index N = 2, p = 4, H = 3, W = 2, d = 5;
  Tensor<double> pre = random_tensor({N, 2 * p, H, W}, rng);
  Tensor<double> h = random_tensor({N, d}, rng);
  Tensor<double> v_f = random_tensor({d, p}, rng);
  Tensor<double> v_g = random_tensor({d, p}, rng);
  Tensor<double> y =
      gated_activation(pre, Conditioning<double>::global(h), v_f, v_g);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < p; ++c) {
      double bf = 0, bg = 0;
      for (Index k = 0; k < d; ++k) {
        bf += v_f.at({k, c}) * h.at({n, k});
        bg += v_g.at({k, c}) * h.at({n, k});
      }
      for (Index yy = 0; yy < H; ++yy)
        for (Index xx = 0; xx < W; ++xx) {
          const double f = pre.at({n, c, yy, xx}) + bf;
          const double g = pre.at({n, p + c, yy, xx}) + bg;
          const double want = std::tanh(f) / (1.0 + std::exp(-g));
          CHECK(y.at({n, c, yy, xx}) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("gated_activation: conditioning mode mismatch is rejected") {
  Tensor<double> pre(Shape{1, 4, 2, 2});
  Tensor<double> h = Tensor<double>::from({1, 3}, {1, 2, 3});
  Tensor<double> bad;  // missing projections
  CHECK_THROWS_AS(
      gated_activation(pre, Conditioning<double>::global(h), bad, bad),
      ShapeError);
  Rng rng(1);
  Tensor<double> v = random_tensor({2, 2}, rng);  // wrong d
  CHECK_THROWS_AS(gated_activation(pre, Conditioning<double>::global(h), v, v),
                  ShapeError);
}

TEST_CASE("gated layer: zero inputs and zero conditioning give zero outputs") {
  Rng rng(22);
  auto prm = random_block(6, 6, 3, 1, MaskType::B, CondMode::none, 0, rng);
  Tensor<double> v0(Shape{1, 6, 4, 4});
  Tensor<double> h0(Shape{1, 6, 4, 4});
  auto out = gated_layer_forward(v0, h0, prm, Conditioning<double>::none(),
                                 Activation::gated);
  CHECK(out.v.values().abs().maxCoeff() == 0.0);
  CHECK(out.h.values().abs().maxCoeff() == 0.0);
}

// Exhaustive perturbation oracle on a 6x6 image for one type-A layer fed
// directly by the image: h_out at any raster position at or before the
// perturbed pixel must be untouched, bitwise, and the vertical stack must
// only ever respond below the perturbed row.
TEST_CASE("gated layer: first-layer causality under exhaustive perturbation") {
  Rng rng(23);
  const Index H = 6, W = 6, p = 6;
  auto prm = random_block(p, 1, 5, 1, MaskType::A, CondMode::none, 0, rng);
  Tensor<double> x = random_tensor({1, 1, H, W}, rng);
  auto run = [&](const Tensor<double>& img) {
    return gated_layer_forward(shift2d(img, ShiftDir::down, 1), img, prm,
                               Conditioning<double>::none(), Activation::gated);
  };
  auto base = run(x);
  for (Index r = 0; r < H; ++r)
    for (Index c = 0; c < W; ++c) {
      Tensor<double> pert = x.clone();
      pert.at({0, 0, r, c}) += 1.0;
      auto got = run(pert);
      for (Index r2 = 0; r2 < H; ++r2)
        for (Index c2 = 0; c2 < W; ++c2) {
          const bool h_forbidden = r2 < r || (r2 == r && c2 <= c);
          const bool v_forbidden = r2 <= r;
          for (Index ch = 0; ch < p; ++ch) {
            if (h_forbidden)
              CHECK(got.h.at({0, ch, r2, c2}) == base.h.at({0, ch, r2, c2}));
            if (v_forbidden)
              CHECK(got.v.at({0, ch, r2, c2}) == base.v.at({0, ch, r2, c2}));
          }
        }
    }
}

TEST_CASE("gated layer: vertical output sees strictly-above rows only") {
  Rng rng(24);
  const Index H = 6, W = 6, p = 4;
  auto prm = random_block(p, 1, 3, 1, MaskType::A, CondMode::none, 0, rng);
  Tensor<double> x = random_tensor({1, 1, H, W}, rng);
  auto v_of = [&](const Tensor<double>& img) {
    return gated_layer_forward(shift2d(img, ShiftDir::down, 1), img, prm,
                               Conditioning<double>::none(), Activation::gated)
        .v;
  };
  Tensor<double> base = v_of(x);
  // row r of the input may only influence vertical rows > r; row H-1 nothing
  Tensor<double> pert = x.clone();
  for (Index c = 0; c < W; ++c) pert.at({0, 0, H - 1, c}) += 3.0;
  Tensor<double> got = v_of(pert);
  CHECK((got.values() - base.values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("gated layer: nothing flows horizontal -> vertical") {
  Rng rng(25);
  const Index p = 6;
  auto prm = random_block(p, p, 3, 1, MaskType::B, CondMode::none, 0, rng);
  Tensor<double> v_in = random_tensor({2, p, 5, 5}, rng);
  Tensor<double> h_in = random_tensor({2, p, 5, 5}, rng);
  Tensor<double> h_zero(h_in.shape());
  auto a = gated_layer_forward(v_in, h_in, prm, Conditioning<double>::none(),
                               Activation::gated);
  auto b = gated_layer_forward(v_in, h_zero, prm, Conditioning<double>::none(),
                               Activation::gated);
  CHECK((a.v.values() - b.v.values()).abs().maxCoeff() == 0.0);
}

TEST_CASE("gated layer: gradients match finite differences") {
  Rng rng(26);
  const Index p = 3, d = 2;
  auto prm = make_gated_block<double>(p, p, 3, 1, MaskType::B, true, 2,
                                      CondMode::global, d, 4, rng);
  Tensor<double> v_in = random_tensor({1, p, 3, 3}, rng, 0.5);
  Tensor<double> h_in = random_tensor({1, p, 3, 3}, rng, 0.5);
  Tensor<double> h = random_tensor({1, d}, rng, 0.5);
  auto loss = [&] {
    auto out = gated_layer_forward(v_in, h_in, prm,
                                   Conditioning<double>::global(h),
                                   Activation::gated);
    return sum(add(out.v, out.h));
  };
  CHECK(oracles::gradcheck(loss,
                           {v_in, h_in, h, prm.w_v, prm.b_v, prm.w_h, prm.b_h,
                            prm.w_link, prm.w_res, prm.b_res, prm.v_f, prm.v_g,
                            prm.h_f, prm.h_g},
                           1e-5) <= 1e-4);
}

TEST_CASE("relu and linear activation units") {
  Rng rng(27);
  const Index p = 4;
  auto prm = make_gated_block<double>(p, p, 3, 1, MaskType::B, true, 1,
                                      CondMode::none, 0, 0, rng);
  Tensor<double> v_in = random_tensor({1, p, 4, 4}, rng);
  Tensor<double> h_in = random_tensor({1, p, 4, 4}, rng);
  auto out = gated_layer_forward(v_in, h_in, prm, Conditioning<double>::none(),
                                 Activation::relu);
  CHECK(out.v.values().minCoeff() >= 0.0);
  auto lin = gated_layer_forward(v_in, h_in, prm, Conditioning<double>::none(),
                                 Activation::linear);
  CHECK(lin.v.shape() == out.v.shape());
}

TEST_CASE("map_spatial: zero weights give a zero map of the right shape") {
  Rng rng(28);
  SpatialConditioner<double> m =
      make_spatial_conditioner<double>(5, 3, 7, 6, rng);
  for (auto* t : {&m.w_fc, &m.b_fc, &m.w_c1, &m.b_c1, &m.w_c2, &m.b_c2})
    t->values().setZero();
  Tensor<double> h = random_tensor({2, 5}, rng);
  Tensor<double> s = map_spatial(m, h);
  REQUIRE(s.shape() == Shape{2, 3, 7, 6});
  CHECK(s.values().abs().maxCoeff() == 0.0);
}

TEST_CASE("map_spatial: zero input with zero biases gives a zero map") {
  Rng rng(29);
  SpatialConditioner<double> m =
      make_spatial_conditioner<double>(4, 2, 8, 8, rng);
  m.b_fc.values().setZero();
  m.b_c1.values().setZero();
  m.b_c2.values().setZero();
  Tensor<double> h(Shape{1, 4});
  CHECK(map_spatial(m, h).values().abs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(map_spatial(m, Tensor<double>(Shape{1, 3})), ShapeError);
}

TEST_CASE("spatially conditioned gate uses the unmasked 1x1 path") {
  Rng rng(30);
  const Index p = 3, cs = 2;
  Tensor<double> pre = random_tensor({1, 2 * p, 3, 3}, rng);
  Tensor<double> s = random_tensor({1, cs, 3, 3}, rng);
  Tensor<double> v_f = random_tensor({p, cs, 1, 1}, rng);
  Tensor<double> v_g = random_tensor({p, cs, 1, 1}, rng);
  Tensor<double> y =
      gated_activation(pre, Conditioning<double>::spatial(s), v_f, v_g);
  for (Index c = 0; c < p; ++c)
    for (Index yy = 0; yy < 3; ++yy)
      for (Index xx = 0; xx < 3; ++xx) {
        double bf = 0, bg = 0;
        for (Index k = 0; k < cs; ++k) {
          bf += v_f.at({c, k, 0, 0}) * s.at({0, k, yy, xx});
          bg += v_g.at({c, k, 0, 0}) * s.at({0, k, yy, xx});
        }
        const double f = pre.at({0, c, yy, xx}) + bf;
        const double g = pre.at({0, p + c, yy, xx}) + bg;
        const double want = std::tanh(f) * (0.5 + 0.5 * std::tanh(0.5 * g));
        CHECK(y.at({0, c, yy, xx}) == doctest::Approx(want).epsilon(1e-12));
      }
}
