#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "pixelcnn/sampler.hpp"
#include "pixelcnn/train.hpp"

using namespace pixelcnn;

namespace {

ModelConfig cfg_8x8() {
  ModelConfig c;
  c.layers = 3;
  c.features = 8;
  c.filter = 3;
  c.levels = 4;
  c.height = 8;
  c.width = 8;
  return c;
}

GatedPixelCNN<double> fresh(const ModelConfig& cfg, std::uint64_t seed) {
  GatedPixelCNN<double> m(cfg);
  Rng rng(seed);
  m.init(rng);
  return m;
}

}  // namespace

TEST_CASE("zero-weight model samples every level uniformly") {
  ModelConfig cfg = cfg_8x8();
  cfg.layers = 2;
  cfg.height = cfg.width = 4;
  auto model = fresh(cfg, 1);
  for (auto& [name, t] : model.parameters()) t.values().setZero();
  Rng rng(2);
  const Index images = 625;  // 10k pixel draws on 4x4
  LevelTensor s = sample(model, images, Conditioning<double>::none(), rng);
  std::vector<long> counts(4, 0);
  for (Index i = 0; i < s.size(); ++i)
    counts[static_cast<std::size_t>(s.values()(i))]++;
  const double n = static_cast<double>(s.size());
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  for (long c : counts)
    CHECK(std::abs(static_cast<double>(c) / n - 0.25) <= 3 * sigma);
}

TEST_CASE("temperature 0 is a deterministic, seed-independent argmax") {
  auto model = fresh(cfg_8x8(), 3);
  Rng r1(10), r2(999);
  LevelTensor a = sample(model, 1, Conditioning<double>::none(), r1, 0.0);
  LevelTensor b = sample(model, 1, Conditioning<double>::none(), r2, 0.0);
  CHECK((a.values() - b.values()).abs().maxCoeff() == 0);
}

TEST_CASE("identical seeds reproduce identical images") {
  auto model = fresh(cfg_8x8(), 4);
  Rng r1(42), r2(42);
  LevelTensor a = sample(model, 3, Conditioning<double>::none(), r1);
  LevelTensor b = sample(model, 3, Conditioning<double>::none(), r2);
  CHECK((a.values() - b.values()).abs().maxCoeff() == 0);
  Rng r3(43);
  LevelTensor c = sample(model, 3, Conditioning<double>::none(), r3);
  CHECK((a.values() - c.values()).abs().maxCoeff() > 0);
}

// The masking-correctness oracle: every distribution used while generating
// must be reproduced by one teacher-forced pass over the finished sample.
TEST_CASE("sequential sampling equals the teacher-forced forward pass") {
  auto check_equiv = [](ModelConfig cfg, std::uint64_t seed) {
    auto model = fresh(cfg, seed);
    Rng rng(seed + 1);
    SampleTrace trace =
        sample_one(model, Conditioning<double>::none(), rng, 1.0);
    Tensor<double> logits =
        forward_logits(model, trace.image, Conditioning<double>::none());
    const Index C = cfg.channels, W = cfg.width, L = cfg.levels;
    double worst = 0;
    Index flat = 0;
    for (Index y = 0; y < cfg.height; ++y)
      for (Index x = 0; x < W; ++x)
        for (Index ch = 0; ch < C; ++ch, ++flat) {
          std::vector<double> col(static_cast<std::size_t>(L));
          for (Index l = 0; l < L; ++l)
            col[static_cast<std::size_t>(l)] = logits.at({0, ch, l, y, x});
          std::vector<double> p = pixelcnn::detail::pixel_probs(col, 1.0);
          for (Index l = 0; l < L; ++l)
            worst = std::max(worst,
                             std::abs(p[static_cast<std::size_t>(l)] -
                                      trace.step_probs[static_cast<std::size_t>(
                                          flat)][static_cast<std::size_t>(l)]));
        }
    CHECK(worst <= 1e-6);
  };
  check_equiv(cfg_8x8(), 5);  // 8x8 grayscale
  ModelConfig rgb = cfg_8x8();
  rgb.channels = 3;
  rgb.features = 9;
  rgb.layers = 2;
  rgb.height = rgb.width = 6;
  check_equiv(rgb, 6);  // 6x6 RGB
}

TEST_CASE("interpolation grid: endpoints, midpoint, degenerate pair") {
  Tensor<double> a = Tensor<double>::from({3}, {0.0, 2.0, -1.0});
  Tensor<double> b = Tensor<double>::from({3}, {4.0, 0.0, 1.0});
  auto two = interpolate_embeddings(a, b, 2);
  REQUIRE(two.size() == 2);
  CHECK((two[0].values() - a.values()).abs().maxCoeff() == 0);
  CHECK((two[1].values() - b.values()).abs().maxCoeff() == 0);
  auto three = interpolate_embeddings(a, b, 3);
  for (Index i = 0; i < 3; ++i)
    CHECK(three[1].values()(i) ==
          doctest::Approx(0.5 * (a.values()(i) + b.values()(i))).epsilon(1e-15));
  CHECK_THROWS_AS(interpolate_embeddings(a, b, 1), ShapeError);
}

TEST_CASE("interpolation row: equal endpoints give identical images") {
  ModelConfig cfg = cfg_8x8();
  cfg.layers = 2;
  cfg.height = cfg.width = 5;
  cfg.cond_mode = CondMode::global;
  cfg.embed_dim = 3;
  auto model = fresh(cfg, 7);
  Tensor<double> h = Tensor<double>::from({3}, {0.3, -0.2, 0.9});
  LevelTensor row = sample_interpolation(model, h, h, 4, 77);
  REQUIRE(row.dim(0) == 4);
  const Index stride = row.size() / 4;
  for (Index i = 1; i < 4; ++i)
    CHECK((row.values().segment(i * stride, stride) -
           row.values().segment(0, stride))
              .abs()
              .maxCoeff() == 0);
  Tensor<double> g = Tensor<double>::from({3}, {-1.0, 0.1, 0.2});
  LevelTensor row2 = sample_interpolation(model, h, g, 4, 77);
  CHECK((row2.values().segment(3 * stride, stride) -
         row2.values().segment(0, stride))
            .abs()
            .maxCoeff() > 0);
  CHECK_THROWS_AS(
      sample_interpolation(model, Tensor<double>(Shape{2}), h, 3, 1),
      ShapeError);
}

TEST_CASE("complete: prefix handling") {
  auto model = fresh(cfg_8x8(), 8);
  Rng drng(9);
  LevelTensor img = oracles::random_levels({1, 1, 8, 8}, 4, drng);

  SUBCASE("full prefix returns the input untouched") {
    std::vector<std::uint8_t> mask(64, 1);
    Rng rng(10);
    LevelTensor out =
        complete(model, img, mask, Conditioning<double>::none(), rng);
    CHECK((out.values() - img.values()).abs().maxCoeff() == 0);
  }

  SUBCASE("empty prefix is equivalent to sample()") {
    std::vector<std::uint8_t> mask(64, 0);
    Rng r1(11), r2(11);
    LevelTensor a =
        complete(model, LevelTensor(Shape{1, 1, 8, 8}), mask,
                 Conditioning<double>::none(), r1);
    LevelTensor b = sample(model, 1, Conditioning<double>::none(), r2);
    CHECK((a.values() - b.values()).abs().maxCoeff() == 0);
  }

  SUBCASE("prefix pixels survive bitwise; suffix is resampled") {
    std::vector<std::uint8_t> mask(64, 0);
    for (int i = 0; i < 20; ++i) mask[static_cast<std::size_t>(i)] = 1;
    Rng rng(12);
    LevelTensor out =
        complete(model, img, mask, Conditioning<double>::none(), rng);
    for (Index i = 0; i < 20; ++i)
      CHECK(out.values()(i) == img.values()(i));
  }

  SUBCASE("non-prefix masks are rejected") {
    std::vector<std::uint8_t> mask(64, 0);
    mask[5] = 1;
    mask[3] = 1;
    mask[0] = 1;  // hole at 1,2,4
    Rng rng(13);
    CHECK_THROWS_AS(
        complete(model, img, mask, Conditioning<double>::none(), rng),
        ShapeError);
  }
}

TEST_CASE("class-conditional sampling separates the stripe classes") {
  // quick behavioural check; the full >=95% oracle runs in the acceptance
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.features = 16;
  cfg.filter = 3;
  cfg.levels = 4;
  cfg.height = cfg.width = 6;
  cfg.cond_mode = CondMode::global;
  cfg.embed_dim = 2;
  auto model = fresh(cfg, 14);
  Dataset ds = make_synthetic(SyntheticKind::stripes_hv, 256, 6, 6, 4, 15);
  TrainConfig tc;
  tc.steps = 300;
  tc.batch = 16;
  tc.lr = 2e-3;
  tc.seed = 16;
  tc.eval_every = 300;
  fit(model, ds.slice(0, 224), ds.slice(224, 256), tc);
  Rng rng(17);
  const Index per_class = 12;
  int correct = 0;
  for (int cls = 0; cls < 2; ++cls) {
    Tensor<double> h(Shape{per_class, 2});
    for (Index i = 0; i < per_class; ++i) h.at({i, cls}) = 1.0;
    LevelTensor s =
        sample(model, per_class, Conditioning<double>::global(h), rng);
    for (Index i = 0; i < per_class; ++i)
      if (classify_by_variance(s, i) == cls) ++correct;
  }
  CHECK(correct >= 20);  // 24 draws, desk-trained model
}
