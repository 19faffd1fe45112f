#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "pixelcnn/train.hpp"

using namespace pixelcnn;

namespace {

ModelConfig small_cfg() {
  ModelConfig c;
  c.layers = 2;
  c.features = 8;
  c.filter = 3;
  c.levels = 4;
  c.height = 6;
  c.width = 6;
  return c;
}

GatedPixelCNN<double> fresh_model(const ModelConfig& cfg, std::uint64_t seed) {
  GatedPixelCNN<double> m(cfg);
  Rng rng(seed);
  m.init(rng);
  return m;
}

Dataset stripes(Index n, std::uint64_t seed) {
  return make_synthetic(SyntheticKind::stripes_hv, n, 6, 6, 4, seed);
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged and reports eval loss") {
  auto model = fresh_model(small_cfg(), 1);
  Dataset ds = stripes(16, 2);
  std::vector<Index> idx = {0, 1, 2, 3};
  LevelTensor batch = ds.batch(idx);

  std::vector<ArrayX<double>> before;
  for (auto& [name, t] : model.parameters()) before.push_back(t.values());

  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.batch = 4;
  OptimizerState<double> opt;
  opt.init(model.parameters(), cfg.optimizer);
  const double loss =
      train_step(model, batch, Conditioning<double>::none(), opt, cfg);

  std::size_t i = 0;
  for (auto& [name, t] : model.parameters()) {
    CHECK((t.values() - before[i]).abs().maxCoeff() == 0.0);
    ++i;
  }
  const double eval = static_cast<double>(
      nll_bits_per_dim(forward_logits(model, batch, Conditioning<double>::none()),
                       batch)
          .values()(0));
  CHECK(std::abs(loss - eval) <= 1e-12);
}

TEST_CASE("overfitting a single repeated batch lowers the loss") {
  auto model = fresh_model(small_cfg(), 3);
  Dataset ds = stripes(8, 4);
  std::vector<Index> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  LevelTensor batch = ds.batch(idx);
  TrainConfig cfg;
  cfg.lr = 5e-3;
  OptimizerState<double> opt;
  opt.init(model.parameters(), cfg.optimizer);
  double first = 0, last = 0;
  for (int t = 0; t < 200; ++t) {
    const double l =
        train_step(model, batch, Conditioning<double>::none(), opt, cfg);
    if (t == 0) first = l;
    last = l;
  }
  CHECK(last < first);
  CHECK(last < 0.9 * first);
}

TEST_CASE("identical seeds give identical loss sequences") {
  auto run = [] {
    auto model = fresh_model(small_cfg(), 5);
    Dataset ds = stripes(32, 6);
    TrainConfig cfg;
    cfg.steps = 12;
    cfg.batch = 8;
    cfg.seed = 9;
    cfg.eval_every = 1;
    Dataset ev = ds.slice(24, 32);
    return fit(model, ds.slice(0, 24), ev, cfg);
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train_bits == b[i].train_bits);
    CHECK(a[i].eval_bits == b[i].eval_bits);
  }
}

TEST_CASE("history length equals steps over cadence") {
  auto model = fresh_model(small_cfg(), 7);
  Dataset ds = stripes(32, 8);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch = 8;
  cfg.eval_every = 5;
  auto hist = fit(model, ds.slice(0, 24), ds.slice(24, 32), cfg);
  REQUIRE(hist.size() == 4);
  CHECK(hist.back().step == 20);
  CHECK(hist.back().eval_bits <= std::log2(4.0));  // uniform is the ceiling
}

TEST_CASE("gradient clipping caps the update without changing its direction") {
  auto model = fresh_model(small_cfg(), 11);
  Dataset ds = stripes(8, 12);
  LevelTensor batch = ds.batch({0, 1, 2, 3});
  TrainConfig cfg;
  cfg.clip_norm = 1e-6;  // absurdly tight: the step must become tiny
  cfg.optimizer = OptKind::sgd_momentum;
  cfg.lr = 1.0;
  OptimizerState<double> opt;
  opt.init(model.parameters(), cfg.optimizer);
  std::vector<ArrayX<double>> before;
  for (auto& [name, t] : model.parameters()) before.push_back(t.values());
  train_step(model, batch, Conditioning<double>::none(), opt, cfg);
  double delta = 0;
  std::size_t i = 0;
  for (auto& [name, t] : model.parameters()) {
    delta += (t.values() - before[i]).square().sum();
    ++i;
  }
  CHECK(std::sqrt(delta) <= 1e-5);
}

TEST_CASE("non-finite loss aborts with step and parameter-norm diagnostics") {
  auto model = fresh_model(small_cfg(), 29);
  model.blocks[0].w_v.values()(0) = std::numeric_limits<double>::infinity();
  Dataset ds = stripes(8, 30);
  LevelTensor batch = ds.batch({0, 1});
  TrainConfig cfg;
  OptimizerState<double> opt;
  opt.init(model.parameters(), cfg.optimizer);
  try {
    train_step(model, batch, Conditioning<double>::none(), opt, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
    CHECK(msg.find("parameter norm") != std::string::npos);
  }
}

TEST_CASE("checkpoint: unsupported version is rejected") {
  auto model = fresh_model(small_cfg(), 31);
  OptimizerState<double> opt;
  opt.init(model.parameters(), OptKind::adam);
  auto params = model.parameters();
  save_checkpoint<double>("t_ver.ckpt", "model", model.cfg, params, opt,
                          Rng(1), 0);
  // bump the version field and refresh the trailing checksum
  std::fstream f("t_ver.ckpt", std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(4);
  const std::uint32_t bad_version = 99;
  f.write(reinterpret_cast<const char*>(&bad_version), 4);
  f.seekg(0, std::ios::end);
  const auto total = static_cast<std::size_t>(f.tellg());
  std::vector<std::uint8_t> bytes(total);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
  const std::uint32_t crc =
      pixelcnn::detail::crc32_bytes(bytes.data() + 4, total - 8);
  f.seekp(static_cast<std::streamoff>(total - 4));
  f.write(reinterpret_cast<const char*>(&crc), 4);
  f.close();
  auto params2 = model.parameters();
  try {
    load_checkpoint<double>("t_ver.ckpt", "model", model.cfg, params2, nullptr);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("checkpoint: save, load, save round-trips to identical bytes") {
  auto model = fresh_model(small_cfg(), 13);
  OptimizerState<double> opt;
  opt.init(model.parameters(), OptKind::adam);
  opt.step = 17;
  Rng rng = Rng::restore(21, 5);
  auto params = model.parameters();
  save_checkpoint<double>("t_ck1.ckpt", "model", model.cfg, params, opt, rng, 17);

  auto model2 = fresh_model(small_cfg(), 99);  // different init
  OptimizerState<double> opt2;
  auto params2 = model2.parameters();
  CheckpointInfo info =
      load_checkpoint<double>("t_ck1.ckpt", "model", model2.cfg, params2, &opt2);
  CHECK(info.step == 17);
  CHECK(info.rng_seed == 21);
  CHECK(info.rng_counter == 5);

  // bitwise-equal parameters
  auto pa = model.parameters();
  auto pb = model2.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i].second.data(), pb[i].second.data(),
                      sizeof(double) * pa[i].second.size()) == 0);

  save_checkpoint<double>("t_ck2.ckpt", "model", model2.cfg, pb, opt2,
                          Rng::restore(info.rng_seed, info.rng_counter),
                          info.step);
  std::ifstream f1("t_ck1.ckpt", std::ios::binary);
  std::ifstream f2("t_ck2.ckpt", std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint: a flipped byte fails the checksum") {
  auto model = fresh_model(small_cfg(), 15);
  OptimizerState<double> opt;
  opt.init(model.parameters(), OptKind::adam);
  auto params = model.parameters();
  save_checkpoint<double>("t_ck3.ckpt", "model", model.cfg, params, opt,
                          Rng(1), 0);
  std::fstream f("t_ck3.ckpt",
                 std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(64);
  char c;
  f.seekg(64);
  f.get(c);
  f.seekp(64);
  f.put(static_cast<char>(c ^ 0x40));
  f.close();
  auto params2 = model.parameters();
  CHECK_THROWS_AS(
      load_checkpoint<double>("t_ck3.ckpt", "model", model.cfg, params2, nullptr),
      FormatError);
}

TEST_CASE("checkpoint: wrong config fingerprint is an explicit mismatch") {
  auto model = fresh_model(small_cfg(), 17);
  OptimizerState<double> opt;
  opt.init(model.parameters(), OptKind::adam);
  auto params = model.parameters();
  save_checkpoint<double>("t_ck4.ckpt", "model", model.cfg, params, opt,
                          Rng(1), 0);
  ModelConfig other = small_cfg();
  other.layers = 3;
  auto model2 = fresh_model(other, 18);
  auto params2 = model2.parameters();
  try {
    load_checkpoint<double>("t_ck4.ckpt", "model", other, params2, nullptr);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("fingerprint") != std::string::npos);
  }
}

TEST_CASE("resumed training reproduces the uninterrupted run exactly") {
  Dataset ds = stripes(48, 20);
  Dataset train = ds.slice(0, 40), ev = ds.slice(40, 48);
  TrainConfig cfg;
  cfg.steps = 24;
  cfg.batch = 8;
  cfg.seed = 77;
  cfg.eval_every = 2;

  // uninterrupted
  auto full = fresh_model(small_cfg(), 21);
  OptimizerState<double> opt_full;
  auto hist_full = fit(full, train, ev, cfg, &opt_full);

  // interrupted at step 12
  auto part = fresh_model(small_cfg(), 21);
  OptimizerState<double> opt_part;
  TrainConfig half = cfg;
  half.steps = 12;
  auto hist_a = fit(part, train, ev, half, &opt_part);
  auto params = part.parameters();
  save_checkpoint<double>("t_resume.ckpt", "model", part.cfg, params, opt_part,
                          Rng(cfg.seed), 12);

  // fresh process: rebuild from the checkpoint, continue to 24
  CheckpointInfo info = peek_checkpoint("t_resume.ckpt");
  GatedPixelCNN<double> resumed(info.cfg);
  Rng dummy(0);
  resumed.init(dummy);
  OptimizerState<double> opt_res;
  auto p_res = resumed.parameters();
  load_checkpoint<double>("t_resume.ckpt", "model", resumed.cfg, p_res, &opt_res);
  auto hist_b =
      fit(resumed, train, ev, cfg, &opt_res, static_cast<long>(info.step));

  std::vector<HistoryEntry> joined = hist_a;
  joined.insert(joined.end(), hist_b.begin(), hist_b.end());
  REQUIRE(joined.size() == hist_full.size());
  for (std::size_t i = 0; i < joined.size(); ++i) {
    CHECK(joined[i].step == hist_full[i].step);
    CHECK(joined[i].train_bits == hist_full[i].train_bits);
    CHECK(joined[i].eval_bits == hist_full[i].eval_bits);
  }
  // final parameters bitwise identical
  auto pa = full.parameters();
  auto pb = resumed.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i].second.data(), pb[i].second.data(),
                      sizeof(double) * pa[i].second.size()) == 0);
}

TEST_CASE("conditional fit consumes labels as one-hot global conditioning") {
  ModelConfig cfg = small_cfg();
  cfg.cond_mode = CondMode::global;
  cfg.embed_dim = 2;
  auto model = fresh_model(cfg, 23);
  Dataset ds = stripes(32, 24);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 8;
  tc.eval_every = 3;
  auto hist = fit(model, ds.slice(0, 24), ds.slice(24, 32), tc);
  CHECK(hist.size() == 2);
  Dataset unlabeled = ds.slice(0, 24);
  unlabeled.labels.clear();
  CHECK_THROWS_AS(fit(model, unlabeled, ds.slice(24, 32), tc), ShapeError);
}

TEST_CASE("autoencoder training runs and reports bits") {
  ModelConfig cfg = small_cfg();
  cfg.bottleneck = 4;
  PixelCNNAutoencoder<double> ae(cfg);
  Rng rng(25);
  ae.init(rng);
  Dataset ds = stripes(24, 26);
  TrainConfig tc;
  tc.steps = 4;
  tc.batch = 8;
  tc.eval_every = 2;
  auto hist = fit(ae, ds.slice(0, 16), ds.slice(16, 24), tc);
  CHECK(hist.size() == 2);
  CHECK(hist.back().eval_bits > 0.0);
}

TEST_CASE("batch schedule covers the dataset and is resume-stable") {
  // one epoch = floor(N/batch) steps; indices within an epoch are disjoint
  std::vector<bool> seen(20, false);
  for (long t = 0; t < 5; ++t)
    for (Index i : pixelcnn::detail::batch_indices(20, 4, 42, t)) {
      CHECK(!seen[static_cast<std::size_t>(i)]);
      seen[static_cast<std::size_t>(i)] = true;
    }
  CHECK(std::count(seen.begin(), seen.end(), true) == 20);
  // a given step's batch does not depend on history
  auto a = pixelcnn::detail::batch_indices(20, 4, 42, 13);
  auto b = pixelcnn::detail::batch_indices(20, 4, 42, 13);
  CHECK(a == b);
  CHECK_THROWS_AS(pixelcnn::detail::batch_indices(4, 8, 1, 0), ShapeError);
}
