#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "pixelcnn/model.hpp"
#include "pixelcnn/png_io.hpp"
#include "pixelcnn/train.hpp"

using namespace pixelcnn;

namespace {

std::string cli_binary() {
  const char* env = std::getenv("PIXELCNN_BIN");
  REQUIRE_MESSAGE(env != nullptr, "PIXELCNN_BIN not set");
  return env;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = cli_binary() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST_CASE("eval on a uniform-logit checkpoint prints 8.0000 bits at L=256") {
  // zero weights => uniform predictive distribution
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.features = 8;
  cfg.filter = 3;
  cfg.levels = 256;
  cfg.height = cfg.width = 6;
  GatedPixelCNN<float> model(cfg);
  Rng rng(1);
  model.init(rng);
  for (auto& [name, t] : model.parameters()) t.values().setZero();
  OptimizerState<float> opt;
  auto params = model.parameters();
  save_checkpoint<float>("cli_uniform.ckpt", "model", cfg, params, opt, Rng(1), 0);

  RunResult r = run("eval --checkpoint cli_uniform.ckpt --dataset stripes "
                    "--split test --synth-count 64");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("bits_per_dim: 8.0000") != std::string::npos);
}

TEST_CASE("diagnose causality on the default preset prints zero violations") {
  RunResult r = run("diagnose causality --dims 6x6 --depth 3 --trials 2");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("violations: 0") != std::string::npos);
}

TEST_CASE("sample writes a PNG whose pixel dims match the tiling formula") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.features = 8;
  cfg.filter = 3;
  cfg.levels = 4;
  cfg.height = 5;
  cfg.width = 7;
  GatedPixelCNN<float> model(cfg);
  Rng rng(2);
  model.init(rng);
  OptimizerState<float> opt;
  auto params = model.parameters();
  save_checkpoint<float>("cli_sample.ckpt", "model", cfg, params, opt, Rng(1), 0);

  RunResult r = run("--seed 9 --out cli_out sample --checkpoint "
                    "cli_sample.ckpt --count 16 --grid 4");
  CHECK(r.exit_code == 0);
  Image8 png = read_png("cli_out/samples.png");
  CHECK(png.width == 4 * 7 + 3);   // 4 columns, 1px separators
  CHECK(png.height == 4 * 5 + 3);  // 4 rows
}

TEST_CASE("train then sample round-trips through the checkpoint") {
  RunResult t = run("--seed 4 --out cli_train train --dataset stripes "
                    "--synth-count 128 --features 8 --layers 2 --filter 3 "
                    "--height 6 --width 6 --steps 10 --batch 8 --eval-every 5");
  CHECK(t.exit_code == 0);
  CHECK(t.output.find("bits_per_dim:") != std::string::npos);
  CHECK(t.output.find("wrote cli_train/model.ckpt") != std::string::npos);
  std::ifstream csv("cli_train/history.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,train_bits,eval_bits");

  RunResult s = run("--seed 5 --out cli_train sample --checkpoint "
                    "cli_train/model.ckpt --count 4 --grid 2");
  CHECK(s.exit_code == 0);
}

TEST_CASE("interpolate emits a row of steps images") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.features = 8;
  cfg.filter = 3;
  cfg.levels = 4;
  cfg.height = cfg.width = 5;
  cfg.cond_mode = CondMode::global;
  cfg.embed_dim = 3;
  GatedPixelCNN<float> model(cfg);
  Rng rng(3);
  model.init(rng);
  OptimizerState<float> opt;
  auto params = model.parameters();
  save_checkpoint<float>("cli_interp.ckpt", "model", cfg, params, opt, Rng(1), 0);
  {
    std::ofstream a("cli_a.txt");
    a << "1.0 0.0 0.0\n";
    std::ofstream b("cli_b.txt");
    b << "0.0 0.5 0.5\n";
  }
  RunResult r = run("--seed 6 --out cli_out interpolate --checkpoint "
                    "cli_interp.ckpt --a cli_a.txt --b cli_b.txt --steps 5");
  CHECK(r.exit_code == 0);
  Image8 png = read_png("cli_out/interpolation.png");
  CHECK(png.width == 5 * 5 + 4);
  CHECK(png.height == 5);
}

TEST_CASE("RGB round trip: CIFAR-format data through train, eval and sample") {
  // synthetic CIFAR binary batch: 48 records of label + 3 color planes
  {
    std::ofstream f("data_batch_1.bin", std::ios::binary);
    Rng rng(31);
    for (int rec = 0; rec < 48; ++rec) {
      f.put(static_cast<char>(rec % 10));
      for (int i = 0; i < 3072; ++i)
        f.put(static_cast<char>(rng.below(256)));
    }
  }
  {
    std::ofstream f("test_batch.bin", std::ios::binary);
    Rng rng(32);
    for (int rec = 0; rec < 16; ++rec) {
      f.put(static_cast<char>(rec % 10));
      for (int i = 0; i < 3072; ++i)
        f.put(static_cast<char>(rng.below(256)));
    }
  }
  RunResult t = run("--seed 13 --out cli_rgb train --dataset cifar "
                    "--data-dir . --height 32 --width 32 --channels 3 "
                    "--levels 4 --features 6 --layers 1 --filter 3 "
                    "--steps 4 --batch 4 --eval-every 2");
  CHECK(t.exit_code == 0);
  CHECK(t.output.find("bits_per_dim:") != std::string::npos);
  RunResult e = run("eval --checkpoint cli_rgb/model.ckpt --dataset cifar "
                    "--data-dir . --split test");
  CHECK(e.exit_code == 0);
  RunResult s = run("--seed 14 --out cli_rgb sample --checkpoint "
                    "cli_rgb/model.ckpt --count 2 --grid 2");
  CHECK(s.exit_code == 0);
  Image8 png = read_png("cli_rgb/samples.png");
  CHECK(png.channels == 3);
  CHECK(png.width == 2 * 32 + 1);
  CHECK(png.height == 32);
}

TEST_CASE("unknown flags and missing files yield nonzero exits with messages") {
  RunResult bad = run("eval --no-such-flag");
  CHECK(bad.exit_code != 0);
  RunResult missing = run("eval --checkpoint does_not_exist.ckpt "
                          "--dataset stripes");
  CHECK(missing.exit_code != 0);
  CHECK(missing.output.find("error:") != std::string::npos);
  RunResult nosub = run("");
  CHECK(nosub.exit_code != 0);
}

TEST_CASE("config file supplies defaults, flags override") {
  {
    std::ofstream f("cli_cfg.txt");
    f << "seed=11\nout=cli_cfg_out\n";
  }
  RunResult r = run("--config cli_cfg.txt diagnose causality --dims 5x5 "
                    "--depth 2 --trials 1");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("violations: 0") != std::string::npos);
}
