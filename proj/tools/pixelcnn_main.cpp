// Command-line front end: train, sample, eval, diagnose, autoencode,
// interpolate. All randomness sits behind --seed; outputs are files under
// --out plus metrics on stdout.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pixelcnn/data.hpp"
#include "pixelcnn/diagnostics.hpp"
#include "pixelcnn/model.hpp"
#include "pixelcnn/png_io.hpp"
#include "pixelcnn/sampler.hpp"
#include "pixelcnn/train.hpp"

namespace fs = std::filesystem;
using namespace pixelcnn;

namespace {

// training and sampling run in 32-bit; diagnostics run in 64-bit
using F = float;

struct ModelFlags {
  std::string preset;
  std::string arch = "two_stack";
  std::string activation = "gated";
  int layers = 0, filter = 0, levels = 0, channels = 0;
  Index features = 0, height = 0, width = 0, head_width = 0;
  Index spatial_channels = 0, bottleneck = 0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--preset", mf.preset,
                  "Named preset: mnist-small, stripes-small, imagenet-paper");
  cmd->add_option("--arch", mf.arch, "two_stack or single_stack");
  cmd->add_option("--activation", mf.activation, "gated, relu or linear");
  cmd->add_option("--layers", mf.layers, "Number of layers K");
  cmd->add_option("--features", mf.features, "Feature width p");
  cmd->add_option("--filter", mf.filter, "Filter size n (odd)");
  cmd->add_option("--levels", mf.levels, "Quantization levels L");
  cmd->add_option("--height", mf.height, "Image height");
  cmd->add_option("--width", mf.width, "Image width");
  cmd->add_option("--channels", mf.channels, "Image channels (1 or 3)");
  cmd->add_option("--head-width", mf.head_width, "Output head width");
  cmd->add_option("--spatial-channels", mf.spatial_channels,
                  "Feature maps of the spatial conditioning map");
  cmd->add_option("--bottleneck", mf.bottleneck, "Autoencoder bottleneck m");
}

ModelConfig resolve_config(const ModelFlags& mf, const std::string& fallback) {
  ModelConfig c = preset(mf.preset.empty() ? fallback : mf.preset);
  apply_config_kv(c, "arch", mf.arch);
  apply_config_kv(c, "activation", mf.activation);
  if (mf.layers > 0) c.layers = mf.layers;
  if (mf.features > 0) c.features = mf.features;
  if (mf.filter > 0) c.filter = mf.filter;
  if (mf.levels > 0) c.levels = mf.levels;
  if (mf.height > 0) c.height = mf.height;
  if (mf.width > 0) c.width = mf.width;
  if (mf.channels > 0) c.channels = mf.channels;
  if (mf.head_width > 0) c.head_width = mf.head_width;
  if (mf.spatial_channels > 0) c.spatial_channels = mf.spatial_channels;
  if (mf.bottleneck > 0) c.bottleneck = mf.bottleneck;
  return c;
}

struct DataFlags {
  std::string dataset = "stripes";
  std::string data_dir = "data";
  std::string split = "train";
  Index synth_count = 2048;
};

void add_data_flags(CLI::App* cmd, DataFlags& df, bool with_split) {
  cmd->add_option("--dataset", df.dataset, "mnist, stripes, brightness or cifar");
  cmd->add_option("--data-dir", df.data_dir,
                  "Directory with IDX / CIFAR binary files");
  if (with_split)
    cmd->add_option("--split", df.split, "train or test");
  cmd->add_option("--synth-count", df.synth_count,
                  "Images to generate for synthetic corpora");
}

Dataset concat(Dataset a, const Dataset& b) {
  if (a.size() == 0) return b;
  LevelTensor merged(Shape{a.size() + b.size(), a.images.dim(1),
                           a.images.dim(2), a.images.dim(3)});
  merged.values().segment(0, a.images.size()) = a.images.values();
  merged.values().segment(a.images.size(), b.images.size()) = b.images.values();
  a.images = merged;
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  return a;
}

Dataset load_named(const DataFlags& df, int levels, Index h, Index w,
                   std::uint64_t seed) {
  const bool test = df.split == "test";
  if (df.dataset == "mnist") {
    const std::string img =
        df.data_dir + (test ? "/t10k-images-idx3-ubyte" : "/train-images-idx3-ubyte");
    const std::string lbl =
        df.data_dir + (test ? "/t10k-labels-idx1-ubyte" : "/train-labels-idx1-ubyte");
    return load_idx_dataset(img, lbl, levels);
  }
  if (df.dataset == "stripes" || df.dataset == "brightness") {
    const SyntheticKind kind = df.dataset == "stripes"
                                   ? SyntheticKind::stripes_hv
                                   : SyntheticKind::brightness_2class;
    const Index n = test ? std::max<Index>(df.synth_count / 4, 64) : df.synth_count;
    return make_synthetic(kind, n, h, w, levels, seed + (test ? 1000003 : 0));
  }
  if (df.dataset == "cifar") {
    if (test) return load_cifar_binary(df.data_dir + "/test_batch.bin", levels);
    Dataset all;
    for (int i = 1; i <= 5; ++i) {
      const std::string path =
          df.data_dir + "/data_batch_" + std::to_string(i) + ".bin";
      if (!fs::exists(path)) continue;
      all = concat(std::move(all), load_cifar_binary(path, levels));
    }
    if (all.size() == 0)
      throw FormatError("no data_batch_*.bin files under " + df.data_dir);
    all.levels = levels;
    all.class_count = 10;
    return all;
  }
  throw ShapeError("unknown dataset '" + df.dataset + "'");
}

void write_history_csv(const std::string& path,
                       const std::vector<HistoryEntry>& hist) {
  std::ofstream f(path);
  f << "step,train_bits,eval_bits\n";
  for (const auto& e : hist)
    f << e.step << ',' << e.train_bits << ',' << e.eval_bits << '\n';
}

GatedPixelCNN<F> load_model_checkpoint(const std::string& path) {
  CheckpointInfo info = peek_checkpoint(path);
  if (info.kind != "model" && info.kind != "autoencoder")
    throw FormatError(path + ": unknown checkpoint kind '" + info.kind + "'");
  GatedPixelCNN<F> model(info.cfg);
  Rng init_rng(0);
  model.init(init_rng);
  if (info.kind == "model") {
    auto params = model.parameters();
    load_checkpoint<F>(path, "model", model.cfg, params);
    return model;
  }
  // autoencoder checkpoints carry encoder + decoder; rebuild both and keep
  // the conditional decoder
  PixelCNNAutoencoder<F> ae(info.cfg);
  Rng r2(0);
  ae.init(r2);
  auto params = ae.parameters();
  load_checkpoint<F>(path, "autoencoder", info.cfg, params);
  return ae.decoder;
}

Tensor<F> embedding_rows(const std::string& path, Index count, Index dim) {
  auto rows = load_embedding_file(path);
  if (static_cast<Index>(rows.front().size()) != dim)
    throw ShapeError(path + ": vectors have dim " +
                     std::to_string(rows.front().size()) + ", model wants " +
                     std::to_string(dim));
  Tensor<F> h(Shape{count, dim});
  for (Index i = 0; i < count; ++i) {
    const auto& row = rows[static_cast<std::size_t>(
        rows.size() == 1 ? 0 : i % static_cast<Index>(rows.size()))];
    for (Index d = 0; d < dim; ++d)
      h.at({i, d}) = static_cast<F>(row[static_cast<std::size_t>(d)]);
  }
  return h;
}

int cmd_train(const ModelFlags& mf, const DataFlags& df,
              const std::string& conditional, const std::string& embedding_file,
              TrainConfig tc, const std::string& out) {
  std::string fallback = df.dataset == "mnist" ? "mnist-small" : "stripes-small";
  ModelConfig cfg = resolve_config(mf, fallback);
  Dataset full = load_named(df, cfg.levels, cfg.height, cfg.width, tc.seed);
  if (full.images.dim(2) != cfg.height || full.images.dim(3) != cfg.width ||
      full.images.dim(1) != cfg.channels)
    throw ShapeError("dataset images are " + shape_str(full.images.shape()) +
                     " but the model expects " + std::to_string(cfg.channels) +
                     "x" + std::to_string(cfg.height) + "x" +
                     std::to_string(cfg.width));

  if (conditional == "class") {
    cfg.cond_mode = CondMode::global;
    cfg.embed_dim = full.class_count;
  } else if (conditional == "embedding") {
    if (embedding_file.empty())
      throw ShapeError("--conditional embedding needs --embedding-file");
    auto rows = load_embedding_file(embedding_file);
    if (static_cast<Index>(rows.size()) < full.size())
      throw ShapeError("embedding file has fewer rows than the dataset");
    full.embedding_dim = static_cast<Index>(rows.front().size());
    full.embeddings.clear();
    for (Index i = 0; i < full.size(); ++i)
      full.embeddings.insert(full.embeddings.end(),
                             rows[static_cast<std::size_t>(i)].begin(),
                             rows[static_cast<std::size_t>(i)].end());
    cfg.cond_mode = CondMode::global;
    cfg.embed_dim = full.embedding_dim;
  } else if (conditional != "none") {
    throw ShapeError("unknown --conditional '" + conditional + "'");
  }

  full = full.shuffled(tc.seed);
  const Index holdout = std::max<Index>(full.size() / 10, 1);
  Dataset train = full.slice(0, full.size() - holdout);
  Dataset eval = full.slice(full.size() - holdout, full.size());

  GatedPixelCNN<F> model(cfg);
  Rng init_rng(tc.seed);
  model.init(init_rng);
  std::printf("parameters: %lld\n",
              static_cast<long long>(actual_param_count(model)));

  fs::create_directories(out);
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = out;
  OptimizerState<F> opt;
  auto hist = fit(model, train, eval, tc, &opt);
  for (const auto& e : hist)
    std::printf("step %ld  train %.4f  eval %.4f\n", e.step, e.train_bits,
                e.eval_bits);
  write_history_csv(out + "/history.csv", hist);

  auto params = model.parameters();
  save_checkpoint<F>(out + "/model.ckpt", "model", cfg, params, opt,
                     Rng(tc.seed), static_cast<std::uint64_t>(tc.steps));
  const double final_bits = eval_bits(model, eval);
  std::printf("bits_per_dim: %.4f\n", final_bits);
  std::printf("wrote %s/model.ckpt\n", out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const DataFlags& df,
             std::uint64_t seed) {
  GatedPixelCNN<F> model = load_model_checkpoint(checkpoint);
  Dataset ds = load_named(df, model.cfg.levels, model.cfg.height,
                          model.cfg.width, seed);
  if (model.cfg.cond_mode != CondMode::none && ds.class_count > 0 &&
      model.cfg.embed_dim != ds.class_count && ds.embedding_dim == 0)
    throw ShapeError("conditional model/dataset mismatch");
  std::printf("bits_per_dim: %.4f\n", eval_bits(model, ds));
  return 0;
}

int cmd_sample(const std::string& checkpoint, Index count, int class_id,
               const std::string& embedding_file, int grid, double temperature,
               std::uint64_t seed, const std::string& out) {
  GatedPixelCNN<F> model = load_model_checkpoint(checkpoint);
  Conditioning<F> cond;
  cond.mode = model.cfg.cond_mode;
  if (cond.mode != CondMode::none) {
    if (!embedding_file.empty()) {
      cond.h = embedding_rows(embedding_file, count, model.cfg.embed_dim);
    } else {
      if (class_id < 0 || class_id >= model.cfg.embed_dim)
        throw ShapeError("--class must be in [0," +
                         std::to_string(model.cfg.embed_dim) + ")");
      cond.h = Tensor<F>(Shape{count, model.cfg.embed_dim});
      for (Index i = 0; i < count; ++i) cond.h.at({i, class_id}) = F(1);
    }
  } else if (class_id >= 0 || !embedding_file.empty()) {
    throw ShapeError("checkpoint is unconditional; --class/--embedding-file "
                     "do not apply");
  }
  Rng rng(seed);
  LevelTensor images = sample(model, count, cond, rng, temperature);
  fs::create_directories(out);
  const int cols = grid > 0 ? grid
                            : static_cast<int>(std::ceil(std::sqrt(
                                  static_cast<double>(count))));
  const std::string path = out + "/samples.png";
  write_png_grid(images, cols, path, model.cfg.levels);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_autoencode(const ModelFlags& mf, const DataFlags& df, TrainConfig tc,
                   Index reconstruct, const std::string& out) {
  ModelConfig cfg = resolve_config(mf, df.dataset == "mnist" ? "mnist-small"
                                                             : "stripes-small");
  if (cfg.bottleneck < 1) cfg.bottleneck = 10;
  Dataset full =
      load_named(df, cfg.levels, cfg.height, cfg.width, tc.seed).shuffled(tc.seed);
  const Index holdout = std::max<Index>(full.size() / 10, 1);
  Dataset train = full.slice(0, full.size() - holdout);
  Dataset eval = full.slice(full.size() - holdout, full.size());

  PixelCNNAutoencoder<F> ae(cfg);
  Rng init_rng(tc.seed);
  ae.init(init_rng);
  OptimizerState<F> opt;
  auto hist = fit(ae, train, eval, tc, &opt);
  for (const auto& e : hist)
    std::printf("step %ld  train %.4f  eval %.4f\n", e.step, e.train_bits,
                e.eval_bits);
  fs::create_directories(out);
  write_history_csv(out + "/history.csv", hist);
  auto params = ae.parameters();
  save_checkpoint<F>(out + "/autoencoder.ckpt", "autoencoder", cfg, params, opt,
                     Rng(tc.seed), static_cast<std::uint64_t>(tc.steps));
  std::printf("bits_per_dim: %.4f\n", eval_bits(ae, eval));
  std::printf("wrote %s/autoencoder.ckpt\n", out.c_str());

  if (reconstruct > 0) {
    const Index n = std::min<Index>(reconstruct, eval.size());
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    LevelTensor originals = eval.batch(idx);
    Tensor<F> h = encode(ae.encoder, originals);
    LevelTensor both(Shape{2 * n, originals.dim(1), originals.dim(2),
                           originals.dim(3)});
    const Index stride = originals.size() / n;
    both.values().segment(0, originals.size()) = originals.values();
    Rng rng(tc.seed + 1);
    for (Index i = 0; i < n; ++i) {
      Conditioning<F> cond;
      cond.mode = CondMode::global;
      cond.h = Tensor<F>(Shape{1, cfg.bottleneck});
      cond.h.values() = h.values().segment(i * cfg.bottleneck, cfg.bottleneck);
      Rng stream = rng.fork(static_cast<std::uint64_t>(i));
      SampleTrace t = sample_one(ae.decoder, cond, stream);
      both.values().segment((n + i) * stride, stride) = t.image.values();
    }
    const std::string path = out + "/reconstructions.png";
    write_png_grid(both, static_cast<int>(n), path, cfg.levels);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_interpolate(const std::string& checkpoint, const std::string& a_path,
                    const std::string& b_path, Index steps, std::uint64_t seed,
                    const std::string& out) {
  GatedPixelCNN<F> model = load_model_checkpoint(checkpoint);
  if (model.cfg.cond_mode == CondMode::none)
    throw ShapeError("checkpoint is unconditional; nothing to interpolate");
  auto ra = load_embedding_file(a_path), rb = load_embedding_file(b_path);
  Tensor<F> h_a(Shape{static_cast<Index>(ra.front().size())});
  Tensor<F> h_b(Shape{static_cast<Index>(rb.front().size())});
  for (Index d = 0; d < h_a.size(); ++d)
    h_a.values()(d) = static_cast<F>(ra.front()[static_cast<std::size_t>(d)]);
  for (Index d = 0; d < h_b.size(); ++d)
    h_b.values()(d) = static_cast<F>(rb.front()[static_cast<std::size_t>(d)]);
  LevelTensor row = sample_interpolation(model, h_a, h_b, steps, seed);
  fs::create_directories(out);
  const std::string path = out + "/interpolation.png";
  write_png_grid(row, static_cast<int>(steps), path, model.cfg.levels);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

struct DiagFlags {
  std::string mode;
  std::string dims = "8x8";
  std::string arch = "two_stack";
  int depth = 4, filter = 3, levels = 4, trials = 5;
  Index features = 8;
  std::string target;
};

std::pair<Index, Index> parse_dims(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos)
    throw ShapeError("--dims must look like HxW, got '" + s + "'");
  return {std::stol(s.substr(0, x)), std::stol(s.substr(x + 1))};
}

int cmd_diagnose(const DiagFlags& dg, std::uint64_t seed) {
  const auto [H, W] = parse_dims(dg.dims);
  const ArchKind arch = dg.arch == "single_stack" ? ArchKind::single_stack
                                                  : ArchKind::two_stack;
  Index ty = H / 2, tx = W / 2;
  if (!dg.target.empty()) {
    auto [y, x] = parse_dims(dg.target);
    ty = y;
    tx = x;
  }
  Rng rng(seed);

  if (dg.mode == "causality") {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.layers = dg.depth;
    cfg.features = dg.features;
    cfg.filter = dg.filter;
    cfg.levels = dg.levels;
    cfg.height = H;
    cfg.width = W;
    GatedPixelCNN<double> model(cfg);
    auto violations = causality_check(model, dg.trials, 0.0, rng);
    std::printf("violations: %zu\n", violations.size());
    for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 10); ++i)
      std::printf("  (%lld,%lld,c%d) -> (%lld,%lld,c%d) delta %.3e\n",
                  static_cast<long long>(violations[i].src_y),
                  static_cast<long long>(violations[i].src_x),
                  violations[i].src_c,
                  static_cast<long long>(violations[i].dst_y),
                  static_cast<long long>(violations[i].dst_x),
                  violations[i].dst_c, violations[i].delta);
    return violations.empty() ? 0 : 2;
  }

  if (dg.mode == "receptive-field" || dg.mode == "blindspot") {
    auto probe = make_linear_probe<double>(arch, dg.depth, dg.filter, H, W);
    DependencyMap map = receptive_field_map(probe, ty, tx);
    auto oracle = blind_spot_oracle(arch, dg.depth, dg.filter, H, W, ty, tx);
    const bool match = map.influenced == oracle;
    if (dg.mode == "receptive-field") {
      long n = 0;
      for (Index y = 0; y < H; ++y) {
        std::string line;
        for (Index x = 0; x < W; ++x) {
          const bool in = map.at(y, x);
          n += in;
          line += (y == ty && x == tx) ? 'T' : (in ? '#' : '.');
        }
        std::printf("%s\n", line.c_str());
      }
      std::printf("influenced: %ld\n", n);
    }
    std::printf("missing_fraction: %.4f\n",
                missing_fraction(oracle, H, W, ty, tx));
    std::printf("map_matches_oracle: %s\n", match ? "yes" : "no");
    return match ? 0 : 2;
  }

  if (dg.mode == "gradients") {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.layers = dg.depth;
    cfg.features = dg.features;
    cfg.filter = dg.filter;
    cfg.levels = dg.levels;
    cfg.height = H;
    cfg.width = W;
    GatedPixelCNN<double> model(cfg);
    model.init(rng);
    const double err = gradient_audit(model, 100, 1e-5, rng);
    std::printf("max_rel_err: %.3e\n", err);
    ModelConfig lin = cfg;
    lin.activation = Activation::linear;
    GatedPixelCNN<double> lmodel(lin);
    lmodel.init(rng);
    const double lerr = gradient_audit(lmodel, 100, 1e-2, rng, true);
    std::printf("linear_max_rel_err: %.3e\n", lerr);
    return err <= 1e-4 && lerr <= 1e-8 ? 0 : 2;
  }

  throw ShapeError("unknown diagnose mode '" + dg.mode +
                   "' (causality, receptive-field, blindspot, gradients)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated PixelCNN: autoregressive image modeling engine"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Config file, one key=value per line; flags override it");

  std::uint64_t seed = 1;
  std::string out = "out";
  app.add_option("--seed", seed, "Master random seed")->configurable(true);
  app.add_option("--out", out, "Output directory")->configurable(true);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  ModelFlags tr_mf;
  DataFlags tr_df;
  add_model_flags(train_cmd, tr_mf);
  add_data_flags(train_cmd, tr_df, false);
  std::string tr_conditional = "none", tr_embedding_file;
  TrainConfig tr_tc;
  train_cmd->add_option("--conditional", tr_conditional,
                        "none, class or embedding");
  train_cmd->add_option("--embedding-file", tr_embedding_file,
                        "Per-image embedding vectors, one per line");
  train_cmd->add_option("--steps", tr_tc.steps, "Optimization steps");
  train_cmd->add_option("--batch", tr_tc.batch, "Batch size");
  train_cmd->add_option("--lr", tr_tc.lr, "Learning rate");
  train_cmd->add_option("--eval-every", tr_tc.eval_every, "Eval cadence");
  train_cmd->add_option("--clip-norm", tr_tc.clip_norm,
                        "Global gradient-norm clip (0 = off)");
  train_cmd->add_option("--checkpoint-every", tr_tc.checkpoint_every,
                        "Checkpoint cadence in steps (0 = final only)");
  std::string tr_opt = "adam";
  train_cmd->add_option("--optimizer", tr_opt, "adam or sgd_momentum");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_checkpoint;
  DataFlags ev_df;
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "Checkpoint path")
      ->required();
  add_data_flags(eval_cmd, ev_df, true);

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Draw images");
  std::string sm_checkpoint, sm_embedding_file;
  Index sm_count = 16;
  int sm_class = -1, sm_grid = 0;
  double sm_temperature = 1.0;
  sample_cmd->add_option("--checkpoint", sm_checkpoint, "Checkpoint path")
      ->required();
  sample_cmd->add_option("--count", sm_count, "Number of images");
  sample_cmd->add_option("--class", sm_class, "Class id for one-hot h");
  sample_cmd->add_option("--embedding-file", sm_embedding_file,
                         "Conditioning vectors, one per line");
  sample_cmd->add_option("--grid", sm_grid, "Grid columns (default: square)");
  sample_cmd->add_option("--temperature", sm_temperature,
                         "Softmax temperature (0 = argmax)");

  // diagnose
  auto* diag_cmd = app.add_subcommand(
      "diagnose", "Architecture verification: causality, receptive-field, "
                  "blindspot, gradients");
  DiagFlags dg;
  diag_cmd->add_option("mode", dg.mode, "causality | receptive-field | "
                                        "blindspot | gradients")
      ->required();
  diag_cmd->add_option("--dims", dg.dims, "Image dims HxW");
  diag_cmd->add_option("--arch", dg.arch, "two_stack or single_stack");
  diag_cmd->add_option("--depth", dg.depth, "Layers K");
  diag_cmd->add_option("--filter", dg.filter, "Filter size n");
  diag_cmd->add_option("--levels", dg.levels, "Quantization levels");
  diag_cmd->add_option("--trials", dg.trials, "Random weight draws");
  diag_cmd->add_option("--features", dg.features, "Feature width p");
  diag_cmd->add_option("--target", dg.target, "Target pixel YxX (default center)");

  // autoencode
  auto* ae_cmd = app.add_subcommand("autoencode",
                                    "Train the PixelCNN autoencoder");
  ModelFlags ae_mf;
  DataFlags ae_df;
  add_model_flags(ae_cmd, ae_mf);
  add_data_flags(ae_cmd, ae_df, false);
  TrainConfig ae_tc;
  Index ae_reconstruct = 0;
  ae_cmd->add_option("--steps", ae_tc.steps, "Optimization steps");
  ae_cmd->add_option("--batch", ae_tc.batch, "Batch size");
  ae_cmd->add_option("--lr", ae_tc.lr, "Learning rate");
  ae_cmd->add_option("--eval-every", ae_tc.eval_every, "Eval cadence");
  ae_cmd->add_option("--reconstruct", ae_reconstruct,
                     "Also write a grid of originals over conditional samples");

  // interpolate
  auto* it_cmd = app.add_subcommand("interpolate",
                                    "Decode a row along an embedding path");
  std::string it_checkpoint, it_a, it_b;
  Index it_steps = 6;
  it_cmd->add_option("--checkpoint", it_checkpoint, "Checkpoint path")
      ->required();
  it_cmd->add_option("--a", it_a, "Embedding file for the left endpoint")
      ->required();
  it_cmd->add_option("--b", it_b, "Embedding file for the right endpoint")
      ->required();
  it_cmd->add_option("--steps", it_steps, "Images in the row (>= 2)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      tr_tc.seed = seed;
      tr_tc.optimizer =
          tr_opt == "sgd_momentum" ? OptKind::sgd_momentum : OptKind::adam;
      return cmd_train(tr_mf, tr_df, tr_conditional, tr_embedding_file, tr_tc,
                       out);
    }
    if (*eval_cmd) return cmd_eval(ev_checkpoint, ev_df, seed);
    if (*sample_cmd)
      return cmd_sample(sm_checkpoint, sm_count, sm_class, sm_embedding_file,
                        sm_grid, sm_temperature, seed, out);
    if (*diag_cmd) return cmd_diagnose(dg, seed);
    if (*ae_cmd) {
      ae_tc.seed = seed;
      return cmd_autoencode(ae_mf, ae_df, ae_tc, ae_reconstruct, out);
    }
    if (*it_cmd)
      return cmd_interpolate(it_checkpoint, it_a, it_b, it_steps, seed, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
