#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pixelcnn/data.hpp"
#include "pixelcnn/model.hpp"

namespace pixelcnn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

enum class OptKind { adam, sgd_momentum };

struct TrainConfig {
  OptKind optimizer = OptKind::adam;
  double lr = 1e-3;  // desk default; the source architecture names no optimizer
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double momentum = 0.9;
  int batch = 16;
  long steps = 1000;
  std::uint64_t seed = 1;
  long eval_every = 100;
  double clip_norm = 0.0;  // 0 = off; 256-way softmax heads can spike early
  std::string checkpoint_dir;
  long checkpoint_every = 0;

  void validate() const {
    if (lr < 0 || batch < 1 || steps < 0 || eval_every < 1)
      throw ShapeError("train config: rates and sizes must be positive");
  }
};

template <class S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

/// Per-parameter moment buffers plus the shared update counter.
template <class S>
struct OptimizerState {
  OptKind kind = OptKind::adam;
  long step = 0;
  std::vector<ArrayX<S>> m, v;

  void init(const ParamList<S>& params, OptKind k) {
    kind = k;
    step = 0;
    m.clear();
    v.clear();
    for (const auto& [name, t] : params) {
      m.push_back(ArrayX<S>::Zero(t.size()));
      if (kind == OptKind::adam) v.push_back(ArrayX<S>::Zero(t.size()));
    }
  }
};

namespace detail {

template <class S>
void apply_update(ParamList<S>& params, OptimizerState<S>& opt,
                  const TrainConfig& cfg) {
  if (opt.m.size() != params.size())
    throw ShapeError("optimizer state does not mirror the parameter list");
  S clip_scale = S(1);
  if (cfg.clip_norm > 0) {
    S sq = 0;
    for (auto& [name, t] : params)
      if (t.has_grad()) sq += t.grad().square().sum();
    const S norm = std::sqrt(sq);
    if (norm > S(cfg.clip_norm)) clip_scale = S(cfg.clip_norm) / norm;
  }
  ++opt.step;
  const S lr = S(cfg.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& t = params[i].second;
    if (!t.has_grad()) continue;
    ArrayX<S> g = t.grad() * clip_scale;
    if (opt.kind == OptKind::adam) {
      const S b1 = S(cfg.beta1), b2 = S(cfg.beta2);
      opt.m[i] = b1 * opt.m[i] + (S(1) - b1) * g;
      opt.v[i] = b2 * opt.v[i] + (S(1) - b2) * g.square();
      const S c1 = S(1) - std::pow(b1, S(opt.step));
      const S c2 = S(1) - std::pow(b2, S(opt.step));
      t.values() -=
          lr * (opt.m[i] / c1) / ((opt.v[i] / c2).sqrt() + S(cfg.eps));
    } else {
      opt.m[i] = S(cfg.momentum) * opt.m[i] + g;
      t.values() -= lr * opt.m[i];
    }
  }
}

template <class S>
double step_with(ParamList<S>& params, const std::function<Tensor<S>()>& loss_fn,
                 OptimizerState<S>& opt, const TrainConfig& cfg) {
  for (auto& [name, t] : params) t.zero_grad();
  Tape<S> tape;
  double bits = 0;
  try {
    typename Tape<S>::Scope scope(tape);
    Tensor<S> loss = loss_fn();
    bits = static_cast<double>(loss.values()(0));
    tape.backward(loss);
  } catch (const NumericError& e) {
    S pn = 0;
    for (auto& [name, t] : params) pn += t.values().square().sum();
    throw NumericError(std::string(e.what()) + " (step " +
                       std::to_string(opt.step + 1) + ", parameter norm " +
                       std::to_string(std::sqrt(double(pn))) + ")");
  }
  apply_update(params, opt, cfg);
  return bits;
}

/// Batch schedule: a pure function of (seed, step), so a resumed run draws
/// exactly the batches the uninterrupted one would. Each epoch shuffles
/// the index space with a stream forked from the seed.
inline std::vector<Index> batch_indices(Index dataset_size, int batch,
                                        std::uint64_t seed, long step) {
  if (batch > dataset_size)
    throw ShapeError("batch size exceeds the dataset");
  const long per_epoch = dataset_size / batch;
  const long epoch = step / per_epoch;
  const Index pos = static_cast<Index>(step % per_epoch) * batch;
  std::vector<Index> perm(static_cast<std::size_t>(dataset_size));
  for (Index i = 0; i < dataset_size; ++i)
    perm[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng(seed).fork(1 + static_cast<std::uint64_t>(epoch));
  for (Index i = dataset_size - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(i + 1))]);
  return {perm.begin() + pos, perm.begin() + pos + batch};
}

}  // namespace detail

/// Conditioning for a batch under the model's configured mode: one-hot
/// class labels or the dataset's per-image embedding rows feed the
/// global-bias path.
template <class S>
Conditioning<S> batch_conditioning(const GatedPixelCNN<S>& model,
                                   const Dataset& ds,
                                   const std::vector<Index>& idx) {
  if (model.cfg.cond_mode == CondMode::none) return Conditioning<S>::none();
  Conditioning<S> cond;
  cond.mode = model.cfg.cond_mode;
  if (ds.embedding_dim > 0) {
    if (ds.embedding_dim != model.cfg.embed_dim)
      throw ShapeError("dataset embeddings have dim " +
                       std::to_string(ds.embedding_dim) + ", model wants " +
                       std::to_string(model.cfg.embed_dim));
    cond.h = Tensor<S>(Shape{static_cast<Index>(idx.size()), ds.embedding_dim});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (Index d = 0; d < ds.embedding_dim; ++d)
        cond.h.at({static_cast<Index>(i), d}) = static_cast<S>(
            ds.embeddings[static_cast<std::size_t>(idx[i] * ds.embedding_dim + d)]);
    return cond;
  }
  if (ds.labels.empty())
    throw ShapeError("conditional training needs a labeled dataset");
  cond.h = one_hot<S>(ds.label_batch(idx), model.cfg.embed_dim);
  return cond;
}

/// One forward, one backward, one parameter update. Returns the
/// pre-update loss of the batch in bits/dim.
template <class S>
double train_step(GatedPixelCNN<S>& model, const LevelTensor& batch,
                  const Conditioning<S>& cond, OptimizerState<S>& opt,
                  const TrainConfig& cfg) {
  auto params = model.parameters();
  return detail::step_with<S>(
      params,
      [&] { return nll_bits_per_dim(forward_logits(model, batch, cond), batch); },
      opt, cfg);
}

template <class S>
double train_step(PixelCNNAutoencoder<S>& ae, const LevelTensor& batch,
                  OptimizerState<S>& opt, const TrainConfig& cfg) {
  auto params = ae.parameters();
  return detail::step_with<S>(
      params,
      [&] {
        auto out = autoencoder_forward(ae, batch);
        return nll_bits_per_dim(out.logits, batch);
      },
      opt, cfg);
}

/// Mean bits/dim over a dataset, evaluated in read-only batches.
template <class S>
double eval_bits(const GatedPixelCNN<S>& model, const Dataset& ds,
                 int batch = 64) {
  double total = 0;
  Index done = 0;
  while (done < ds.size()) {
    const Index take = std::min<Index>(batch, ds.size() - done);
    std::vector<Index> idx(static_cast<std::size_t>(take));
    for (Index i = 0; i < take; ++i) idx[static_cast<std::size_t>(i)] = done + i;
    LevelTensor b = ds.batch(idx);
    Conditioning<S> cond = batch_conditioning(model, ds, idx);
    total += static_cast<double>(
                 nll_bits_per_dim(forward_logits(model, b, cond), b).values()(0)) *
             static_cast<double>(take);
    done += take;
  }
  return total / static_cast<double>(ds.size());
}

template <class S>
double eval_bits(const PixelCNNAutoencoder<S>& ae, const Dataset& ds,
                 int batch = 64) {
  double total = 0;
  Index done = 0;
  while (done < ds.size()) {
    const Index take = std::min<Index>(batch, ds.size() - done);
    std::vector<Index> idx(static_cast<std::size_t>(take));
    for (Index i = 0; i < take; ++i) idx[static_cast<std::size_t>(i)] = done + i;
    LevelTensor b = ds.batch(idx);
    auto out = autoencoder_forward(ae, b);
    total += static_cast<double>(nll_bits_per_dim(out.logits, b).values()(0)) *
             static_cast<double>(take);
    done += take;
  }
  return total / static_cast<double>(ds.size());
}

struct HistoryEntry {
  long step = 0;
  double train_bits = 0;
  double eval_bits = 0;
};

// checkpoint format, declared early so fit() can save at cadence
template <class S>
void save_checkpoint(const std::string& path, const std::string& kind,
                     const ModelConfig& cfg, const ParamList<S>& params,
                     const OptimizerState<S>& opt, const Rng& rng,
                     std::uint64_t step);

/// Deterministic training driver: (seed, config, datasets) fully determine
/// the trajectory, including across save/load boundaries. History holds
/// one entry per eval cadence. `start_step` resumes mid-run.
template <class S>
std::vector<HistoryEntry> fit(GatedPixelCNN<S>& model, const Dataset& train,
                              const Dataset& eval, const TrainConfig& cfg,
                              OptimizerState<S>* opt_io = nullptr,
                              long start_step = 0) {
  cfg.validate();
  OptimizerState<S> local;
  OptimizerState<S>& opt = opt_io ? *opt_io : local;
  auto params = model.parameters();
  if (!opt_io || opt.m.empty()) opt.init(params, cfg.optimizer);
  std::vector<HistoryEntry> history;
  Rng master(cfg.seed);
  for (long t = start_step; t < cfg.steps; ++t) {
    const std::vector<Index> idx =
        detail::batch_indices(train.size(), cfg.batch, cfg.seed, t);
    LevelTensor batch = train.batch(idx);
    Conditioning<S> cond = batch_conditioning(model, train, idx);
    const double bits = train_step(model, batch, cond, opt, cfg);
    const long done = t + 1;
    if (done % cfg.eval_every == 0)
      history.push_back({done, bits, eval_bits(model, eval)});
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (done % cfg.checkpoint_every == 0 || done == cfg.steps))
      save_checkpoint<S>(cfg.checkpoint_dir + "/step_" + std::to_string(done) +
                             ".ckpt",
                         "model", model.cfg, params, opt, master,
                         static_cast<std::uint64_t>(done));
  }
  return history;
}

template <class S>
std::vector<HistoryEntry> fit(PixelCNNAutoencoder<S>& ae, const Dataset& train,
                              const Dataset& eval, const TrainConfig& cfg,
                              OptimizerState<S>* opt_io = nullptr,
                              long start_step = 0) {
  cfg.validate();
  OptimizerState<S> local;
  OptimizerState<S>& opt = opt_io ? *opt_io : local;
  auto params = ae.parameters();
  if (!opt_io || opt.m.empty()) opt.init(params, cfg.optimizer);
  std::vector<HistoryEntry> history;
  for (long t = start_step; t < cfg.steps; ++t) {
    const std::vector<Index> idx =
        detail::batch_indices(train.size(), cfg.batch, cfg.seed, t);
    LevelTensor batch = train.batch(idx);
    const double bits = train_step(ae, batch, opt, cfg);
    const long done = t + 1;
    if (done % cfg.eval_every == 0)
      history.push_back({done, bits, eval_bits(ae, eval)});
  }
  return history;
}

// ---------------------------------------------------------------------------
// checkpoints: versioned header, named parameter blocks, CRC32 trailer
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::size_t n = out.size();
  out.resize(n + 4);
  std::memcpy(out.data() + n, &v, 4);
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  const std::size_t n = out.size();
  out.resize(n + 8);
  std::memcpy(out.data() + n, &v, 8);
}
inline void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}
inline void put_raw(std::vector<std::uint8_t>& out, const void* p,
                    std::size_t bytes) {
  const std::size_t n = out.size();
  out.resize(n + bytes);
  std::memcpy(out.data() + n, p, bytes);
}

struct ByteReader {
  const std::uint8_t* p;
  const std::uint8_t* end;
  std::string path;
  void need(std::size_t n) const {
    if (p + n > end) throw FormatError(path + ": checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }
  void raw(void* dst, std::size_t bytes) {
    need(bytes);
    std::memcpy(dst, p, bytes);
    p += bytes;
  }
};

// CRC32 without pulling zlib into the header-only core.
inline std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

constexpr char kCkptMagic[4] = {'P', 'X', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace detail

struct CheckpointInfo {
  std::string kind;  // "model" or "autoencoder"
  ModelConfig cfg;
  std::uint64_t step = 0;
  std::uint64_t rng_seed = 0, rng_counter = 0;
  int scalar_bits = 64;
  std::uint64_t fingerprint = 0;
};

inline std::uint64_t config_fingerprint(const std::string& kind,
                                        const ModelConfig& cfg) {
  return fnv1a(kind + "\n" + cfg.canonical());
}

template <class S>
void save_checkpoint(const std::string& path, const std::string& kind,
                     const ModelConfig& cfg, const ParamList<S>& params,
                     const OptimizerState<S>& opt, const Rng& rng,
                     std::uint64_t step) {
  std::vector<std::uint8_t> out(detail::kCkptMagic, detail::kCkptMagic + 4);
  detail::put_u32(out, detail::kCkptVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(sizeof(S) * 8));
  detail::put_u64(out, step);
  detail::put_u64(out, rng.seed());
  detail::put_u64(out, rng.counter());
  detail::put_u64(out, config_fingerprint(kind, cfg));
  detail::put_str(out, kind);
  detail::put_str(out, cfg.canonical());
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      detail::put_u64(out, static_cast<std::uint64_t>(t.dim(d)));
    detail::put_raw(out, t.data(), sizeof(S) * static_cast<std::size_t>(t.size()));
  }
  const bool has_opt = !opt.m.empty();
  out.push_back(has_opt ? 1 : 0);
  if (has_opt) {
    if (opt.m.size() != params.size())
      throw ShapeError("save_checkpoint: optimizer does not mirror parameters");
    out.push_back(opt.kind == OptKind::adam ? 0 : 1);
    detail::put_u64(out, static_cast<std::uint64_t>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::put_raw(out, opt.m[i].data(),
                      sizeof(S) * static_cast<std::size_t>(opt.m[i].size()));
      if (opt.kind == OptKind::adam)
        detail::put_raw(out, opt.v[i].data(),
                        sizeof(S) * static_cast<std::size_t>(opt.v[i].size()));
    }
  }
  detail::put_u32(out, detail::crc32_bytes(out.data() + 4, out.size() - 4));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError(path + ": write failed");
}

namespace detail {

inline std::vector<std::uint8_t> read_checkpoint_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12 ||
      std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw FormatError(path + ": not a checkpoint file");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != crc32_bytes(bytes.data() + 4, bytes.size() - 8))
    throw FormatError(path + ": checksum mismatch (corrupted checkpoint)");
  return bytes;
}

}  // namespace detail

/// Header only: enough to rebuild the model before loading parameters.
inline CheckpointInfo peek_checkpoint(const std::string& path) {
  const auto bytes = detail::read_checkpoint_bytes(path);
  detail::ByteReader r{bytes.data() + 4, bytes.data() + bytes.size() - 4, path};
  const std::uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  CheckpointInfo info;
  info.scalar_bits = static_cast<int>(r.u32());
  info.step = r.u64();
  info.rng_seed = r.u64();
  info.rng_counter = r.u64();
  info.fingerprint = r.u64();
  info.kind = r.str();
  info.cfg = parse_model_config(r.str());
  return info;
}

/// Fills `params` (typically model.parameters() of a freshly built model)
/// and, when present and requested, the optimizer state. The stored
/// fingerprint must match the receiving configuration.
template <class S>
CheckpointInfo load_checkpoint(const std::string& path, const std::string& kind,
                               const ModelConfig& cfg, ParamList<S>& params,
                               OptimizerState<S>* opt = nullptr) {
  const auto bytes = detail::read_checkpoint_bytes(path);
  detail::ByteReader r{bytes.data() + 4, bytes.data() + bytes.size() - 4, path};
  const std::uint32_t version = r.u32();
  if (version != detail::kCkptVersion)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  CheckpointInfo info;
  info.scalar_bits = static_cast<int>(r.u32());
  if (info.scalar_bits != static_cast<int>(sizeof(S) * 8))
    throw FormatError(path + ": checkpoint stores " +
                      std::to_string(info.scalar_bits) +
                      "-bit values, loader expects " +
                      std::to_string(sizeof(S) * 8) + "-bit");
  info.step = r.u64();
  info.rng_seed = r.u64();
  info.rng_counter = r.u64();
  info.fingerprint = r.u64();
  info.kind = r.str();
  info.cfg = parse_model_config(r.str());
  if (info.fingerprint != config_fingerprint(kind, cfg))
    throw FormatError(path + ": config fingerprint mismatch (checkpoint " +
                      info.kind + " does not match the receiving model)");
  const std::uint32_t n = r.u32();
  if (n != params.size())
    throw FormatError(path + ": parameter count mismatch");
  for (auto& [name, t] : params) {
    const std::string stored_name = r.str();
    if (stored_name != name)
      throw FormatError(path + ": parameter order mismatch at '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (static_cast<int>(rank) != t.rank())
      throw FormatError(path + ": rank mismatch for '" + name + "'");
    for (std::uint32_t d = 0; d < rank; ++d)
      if (r.u64() != static_cast<std::uint64_t>(t.dim(static_cast<int>(d))))
        throw FormatError(path + ": shape mismatch for '" + name + "'");
    r.raw(t.data(), sizeof(S) * static_cast<std::size_t>(t.size()));
  }
  r.need(1);
  const bool has_opt = *r.p++ != 0;
  if (has_opt) {
    r.need(1);
    const OptKind k = *r.p++ == 0 ? OptKind::adam : OptKind::sgd_momentum;
    const std::uint64_t ostep = r.u64();
    if (opt) {
      opt->init(params, k);
      opt->step = static_cast<long>(ostep);
      for (std::size_t i = 0; i < params.size(); ++i) {
        r.raw(opt->m[i].data(),
              sizeof(S) * static_cast<std::size_t>(opt->m[i].size()));
        if (k == OptKind::adam)
          r.raw(opt->v[i].data(),
                sizeof(S) * static_cast<std::size_t>(opt->v[i].size()));
      }
    }
  }
  return info;
}

}  // namespace pixelcnn
