#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pixelcnn/layers.hpp"

namespace pixelcnn {

enum class ArchKind { two_stack, single_stack };

inline const char* to_string(ArchKind a) {
  return a == ArchKind::two_stack ? "two_stack" : "single_stack";
}
inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::gated: return "gated";
    case Activation::relu: return "relu";
    default: return "linear";
  }
}
inline const char* to_string(CondMode m) {
  switch (m) {
    case CondMode::none: return "none";
    case CondMode::global: return "global";
    default: return "spatial";
  }
}

struct ModelConfig {
  int layers = 6;       // K
  Index features = 32;  // p
  int filter = 5;       // n, odd
  int levels = 4;       // L
  Index height = 14, width = 14;
  int channels = 1;  // C, 1 or 3
  Activation activation = Activation::gated;
  ArchKind arch = ArchKind::two_stack;
  CondMode cond_mode = CondMode::none;
  Index embed_dim = 0;         // d: class count or embedding dim
  Index head_width = 0;        // 0 -> 2p
  Index spatial_channels = 8;  // cs, free to choose
  Index bottleneck = 0;        // m (autoencoder)
  bool residual_conv = true;

  Index head() const { return head_width > 0 ? head_width : 2 * features; }
  Index gate_halves() const { return activation == Activation::gated ? 2 : 1; }

  void validate() const {
    if (layers < 1) throw ShapeError("config: layers must be >= 1");
    if (levels < 2) throw ShapeError("config: levels must be >= 2");
    if (filter < 1 || filter % 2 == 0)
      throw ShapeError("config: filter size must be odd");
    if (channels != 1 && channels != 3)
      throw ShapeError("config: channels must be 1 or 3");
    if (height < 2 || width < 2) throw ShapeError("config: image too small");
    if (features % channels != 0 || head() % channels != 0)
      throw ShapeError("config: features and head width must be divisible by "
                       "the channel count");
    if (cond_mode != CondMode::none && embed_dim < 1)
      throw ShapeError("config: conditional model needs embed_dim >= 1");
    if (cond_mode == CondMode::spatial && spatial_channels < 1)
      throw ShapeError("config: spatial conditioning needs spatial_channels");
  }

  /// Canonical key=value serialization; the checkpoint fingerprint hashes it.
  std::string canonical() const {
    std::ostringstream os;
    os << "arch=" << to_string(arch) << "\nactivation=" << to_string(activation)
       << "\nlayers=" << layers << "\nfeatures=" << features
       << "\nfilter=" << filter << "\nlevels=" << levels
       << "\nheight=" << height << "\nwidth=" << width
       << "\nchannels=" << channels << "\nconditional=" << to_string(cond_mode)
       << "\nembed_dim=" << embed_dim << "\nhead_width=" << head()
       << "\nspatial_channels=" << spatial_channels
       << "\nbottleneck=" << bottleneck
       << "\nresidual_conv=" << (residual_conv ? 1 : 0) << "\n";
    return os.str();
  }
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Applies one key=value setting; unknown keys are errors.
inline void apply_config_kv(ModelConfig& c, const std::string& key,
                            const std::string& value) {
  const auto as_int = [&]() -> long {
    try {
      return std::stol(value);
    } catch (...) {
      throw ShapeError("config: bad integer '" + value + "' for " + key);
    }
  };
  if (key == "arch") {
    if (value == "two_stack") c.arch = ArchKind::two_stack;
    else if (value == "single_stack") c.arch = ArchKind::single_stack;
    else throw ShapeError("config: unknown arch '" + value + "'");
  } else if (key == "activation") {
    if (value == "gated") c.activation = Activation::gated;
    else if (value == "relu") c.activation = Activation::relu;
    else if (value == "linear") c.activation = Activation::linear;
    else throw ShapeError("config: unknown activation '" + value + "'");
  } else if (key == "conditional") {
    if (value == "none") c.cond_mode = CondMode::none;
    else if (value == "global") c.cond_mode = CondMode::global;
    else if (value == "spatial") c.cond_mode = CondMode::spatial;
    else throw ShapeError("config: unknown conditioning '" + value + "'");
  } else if (key == "layers") c.layers = static_cast<int>(as_int());
  else if (key == "features") c.features = as_int();
  else if (key == "filter") c.filter = static_cast<int>(as_int());
  else if (key == "levels") c.levels = static_cast<int>(as_int());
  else if (key == "height") c.height = as_int();
  else if (key == "width") c.width = as_int();
  else if (key == "channels") c.channels = static_cast<int>(as_int());
  else if (key == "embed_dim") c.embed_dim = as_int();
  else if (key == "head_width") c.head_width = as_int();
  else if (key == "spatial_channels") c.spatial_channels = as_int();
  else if (key == "bottleneck") c.bottleneck = as_int();
  else if (key == "residual_conv") c.residual_conv = as_int() != 0;
  else throw ShapeError("config: unknown key '" + key + "'");
}

/// Parses key=value lines (the canonical() format; also the CLI config
/// file format). Blank lines and #-comments are skipped.
inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ShapeError("config: expected key=value, got '" + line + "'");
    apply_config_kv(c, line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

/// Named presets. `mnist-small` is the desk-scale default; `imagenet-paper`
/// mirrors the published large configuration (20 layers, 384 hidden units
/// per gate half, 5x5 filters, 256 levels) and is meant for construction
/// and inspection, not for CI training.
inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  if (name == "mnist-small") {
    c.layers = 6; c.features = 32; c.filter = 5; c.levels = 4;
    c.height = 14; c.width = 14; c.channels = 1;
  } else if (name == "stripes-small") {
    c.layers = 4; c.features = 24; c.filter = 3; c.levels = 4;
    c.height = 8; c.width = 8; c.channels = 1;
  } else if (name == "imagenet-paper") {
    c.layers = 20; c.features = 384; c.filter = 5; c.levels = 256;
    c.height = 32; c.width = 32; c.channels = 3;
  } else {
    throw ShapeError("unknown preset '" + name + "'");
  }
  return c;
}

/// One single-stack layer: a masked n x n convolution plus activation.
template <class S>
struct SingleLayerParams {
  MaskType type = MaskType::B;
  Tensor<S> w, b;  // [gw, cin, n, n], [gw]
  Tensor<S> mask;  // constant
  Tensor<S> v_f, v_g;
};

/// Full model: K layers (two-stack gated blocks or single-stack masked
/// convolutions) followed by a two-convolution 1x1 head producing C*L
/// logit maps. Takes an H x W x C image and yields H x W x C x L
/// predictions in one parallel pass.
template <class S>
struct GatedPixelCNN {
  ModelConfig cfg;
  std::vector<GatedBlockParams<S>> blocks;    // two_stack
  std::vector<SingleLayerParams<S>> slayers;  // single_stack
  Tensor<S> w_h1, b_h1, mask_h1;
  Tensor<S> w_h2, b_h2, mask_h2;
  SpatialConditioner<S> cond_net;  // spatial mode only

  explicit GatedPixelCNN(ModelConfig c) : cfg(c) { cfg.validate(); }

  void init(Rng& rng) {
    blocks.clear();
    slayers.clear();
    const Index p = cfg.features, hw = cfg.head();
    const int G = cfg.channels, n = cfg.filter;
    const Index halves = cfg.gate_halves();
    if (cfg.arch == ArchKind::two_stack) {
      for (int k = 0; k < cfg.layers; ++k) {
        const Index cin = k == 0 ? cfg.channels : p;
        const MaskType t = k == 0 ? MaskType::A : MaskType::B;
        blocks.push_back(make_gated_block<S>(
            p, cin, n, G, t, cfg.residual_conv, halves, cfg.cond_mode,
            cfg.embed_dim, cfg.spatial_channels, rng));
      }
    } else {
      for (int k = 0; k < cfg.layers; ++k) {
        const Index cin = k == 0 ? cfg.channels : p;
        const MaskType t = k == 0 ? MaskType::A : MaskType::B;
        SingleLayerParams<S> l;
        l.type = t;
        l.mask = detail::tile_out_halves(
            build_mask<S>(MaskSpec{n, n, t, G}, cin, p), halves);
        l.w = detail::init_masked_kernel<S>(Shape{halves * p, cin, n, n},
                                            l.mask, rng);
        l.b = detail::init_bias<S>(halves * p);
        detail::init_cond_pair(l.v_f, l.v_g, cfg.cond_mode, cfg.embed_dim,
                               cfg.spatial_channels, p, halves == 2, rng);
        slayers.push_back(std::move(l));
      }
    }
    mask_h1 = build_mask<S>(MaskSpec{1, 1, MaskType::B, G}, p, hw);
    w_h1 = detail::init_masked_kernel<S>(Shape{hw, p, 1, 1}, mask_h1, rng);
    b_h1 = detail::init_bias<S>(hw);
    const Index out_ch = static_cast<Index>(cfg.channels) * cfg.levels;
    mask_h2 = build_mask<S>(MaskSpec{1, 1, MaskType::B, G}, hw, out_ch);
    w_h2 = detail::init_masked_kernel<S>(Shape{out_ch, hw, 1, 1}, mask_h2, rng);
    b_h2 = detail::init_bias<S>(out_ch);
    if (cfg.cond_mode == CondMode::spatial)
      cond_net = make_spatial_conditioner<S>(cfg.embed_dim, cfg.spatial_channels,
                                             cfg.height, cfg.width, rng);
  }

  /// Trainable parameters in a stable order; names identify checkpoint blocks.
  std::vector<std::pair<std::string, Tensor<S>>> parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> ps;
    auto addp = [&ps](const std::string& name, const Tensor<S>& t) {
      if (t.size() > 0) ps.emplace_back(name, t);
    };
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      auto& b = blocks[k];
      const std::string pre = "block" + std::to_string(k) + ".";
      addp(pre + "w_v", b.w_v);
      addp(pre + "b_v", b.b_v);
      addp(pre + "w_h", b.w_h);
      addp(pre + "b_h", b.b_h);
      addp(pre + "w_link", b.w_link);
      addp(pre + "w_res", b.w_res);
      addp(pre + "b_res", b.b_res);
      addp(pre + "v_f", b.v_f);
      addp(pre + "v_g", b.v_g);
      addp(pre + "h_f", b.h_f);
      addp(pre + "h_g", b.h_g);
    }
    for (std::size_t k = 0; k < slayers.size(); ++k) {
      auto& l = slayers[k];
      const std::string pre = "layer" + std::to_string(k) + ".";
      addp(pre + "w", l.w);
      addp(pre + "b", l.b);
      addp(pre + "v_f", l.v_f);
      addp(pre + "v_g", l.v_g);
    }
    addp("head.w1", w_h1);
    addp("head.b1", b_h1);
    addp("head.w2", w_h2);
    addp("head.b2", b_h2);
    if (cfg.cond_mode == CondMode::spatial) {
      addp("cond.w_fc", cond_net.w_fc);
      addp("cond.b_fc", cond_net.b_fc);
      addp("cond.w_c1", cond_net.w_c1);
      addp("cond.b_c1", cond_net.b_c1);
      addp("cond.w_c2", cond_net.w_c2);
      addp("cond.b_c2", cond_net.b_c2);
    }
    return ps;
  }
};

/// Integer levels -> symmetric real input: 0 -> -1, L-1 -> +1.
template <class S>
Tensor<S> scale_levels(const LevelTensor& img, int levels) {
  Tensor<S> x(img.shape());
  const S a = S(2) / static_cast<S>(levels - 1);
  for (Index i = 0; i < img.size(); ++i) {
    const auto v = img.values()(i);
    if (v < 0 || v >= levels)
      throw ShapeError("image level " + std::to_string(v) +
                       " out of range [0," + std::to_string(levels) + ")");
    x.values()(i) = a * static_cast<S>(v) - S(1);
  }
  return x;
}

/// Forward pass on an already-scaled real input (used by the gradient
/// diagnostics, which differentiate w.r.t. the input itself).
template <class S>
Tensor<S> forward_logits_scaled(const GatedPixelCNN<S>& model,
                                const Tensor<S>& x,
                                const Conditioning<S>& cond_in) {
  const ModelConfig& c = model.cfg;
  if (x.rank() != 4 || x.dim(1) != c.channels || x.dim(2) != c.height ||
      x.dim(3) != c.width)
    throw ShapeError("forward: input " + shape_str(x.shape()) +
                     " does not match the configured model");
  if (cond_in.mode != c.cond_mode)
    throw ShapeError("forward: conditioning mode does not match the model");

  Conditioning<S> cond = cond_in;
  if (c.cond_mode == CondMode::spatial && cond.s.size() == 0)
    cond.s = map_spatial(model.cond_net, cond.h);

  Tensor<S> feat;
  if (c.arch == ArchKind::two_stack) {
    Tensor<S> v = shift2d(x, ShiftDir::down, 1);
    Tensor<S> h = x;
    for (const auto& blk : model.blocks) {
      auto out = gated_layer_forward(v, h, blk, cond, c.activation);
      v = out.v;
      h = out.h;
    }
    feat = h;
  } else {
    const Index n = c.filter;
    feat = x;
    for (const auto& l : model.slayers) {
      Tensor<S> pre = add(conv2d(feat, mul(l.w, l.mask), Pad{n / 2, n / 2, n / 2, n / 2}),
                          l.b);
      feat = activation_unit(pre, cond, c.activation, l.v_f, l.v_g);
    }
  }
  Tensor<S> t = add(conv2d(feat, mul(model.w_h1, model.mask_h1), Pad{}),
                    model.b_h1);
  if (c.activation != Activation::linear) t = relu(t);
  Tensor<S> logits = add(conv2d(t, mul(model.w_h2, model.mask_h2), Pad{}),
                         model.b_h2);
  return reshape(logits, Shape{x.dim(0), static_cast<Index>(c.channels),
                               static_cast<Index>(c.levels), c.height, c.width});
}

/// All per-pixel conditionals in one parallel pass.
/// logits[n,c,:,y,x] parameterize p(x[y,x,c] | raster context, h).
template <class S>
Tensor<S> forward_logits(const GatedPixelCNN<S>& model, const LevelTensor& img,
                         const Conditioning<S>& cond) {
  return forward_logits_scaled(model, scale_levels<S>(img, model.cfg.levels),
                               cond);
}

/// Mean over pixels and channels of -log2 p(true level). Differentiable;
/// this is both the training loss and the evaluation metric.
template <class S>
Tensor<S> nll_bits_per_dim(const Tensor<S>& logits, const LevelTensor& img) {
  if (logits.rank() != 5)
    throw ShapeError("nll_bits_per_dim: logits must be [N,C,L,H,W]");
  const Index N = logits.dim(0), C = logits.dim(1), L = logits.dim(2);
  Tensor<S> flat = reshape(logits, Shape{N, C * L, logits.dim(3), logits.dim(4)});
  Tensor<S> rows = channels_to_logit_rows(flat, C);
  LevelTensor targets = reshape(img, Shape{img.size()});
  Tensor<S> nats = softmax_cross_entropy(rows, targets);
  return scale(nats, S(1) / std::log(S(2)));
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

/// Closed-form parameter count derived from the layer wiring; the unit
/// tests pin the constructed models against it to catch silent
/// architecture drift.
inline std::int64_t param_count(const ModelConfig& c) {
  const std::int64_t p = c.features, gw = c.gate_halves() * p;
  const std::int64_t n = c.filter, khalf = (n + 1) / 2;
  const std::int64_t d = c.embed_dim, cs = c.spatial_channels;
  const std::int64_t cond_per_proj =
      c.cond_mode == CondMode::none
          ? 0
          : (c.cond_mode == CondMode::global ? d * p : p * cs) *
                (c.gate_halves() == 2 ? 2 : 1);
  std::int64_t total = 0;
  for (int k = 0; k < c.layers; ++k) {
    const std::int64_t cin = k == 0 ? c.channels : p;
    if (c.arch == ArchKind::two_stack) {
      total += gw * cin * khalf * n + gw;  // vertical conv + bias
      total += gw * cin * khalf + gw;      // horizontal conv + bias
      total += gw * gw;                    // stack link
      if (c.residual_conv || cin != p) total += p * cin + p;  // residual
      total += 2 * cond_per_proj;          // per-stack conditioning
    } else {
      total += gw * cin * n * n + gw;
      total += cond_per_proj;
    }
  }
  const std::int64_t hw = c.head(), out_ch = std::int64_t(c.channels) * c.levels;
  total += hw * p + hw + out_ch * hw + out_ch;
  if (c.cond_mode == CondMode::spatial) {
    const std::int64_t h0 = (c.height + 3) / 4, w0 = (c.width + 3) / 4;
    total += d * cs * h0 * w0 + cs * h0 * w0;
    total += 2 * (cs * cs * 9 + cs);
  }
  return total;
}

template <class S>
std::int64_t actual_param_count(GatedPixelCNN<S>& m) {
  std::int64_t total = 0;
  for (auto& [name, t] : m.parameters()) total += t.size();
  return total;
}

// ---------------------------------------------------------------------------
// encoder and autoencoder
// ---------------------------------------------------------------------------

/// Convolutional downsampling stack ending in an m-dimensional vector:
/// three stride-2 5x5 convolutions (stride realized as conv + subsample)
/// and a full connection.
template <class S>
struct Encoder {
  int channels = 1, levels = 2;
  Index height = 0, width = 0, bottleneck = 0;
  Tensor<S> w1, b1, w2, b2, w3, b3;
  Tensor<S> w_fc, b_fc;

  static constexpr Index kWidth1 = 16, kWidth2 = 32, kWidth3 = 32;

  Encoder() = default;
  Encoder(int channels_, int levels_, Index h, Index w, Index m)
      : channels(channels_), levels(levels_), height(h), width(w), bottleneck(m) {}

  Index flat_dim() const {
    const Index h3 = (((height + 1) / 2 + 1) / 2 + 1) / 2;
    const Index w3 = (((width + 1) / 2 + 1) / 2 + 1) / 2;
    return kWidth3 * h3 * w3;
  }

  void init(Rng& rng) {
    w1 = detail::init_kernel<S>(Shape{kWidth1, channels, 5, 5}, rng);
    b1 = detail::init_bias<S>(kWidth1);
    w2 = detail::init_kernel<S>(Shape{kWidth2, kWidth1, 5, 5}, rng);
    b2 = detail::init_bias<S>(kWidth2);
    w3 = detail::init_kernel<S>(Shape{kWidth3, kWidth2, 5, 5}, rng);
    b3 = detail::init_bias<S>(kWidth3);
    w_fc = detail::init_linear<S>(flat_dim(), bottleneck, rng);
    b_fc = detail::init_bias<S>(bottleneck);
  }

  std::vector<std::pair<std::string, Tensor<S>>> parameters() {
    return {{"enc.w1", w1}, {"enc.b1", b1}, {"enc.w2", w2}, {"enc.b2", b2},
            {"enc.w3", w3}, {"enc.b3", b3}, {"enc.w_fc", w_fc},
            {"enc.b_fc", b_fc}};
  }
};

inline std::int64_t encoder_param_count(int channels, Index h, Index w,
                                        Index m) {
  const std::int64_t c1 = 16, c2 = 32, c3 = 32;
  const std::int64_t h3 = (((h + 1) / 2 + 1) / 2 + 1) / 2;
  const std::int64_t w3 = (((w + 1) / 2 + 1) / 2 + 1) / 2;
  return c1 * channels * 25 + c1 + c2 * c1 * 25 + c2 + c3 * c2 * 25 + c3 +
         c3 * h3 * w3 * m + m;
}

template <class S>
Tensor<S> encode_scaled(const Encoder<S>& e, const Tensor<S>& x) {
  if (x.rank() != 4 || x.dim(1) != e.channels || x.dim(2) != e.height ||
      x.dim(3) != e.width)
    throw ShapeError("encode: input " + shape_str(x.shape()) +
                     " does not match the encoder");
  Tensor<S> t = relu(add(subsample(conv2d(x, e.w1, Pad{2, 2, 2, 2}), 2), e.b1));
  t = relu(add(subsample(conv2d(t, e.w2, Pad{2, 2, 2, 2}), 2), e.b2));
  t = relu(add(subsample(conv2d(t, e.w3, Pad{2, 2, 2, 2}), 2), e.b3));
  return add(matmul(flatten_samples(t), e.w_fc), e.b_fc);
}

/// Deterministic m-vector representation h of an image.
template <class S>
Tensor<S> encode(const Encoder<S>& e, const LevelTensor& img) {
  return encode_scaled(e, scale_levels<S>(img, e.levels));
}

/// Encoder + conditional Gated PixelCNN decoder, trained end-to-end: the
/// decoder consumes h as a global conditioning vector in every gate.
template <class S>
struct PixelCNNAutoencoder {
  Encoder<S> encoder;
  GatedPixelCNN<S> decoder;

  explicit PixelCNNAutoencoder(ModelConfig dec_cfg)
      : encoder(dec_cfg.channels, dec_cfg.levels, dec_cfg.height,
                dec_cfg.width, dec_cfg.bottleneck),
        decoder([&dec_cfg] {
          ModelConfig c = dec_cfg;
          c.cond_mode = CondMode::global;
          c.embed_dim = c.bottleneck;
          return c;
        }()) {
    if (dec_cfg.bottleneck < 1)
      throw ShapeError("autoencoder: config needs bottleneck m >= 1");
  }

  void init(Rng& rng) {
    encoder.init(rng);
    decoder.init(rng);
  }

  std::vector<std::pair<std::string, Tensor<S>>> parameters() {
    auto ps = encoder.parameters();
    for (auto& kv : decoder.parameters()) ps.push_back(kv);
    return ps;
  }
};

template <class S>
struct AutoencoderOut {
  Tensor<S> h;
  Tensor<S> logits;
};

template <class S>
AutoencoderOut<S> autoencoder_forward(const PixelCNNAutoencoder<S>& ae,
                                      const LevelTensor& img) {
  AutoencoderOut<S> out;
  out.h = encode(ae.encoder, img);
  out.logits = forward_logits(ae.decoder, img, Conditioning<S>::global(out.h));
  return out;
}

}  // namespace pixelcnn
