#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixelcnn/rng.hpp"
#include "pixelcnn/tensor.hpp"

namespace pixelcnn {

/// Labeled image corpus with quantized levels in [0, levels). Externally
/// supplied per-image embedding vectors (row-major [N, embedding_dim])
/// may stand in for class labels when conditioning.
struct Dataset {
  LevelTensor images;  // [N,C,H,W]
  std::vector<std::int32_t> labels;  // empty when unlabeled
  std::vector<double> embeddings;    // empty unless embedding-conditioned
  Index embedding_dim = 0;
  int levels = 256;
  int class_count = 0;

  Index size() const { return images.rank() > 0 ? images.dim(0) : 0; }

  LevelTensor batch(const std::vector<Index>& idx) const;
  std::vector<std::int32_t> label_batch(const std::vector<Index>& idx) const;
  Dataset slice(Index begin, Index end) const;
  Dataset shuffled(std::uint64_t seed) const;
};

/// Embedding file: one vector per line, space-separated decimals.
std::vector<std::vector<double>> load_embedding_file(const std::string& path);

/// 8-bit source values to L target levels, level = floor(value*L/256).
/// L must divide 256 so every level owns an equal share of byte values.
struct QuantizationSpec {
  int levels = 256;
  void validate() const;
};

std::int32_t quantize_value(int byte, const QuantizationSpec& q);
int dequantize_value(std::int32_t level, const QuantizationSpec& q);  // bin center
LevelTensor quantize(const LevelTensor& bytes, const QuantizationSpec& q);
LevelTensor dequantize(const LevelTensor& levels, const QuantizationSpec& q);

// IDX format: big-endian magic (0x00000801 labels / 0x00000803 images),
// one u32 per dimension, then raw bytes. load_idx returns [N] for label
// files and [N,H,W] for image files.
LevelTensor load_idx(const std::string& path);
void write_idx(const std::string& path, const LevelTensor& data);

/// IDX image + label pair quantized to L levels, images as [N,1,H,W].
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int levels);

/// CIFAR-10 binary: records of 1 label byte + 3072 pixel bytes
/// (R plane, G plane, B plane, row-major). Images come out as [N,3,32,32].
Dataset load_cifar_binary(const std::string& path, int levels = 256);

enum class SyntheticKind { stripes_hv, brightness_2class };

/// Deterministic synthetic corpora for conditional-generation tests.
/// stripes_hv: class 0 images have constant rows (horizontal bars), class 1
/// constant columns; bar levels carry per-bar jitter. brightness_2class:
/// class 0 draws pixels from the dark half of the range, class 1 from the
/// light half. Classes are balanced n/2 each.
Dataset make_synthetic(SyntheticKind kind, Index n, Index height, Index width,
                       int levels, std::uint64_t seed);

/// Reference classifier for stripes_hv: compares within-row variance to
/// within-column variance. Returns 0 (horizontal) or 1 (vertical).
int classify_by_variance(const LevelTensor& images, Index i);

template <class S>
Tensor<S> one_hot(const std::vector<std::int32_t>& labels, Index classes) {
  Tensor<S> h(Shape{static_cast<Index>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ShapeError("one_hot: label " + std::to_string(labels[i]) +
                       " out of range");
    h.at({static_cast<Index>(i), labels[i]}) = S(1);
  }
  return h;
}

}  // namespace pixelcnn
