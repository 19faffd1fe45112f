#include "pixelcnn/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "pixelcnn/ops.hpp"

namespace pixelcnn {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path,
                        std::size_t offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated at offset " + std::to_string(offset));
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::uint32_t kIdxImages = 0x00000803;

}  // namespace

LevelTensor Dataset::batch(const std::vector<Index>& idx) const {
  const Index C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const Index stride = C * H * W;
  LevelTensor out(Shape{static_cast<Index>(idx.size()), C, H, W});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= size())
      throw ShapeError("batch: index out of range");
    out.values().segment(static_cast<Index>(i) * stride, stride) =
        images.values().segment(idx[i] * stride, stride);
  }
  return out;
}

std::vector<std::int32_t> Dataset::label_batch(
    const std::vector<Index>& idx) const {
  if (labels.empty()) throw ShapeError("label_batch: dataset is unlabeled");
  std::vector<std::int32_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out[i] = labels.at(static_cast<std::size_t>(idx[i]));
  return out;
}

Dataset Dataset::slice(Index begin, Index end) const {
  if (begin < 0 || end > size() || begin > end)
    throw ShapeError("slice: bad range");
  const Index C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const Index stride = C * H * W;
  Dataset out;
  out.levels = levels;
  out.class_count = class_count;
  out.embedding_dim = embedding_dim;
  out.images = LevelTensor(Shape{end - begin, C, H, W});
  out.images.values() =
      images.values().segment(begin * stride, (end - begin) * stride);
  if (!labels.empty())
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
  if (!embeddings.empty())
    out.embeddings.assign(embeddings.begin() + begin * embedding_dim,
                          embeddings.begin() + end * embedding_dim);
  return out;
}

Dataset Dataset::shuffled(std::uint64_t seed) const {
  std::vector<Index> perm(static_cast<std::size_t>(size()));
  for (Index i = 0; i < size(); ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (Index i = size() - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(i + 1))]);
  Dataset out;
  out.levels = levels;
  out.class_count = class_count;
  out.embedding_dim = embedding_dim;
  out.images = batch(perm);
  if (!labels.empty()) out.labels = label_batch(perm);
  if (!embeddings.empty()) {
    out.embeddings.resize(embeddings.size());
    for (Index i = 0; i < size(); ++i)
      std::copy(embeddings.begin() + perm[static_cast<std::size_t>(i)] * embedding_dim,
                embeddings.begin() + (perm[static_cast<std::size_t>(i)] + 1) * embedding_dim,
                out.embeddings.begin() + i * embedding_dim);
  }
  return out;
}

std::vector<std::vector<double>> load_embedding_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof())
      throw FormatError(path + ": bad decimal on line " +
                        std::to_string(rows.size() + 1));
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(path + ": ragged embedding rows");
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": no embedding vectors");
  return rows;
}

void QuantizationSpec::validate() const {
  if (levels < 2 || levels > 256 || 256 % levels != 0)
    throw ShapeError("quantization: levels must divide 256, got " +
                     std::to_string(levels));
}

std::int32_t quantize_value(int byte, const QuantizationSpec& q) {
  q.validate();
  if (byte < 0 || byte > 255)
    throw ShapeError("quantize: byte value out of range");
  return static_cast<std::int32_t>(byte * q.levels / 256);
}

int dequantize_value(std::int32_t level, const QuantizationSpec& q) {
  q.validate();
  if (level < 0 || level >= q.levels)
    throw ShapeError("dequantize: level out of range");
  const int bin = 256 / q.levels;
  return static_cast<int>(level) * bin + bin / 2;
}

LevelTensor quantize(const LevelTensor& bytes, const QuantizationSpec& q) {
  q.validate();
  LevelTensor out(bytes.shape());
  for (Index i = 0; i < bytes.size(); ++i)
    out.values()(i) = quantize_value(bytes.values()(i), q);
  return out;
}

LevelTensor dequantize(const LevelTensor& levels, const QuantizationSpec& q) {
  q.validate();
  LevelTensor out(levels.shape());
  for (Index i = 0; i < levels.size(); ++i)
    out.values()(i) = dequantize_value(levels.values()(i), q);
  return out;
}

LevelTensor load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  const std::uint32_t magic = read_be32(in, path, 0);
  int dims;
  if (magic == kIdxLabels)
    dims = 1;
  else if (magic == kIdxImages)
    dims = 3;
  else
    throw FormatError(path + ": bad IDX magic 0x" + [magic] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + " at offset 0");
  Shape shape;
  Index total = 1;
  for (int d = 0; d < dims; ++d) {
    const std::uint32_t ext = read_be32(in, path, 4 + 4 * std::size_t(d));
    shape.push_back(static_cast<Index>(ext));
    total *= static_cast<Index>(ext);
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(total));
  if (!in.read(reinterpret_cast<char*>(raw.data()), total))
    throw FormatError(path + ": truncated at offset " +
                      std::to_string(4 + 4 * dims));
  LevelTensor out(shape);
  for (Index i = 0; i < total; ++i)
    out.values()(i) = raw[static_cast<std::size_t>(i)];
  return out;
}

void write_idx(const std::string& path, const LevelTensor& data) {
  std::uint32_t magic;
  if (data.rank() == 1)
    magic = kIdxLabels;
  else if (data.rank() == 3)
    magic = kIdxImages;
  else
    throw ShapeError("write_idx: rank must be 1 (labels) or 3 (images)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  write_be32(out, magic);
  for (int d = 0; d < data.rank(); ++d)
    write_be32(out, static_cast<std::uint32_t>(data.dim(d)));
  std::vector<unsigned char> raw(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) {
    const auto v = data.values()(i);
    if (v < 0 || v > 255) throw ShapeError("write_idx: value not a byte");
    raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v);
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw FormatError(path + ": write failed");
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int levels) {
  LevelTensor imgs = load_idx(images_path);
  if (imgs.rank() != 3)
    throw FormatError(images_path + ": expected an IDX image file");
  LevelTensor lbls = load_idx(labels_path);
  if (lbls.rank() != 1)
    throw FormatError(labels_path + ": expected an IDX label file");
  if (imgs.dim(0) != lbls.dim(0))
    throw FormatError("image/label counts differ: " +
                      std::to_string(imgs.dim(0)) + " vs " +
                      std::to_string(lbls.dim(0)));
  Dataset ds;
  ds.levels = levels;
  ds.images = reshape(quantize(imgs, QuantizationSpec{levels}),
                      Shape{imgs.dim(0), 1, imgs.dim(1), imgs.dim(2)});
  ds.labels.assign(lbls.data(), lbls.data() + lbls.size());
  ds.class_count =
      ds.labels.empty()
          ? 0
          : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

Dataset load_cifar_binary(const std::string& path, int levels) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError(path + ": cannot open");
  const std::streamoff bytes = in.tellg();
  constexpr std::streamoff kRecord = 1 + 3072;
  if (bytes == 0 || bytes % kRecord != 0)
    throw FormatError(path + ": size " + std::to_string(bytes) +
                      " is not a multiple of " + std::to_string(kRecord));
  const Index n = static_cast<Index>(bytes / kRecord);
  in.seekg(0);
  Dataset ds;
  ds.levels = levels;
  ds.class_count = 10;
  ds.images = LevelTensor(Shape{n, 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(n));
  const QuantizationSpec q{levels};
  std::vector<unsigned char> rec(kRecord);
  for (Index i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kRecord))
      throw FormatError(path + ": truncated record " + std::to_string(i));
    ds.labels[static_cast<std::size_t>(i)] = rec[0];
    // planes are already channel-major, matching [C,H,W]
    for (Index j = 0; j < 3072; ++j)
      ds.images.values()(i * 3072 + j) =
          quantize_value(rec[static_cast<std::size_t>(1 + j)], q);
  }
  return ds;
}

Dataset make_synthetic(SyntheticKind kind, Index n, Index height, Index width,
                       int levels, std::uint64_t seed) {
  if (n < 1 || height < 2 || width < 2 || levels < 2)
    throw ShapeError("make_synthetic: bad arguments");
  Rng rng(seed);
  Dataset ds;
  ds.levels = levels;
  ds.class_count = 2;
  ds.images = LevelTensor(Shape{n, 1, height, width});
  ds.labels.resize(static_cast<std::size_t>(n));
  const auto clamp_level = [levels](std::int64_t v) {
    return static_cast<std::int32_t>(
        std::min<std::int64_t>(levels - 1, std::max<std::int64_t>(0, v)));
  };
  for (Index i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);  // balanced by construction
    ds.labels[static_cast<std::size_t>(i)] = cls;
    auto px = [&](Index y, Index x) -> std::int32_t& {
      return ds.images.at({i, 0, y, x});
    };
    if (kind == SyntheticKind::stripes_hv) {
      // independent level noise per bar; adjacent bars never coincide, so
      // orientation is always manifest in the image
      const Index bars = cls == 0 ? height : width;
      std::vector<std::int32_t> bar(static_cast<std::size_t>(bars));
      for (Index b = 0; b < bars; ++b) {
        std::int32_t v = static_cast<std::int32_t>(rng.below(levels));
        if (b > 0 && v == bar[static_cast<std::size_t>(b - 1)])
          v = clamp_level((v + 1) % levels);
        bar[static_cast<std::size_t>(b)] = v;
      }
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x)
          px(y, x) = cls == 0 ? bar[static_cast<std::size_t>(y)]
                              : bar[static_cast<std::size_t>(x)];
    } else {
      const Index half = levels / 2;
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x)
          px(y, x) = static_cast<std::int32_t>(
              cls == 0 ? rng.below(half) : half + rng.below(levels - half));
    }
  }
  return ds;
}

int classify_by_variance(const LevelTensor& images, Index i) {
  const Index H = images.dim(2), W = images.dim(3);
  auto at = [&](Index y, Index x) {
    return static_cast<double>(images.at({i, 0, y, x}));
  };
  double row_var = 0, col_var = 0;
  for (Index y = 0; y < H; ++y) {
    double s = 0, s2 = 0;
    for (Index x = 0; x < W; ++x) s += at(y, x), s2 += at(y, x) * at(y, x);
    row_var += s2 / W - (s / W) * (s / W);
  }
  for (Index x = 0; x < W; ++x) {
    double s = 0, s2 = 0;
    for (Index y = 0; y < H; ++y) s += at(y, x), s2 += at(y, x) * at(y, x);
    col_var += s2 / H - (s / H) * (s / H);
  }
  return row_var <= col_var ? 0 : 1;
}

}  // namespace pixelcnn
