#include "pixelcnn/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace pixelcnn {

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char* type,
                  const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0,
                         reinterpret_cast<const Bytef*>(out.data() + crc_start),
                         static_cast<uInt>(out.size() - crc_start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("write_png: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<std::size_t>(img.width * img.height *
                                                    img.channels))
    throw ShapeError("write_png: pixel buffer does not match dimensions");

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // gray / truecolor
  ihdr.push_back(0);                                   // compression
  ihdr.push_back(0);                                   // filter method
  ihdr.push_back(0);                                   // no interlace

  // raw scanlines with filter byte 0
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(img.height));
  for (Index y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * stride),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * stride));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> zdata(zlen);
  if (compress2(zdata.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw FormatError(path + ": deflate failed");
  zdata.resize(zlen);

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zdata);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError(path + ": write failed");
}

Image8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (data.size() < 8 || std::memcmp(data.data(), kSignature, 8) != 0)
    throw FormatError(path + ": not a PNG (bad signature at offset 0)");

  Image8 img;
  std::vector<std::uint8_t> zdata;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= data.size() && !saw_iend) {
    const std::uint32_t len = get_be32(&data[pos]);
    if (pos + 12 + len > data.size())
      throw FormatError(path + ": truncated chunk at offset " +
                        std::to_string(pos));
    const char* type = reinterpret_cast<const char*>(&data[pos + 4]);
    const std::uint8_t* payload = &data[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw FormatError(path + ": bad IHDR");
      img.width = get_be32(payload);
      img.height = get_be32(payload + 4);
      const int depth = payload[8], color = payload[9];
      if (depth != 8 || (color != 0 && color != 2) || payload[12] != 0)
        throw FormatError(path + ": unsupported PNG variant");
      img.channels = color == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      zdata.insert(zdata.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw FormatError(path + ": missing chunks");

  const std::size_t stride =
      static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.channels);
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
  uLongf rawlen = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &rawlen, zdata.data(),
                 static_cast<uLong>(zdata.size())) != Z_OK ||
      rawlen != raw.size())
    throw FormatError(path + ": inflate failed");

  img.pixels.assign(stride * static_cast<std::size_t>(img.height), 0);
  const int bpp = img.channels;
  for (Index y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
    const std::uint8_t* src =
        &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
    std::uint8_t* dst = &img.pixels[static_cast<std::size_t>(y) * stride];
    const std::uint8_t* up =
        y > 0 ? &img.pixels[static_cast<std::size_t>(y - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw FormatError(path + ": unknown filter type " +
                            std::to_string(filter));
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

Image8 make_grid(const LevelTensor& images, int columns, int levels) {
  if (images.rank() != 4 || images.dim(0) < 1)
    throw ShapeError("make_grid: need images [N,C,H,W]");
  if (columns < 1) throw ShapeError("make_grid: columns must be positive");
  const Index N = images.dim(0), C = images.dim(1), H = images.dim(2),
              W = images.dim(3);
  if (C != 1 && C != 3) throw ShapeError("make_grid: channels must be 1 or 3");
  const QuantizationSpec q{levels};
  const Index rows = (N + columns - 1) / columns;
  Image8 grid;
  grid.channels = static_cast<int>(C);
  grid.width = columns * W + (columns - 1);
  grid.height = rows * H + (rows - 1);
  grid.pixels.assign(static_cast<std::size_t>(grid.width * grid.height * C),
                     128);  // separator gray
  for (Index i = 0; i < N; ++i) {
    const Index gy = (i / columns) * (H + 1), gx = (i % columns) * (W + 1);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        for (Index c = 0; c < C; ++c)
          grid.pixels[static_cast<std::size_t>(
              ((gy + y) * grid.width + gx + x) * C + c)] =
              static_cast<std::uint8_t>(
                  dequantize_value(images.at({i, c, y, x}), q));
  }
  return grid;
}

void write_png_grid(const LevelTensor& images, int columns,
                    const std::string& path, int levels) {
  write_png(path, make_grid(images, columns, levels));
}

}  // namespace pixelcnn
