#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixelcnn/data.hpp"
#include "pixelcnn/tensor.hpp"

namespace pixelcnn {

/// 8-bit image, row-major, channels interleaved (1 = gray, 3 = RGB).
struct Image8 {
  Index width = 0, height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

/// Minimal PNG subset: 8-bit grayscale or RGB, no alpha, non-interlaced.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

/// Tiles level images [N,C,H,W] (dequantized to bytes) row-major into a
/// grid with a 1-pixel separator between tiles.
Image8 make_grid(const LevelTensor& images, int columns, int levels);
void write_png_grid(const LevelTensor& images, int columns,
                    const std::string& path, int levels);

}  // namespace pixelcnn
