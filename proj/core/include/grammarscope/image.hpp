#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grammarscope/error.hpp"

namespace grammarscope::data {

// RGB raster, values in [0,1], interleaved row-major.
struct ImageGrid {
  int h = 0, w = 0;
  std::vector<float> px;  // h*w*3

  ImageGrid() = default;
  ImageGrid(int height, int width, float fill = 0.f) : h(height), w(width) {
    require(height > 0 && width > 0, "ImageGrid: dims must be positive");
    px.assign(static_cast<size_t>(h) * w * 3, fill);
  }
  float& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  float at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

// Per-pixel semantic class ids in [0, classes).
struct LabelGrid {
  int h = 0, w = 0;
  int classes = 1;
  std::vector<uint8_t> ids;  // h*w

  LabelGrid() = default;
  LabelGrid(int height, int width, int class_count, uint8_t fill = 0)
      : h(height), w(width), classes(class_count) {
    require(height > 0 && width > 0, "LabelGrid: dims must be positive");
    require(class_count > 0 && class_count <= 256, "LabelGrid: classes must be in [1,256]");
    require(fill < class_count, "LabelGrid: fill id out of range");
    ids.assign(static_cast<size_t>(h) * w, fill);
  }
  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * w + x]; }
};

// Binary PPM (P6, maxval 255). Round-trips exactly at 8-bit quantization.
ImageGrid load_image(const std::string& path);
void save_image(const ImageGrid& img, const std::string& path);

// Binary PGM (P5) with the class count in a "#C=<n>" comment line.
LabelGrid load_mask(const std::string& path);
void save_mask(const LabelGrid& mask, const std::string& path);

}  // namespace grammarscope::data
