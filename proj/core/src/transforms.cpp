#include "grammarscope/transforms.hpp"

#include <algorithm>
#include <cmath>

namespace grammarscope::data {

namespace {

void check_rect(const Rect& r, int h, int w, const char* what) {
  require(rect_in_bounds(r, h, w), std::string(what) + ": rect (" + std::to_string(r.x) + "," +
                                       std::to_string(r.y) + "," + std::to_string(r.w) + "," +
                                       std::to_string(r.h) + ") out of bounds for " +
                                       std::to_string(w) + "x" + std::to_string(h));
}

}  // namespace

ImageGrid crop(const ImageGrid& img, const Rect& r) {
  check_rect(r, img.h, img.w, "crop");
  ImageGrid out(r.h, r.w);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(r.y + y, r.x + x, c);
  return out;
}

LabelGrid crop(const LabelGrid& mask, const Rect& r) {
  check_rect(r, mask.h, mask.w, "crop");
  LabelGrid out(r.h, r.w, mask.classes);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) out.at(y, x) = mask.at(r.y + y, r.x + x);
  return out;
}

ImageGrid resize_image(const ImageGrid& img, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_image: dims must be positive");
  ImageGrid out(out_h, out_w);
  const double sy = static_cast<double>(img.h) / out_h;
  const double sx = static_cast<double>(img.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.h - 1);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.w - 1);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bot = (1.0 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

LabelGrid resize_mask(const LabelGrid& mask, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_mask: dims must be positive");
  LabelGrid out(out_h, out_w, mask.classes);
  const double sy = static_cast<double>(mask.h) / out_h;
  const double sx = static_cast<double>(mask.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int src_y = std::min(static_cast<int>((y + 0.5) * sy), mask.h - 1);
    for (int x = 0; x < out_w; ++x) {
      const int src_x = std::min(static_cast<int>((x + 0.5) * sx), mask.w - 1);
      out.at(y, x) = mask.at(src_y, src_x);
    }
  }
  return out;
}

PhotoSpec sample_photometric(const PhotoParams& params, Rng& rng) {
  PhotoSpec spec;
  for (int c = 0; c < 3; ++c)
    spec.gain[c] = static_cast<float>(rng.uniform(1.0 - params.gain_amp, 1.0 + params.gain_amp));
  for (int c = 0; c < 3; ++c)
    spec.bias[c] = static_cast<float>(rng.uniform(-params.bias_amp, params.bias_amp));
  return spec;
}

ImageGrid apply_photometric(const ImageGrid& img, const PhotoSpec& spec) {
  ImageGrid out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::clamp(img.at(y, x, c) * spec.gain[c] + spec.bias[c], 0.f, 1.f);
  return out;
}

GeoSpec sample_geometric(int h, int w, Rng& rng, int align) {
  require(align > 0 && h % align == 0 && w % align == 0, "sample_geometric: dims must align");
  // Crop between 60% and 100% of each side, aligned so the scaled rect is
  // integral on the 1/align feature map.
  const int min_w = std::max(align, (w * 3 / 5) / align * align);
  const int min_h = std::max(align, (h * 3 / 5) / align * align);
  GeoSpec spec;
  const int steps_w = (w - min_w) / align + 1;
  const int steps_h = (h - min_h) / align + 1;
  spec.crop.w = min_w + align * rng.uniform_int(steps_w);
  spec.crop.h = min_h + align * rng.uniform_int(steps_h);
  spec.crop.x = align * rng.uniform_int((w - spec.crop.w) / align + 1);
  spec.crop.y = align * rng.uniform_int((h - spec.crop.h) / align + 1);
  spec.flip = rng.uniform_int(2) == 1;
  return spec;
}

ImageGrid apply_geometric(const ImageGrid& img, const GeoSpec& spec) {
  ImageGrid out = crop(img, spec.crop);
  if (spec.flip) out = flip_horizontal(out);
  return out;
}

LabelGrid apply_geometric(const LabelGrid& mask, const GeoSpec& spec) {
  LabelGrid out = crop(mask, spec.crop);
  if (spec.flip) out = flip_horizontal(out);
  return out;
}

GeoSpec scale_geometric(const GeoSpec& spec, double ratio) {
  require(ratio > 0.0, "scale_geometric: ratio must be positive");
  GeoSpec out = spec;
  out.crop.x = static_cast<int>(std::lround(spec.crop.x * ratio));
  out.crop.y = static_cast<int>(std::lround(spec.crop.y * ratio));
  out.crop.w = static_cast<int>(std::lround(spec.crop.w * ratio));
  out.crop.h = static_cast<int>(std::lround(spec.crop.h * ratio));
  return out;
}

ImageGrid flip_horizontal(const ImageGrid& img) {
  ImageGrid out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

LabelGrid flip_horizontal(const LabelGrid& mask) {
  LabelGrid out(mask.h, mask.w, mask.classes);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) out.at(y, x) = mask.at(y, mask.w - 1 - x);
  return out;
}

}  // namespace grammarscope::data
