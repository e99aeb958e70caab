#pragma once

#include "grammarscope/image.hpp"
#include "grammarscope/rng.hpp"

namespace grammarscope::data {

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Rect&) const = default;
};

inline bool rect_in_bounds(const Rect& r, int h, int w) {
  return r.x >= 0 && r.y >= 0 && r.w > 0 && r.h > 0 && r.x + r.w <= w && r.y + r.h <= h;
}

ImageGrid crop(const ImageGrid& img, const Rect& r);
LabelGrid crop(const LabelGrid& mask, const Rect& r);

// Images resize bilinearly; masks use nearest-neighbor so class ids are
// never interpolated.
ImageGrid resize_image(const ImageGrid& img, int out_h, int out_w);
LabelGrid resize_mask(const LabelGrid& mask, int out_h, int out_w);

// Per-channel affine color jitter: gain in [1-a, 1+a], bias in [-b, b].
// A sampled spec is replayable, which is what pairs the two feature streams.
struct PhotoSpec {
  float gain[3] = {1.f, 1.f, 1.f};
  float bias[3] = {0.f, 0.f, 0.f};
};

struct PhotoParams {
  float gain_amp = 0.f;  // a
  float bias_amp = 0.f;  // b
};

PhotoSpec sample_photometric(const PhotoParams& params, Rng& rng);
ImageGrid apply_photometric(const ImageGrid& img, const PhotoSpec& spec);  // clamped to [0,1]

// Crop then optional horizontal flip, applied identically to an image and
// its mask to keep pixel-label correspondence.
struct GeoSpec {
  Rect crop;
  bool flip = false;
};

GeoSpec sample_geometric(int h, int w, Rng& rng, int align = 4);
ImageGrid apply_geometric(const ImageGrid& img, const GeoSpec& spec);
LabelGrid apply_geometric(const LabelGrid& mask, const GeoSpec& spec);

// Rescales the crop rectangle by the feature-map/image ratio (rounded to
// nearest); the flip flag carries over unchanged.
GeoSpec scale_geometric(const GeoSpec& spec, double ratio);

ImageGrid flip_horizontal(const ImageGrid& img);
LabelGrid flip_horizontal(const LabelGrid& mask);

}  // namespace grammarscope::data
