#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grammarscope/image.hpp"
#include "grammarscope/transforms.hpp"

namespace grammarscope::corrupt {

using data::ImageGrid;
using data::LabelGrid;
using data::Rect;

// Non-overlapping stride-ps tiling, patches in row-major order, each patch's
// pixels flattened channel-major. fold(unfold(x)) == x exactly.
template <typename T>
struct PatchGridT {
  int grid_h = 0, grid_w = 0;
  int channels = 1;
  int ps = 0;
  int classes = 0;  // mask pathway only
  std::vector<T> data;  // [patch][channels*ps*ps]

  int ny() const { return grid_h / ps; }
  int nx() const { return grid_w / ps; }
  int patches() const { return ny() * nx(); }
  int patch_len() const { return channels * ps * ps; }
  T* patch(int i) { return data.data() + static_cast<size_t>(i) * patch_len(); }
  const T* patch(int i) const { return data.data() + static_cast<size_t>(i) * patch_len(); }
};

using ImagePatches = PatchGridT<float>;
using MaskPatches = PatchGridT<uint8_t>;

ImagePatches unfold(const ImageGrid& img, int ps);
MaskPatches unfold(const LabelGrid& mask, int ps);
ImageGrid fold(const ImagePatches& patches);
LabelGrid fold(const MaskPatches& patches);

// A sampled corruption, serializable as one JSON object per line so a run is
// exactly replayable. mode is "tiling" (whole-grid unfold) or "rects"
// (explicit equally-sized rectangles, e.g. the five facial landmarks).
struct CorruptionRecord {
  std::string kind;  // shuffle | blackout | blur | puzzle
  std::string mode = "tiling";
  int ps = 0;
  std::vector<Rect> rects;
  int num_patch = 0;
  std::vector<int> indices;             // sampled slots, in sampling order
  std::vector<int> perm;                // full slot permutation (shuffle)
  std::vector<std::vector<int>> perms;  // puzzle permutations
  int kernel_size = 0;
  double sigma = 0.0;
  uint64_t seed = 0;
};

std::string record_to_json(const CorruptionRecord& rec);
CorruptionRecord record_from_json(const std::string& line);

// Samplers. Sampling happens once per record; applying the same record to an
// image and its mask corrupts them consistently.
CorruptionRecord make_shuffle(int h, int w, int ps, int num_patch, uint64_t seed);
CorruptionRecord make_blackout(int h, int w, int ps, int num_patch, uint64_t seed);
CorruptionRecord make_blur(int h, int w, int ps, int num_patch, int kernel_size, double sigma,
                           uint64_t seed);
CorruptionRecord make_puzzles(int h, int w, int ps, int num_perm, uint64_t seed);

CorruptionRecord make_shuffle_rects(const std::vector<Rect>& rects, int num_patch, uint64_t seed);
CorruptionRecord make_blackout_rects(const std::vector<Rect>& rects, int num_patch, uint64_t seed);
CorruptionRecord make_blur_rects(const std::vector<Rect>& rects, int num_patch, int kernel_size,
                                 double sigma, uint64_t seed);
CorruptionRecord make_puzzles_rects(const std::vector<Rect>& rects, int num_perm, uint64_t seed);

// shuffle/blackout/blur. Blackout writes class 0 into masks; blur leaves
// masks untouched (class ids are not continuous).
void apply_corruption(ImageGrid& img, const CorruptionRecord& rec);
void apply_corruption(LabelGrid& mask, const CorruptionRecord& rec);

// puzzle: original first, then the permuted copies in sampling order.
std::vector<ImageGrid> apply_puzzles(const ImageGrid& img, const CorruptionRecord& rec);
std::vector<LabelGrid> apply_puzzles(const LabelGrid& mask, const CorruptionRecord& rec);

// Normalized 2-D Gaussian kernel exp(-(dx^2+dy^2)/(2 sigma^2))/Z.
std::vector<double> gaussian_kernel_2d(int kernel_size, double sigma);

}  // namespace grammarscope::corrupt
