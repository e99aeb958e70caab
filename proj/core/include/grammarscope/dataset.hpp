#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grammarscope/image.hpp"
#include "grammarscope/transforms.hpp"

namespace grammarscope::data {

enum class Layout { kFace, kRoom };

Layout parse_layout(const std::string& s);
const char* layout_name(Layout layout);
int layout_class_count(Layout layout);  // 7 face-like, 13 room-like

// Procedural stand-in dataset with a provable grammar: vertical bands with
// jittered boundaries, plus (for face layouts) background margins that make
// the mirrored landmark patches pixel-distinguishable while keeping their
// class histograms identical.
struct SyntheticSpec {
  Layout layout = Layout::kFace;
  int h = 64, w = 64;
  int jitter_pos = 2;        // per-part boundary/position jitter, pixels
  float color_jitter = 0.06f;  // per-part, per-channel additive amplitude
  int count = 0;
  uint64_t seed = 0;
};

void validate_spec(const SyntheticSpec& spec);  // parts must stay on canvas

struct SamplePair {
  ImageGrid image;
  LabelGrid mask;
};

// Pure function of (spec, spec.seed + index).
SamplePair generate_sample(const SyntheticSpec& spec, int index);

// Nominal (zero-jitter) top-to-bottom band classes, for grammar checks.
std::vector<int> layout_band_classes(Layout layout);

// Five canonical part centers (left eye, right eye, nose, mouth-left,
// mouth-right) for landmark-anchored corruption and five-crop traversal.
std::vector<std::pair<int, int>> face_anchor_centers(int h, int w);  // (cx, cy)
std::vector<Rect> face_anchor_rects(int h, int w, int ps);

struct ManifestEntry {
  std::string image;  // relative to the manifest's directory
  std::string mask;   // empty if none
};

struct DatasetManifest {
  std::string dir;  // directory the entries are relative to
  std::vector<ManifestEntry> entries;

  std::string image_path(size_t i) const { return dir + "/" + entries[i].image; }
  std::string mask_path(size_t i) const { return dir + "/" + entries[i].mask; }
  bool has_mask(size_t i) const { return !entries[i].mask.empty(); }
  size_t size() const { return entries.size(); }
};

// One line per entry: "<image>\t<mask-or-dash>".
void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

// Writes sample files sample_%05d.{ppm,pgm} under out_dir.
DatasetManifest write_dataset(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace grammarscope::data
