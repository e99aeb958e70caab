#include "grammarscope/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace grammarscope::data {

namespace fs = std::filesystem;

Layout parse_layout(const std::string& s) {
  if (s == "face") return Layout::kFace;
  if (s == "room") return Layout::kRoom;
  throw Error("unknown layout '" + s + "' (expected face|room)");
}

const char* layout_name(Layout layout) { return layout == Layout::kFace ? "face" : "room"; }

int layout_class_count(Layout layout) { return layout == Layout::kFace ? 7 : 13; }

namespace {

// Face classes: 0 bg, 1 hair, 2 forehead, 3 eye, 4 nose, 5 mouth, 6 chin.
// Band boundaries in 64ths of the height; bands fill the face columns.
constexpr int kFaceBands64[] = {5, 13, 23, 30, 42, 54, 60};
constexpr int kFaceBandClasses[] = {1, 2, 3, 4, 5, 6};

// Room classes: 0 ceiling, 1 wall, 2 floor, then things 3..12.
constexpr int kRoomBands64[] = {0, 10, 44, 64};
constexpr int kRoomBandClasses[] = {0, 1, 2};

int scale64(int v64, int extent) { return static_cast<int>(std::lround(v64 * extent / 64.0)); }

int face_left(int w) { return static_cast<int>(std::lround(0.09 * w)); }

struct PartColor {
  float r, g, b;
};

// Background deliberately light and hair dark: a blacked-out patch lands far
// from every non-hair palette color.
constexpr PartColor kFacePalette[7] = {
    {0.82f, 0.82f, 0.84f},  // bg
    {0.22f, 0.14f, 0.08f},  // hair
    {0.94f, 0.78f, 0.66f},  // forehead
    {0.18f, 0.38f, 0.64f},  // eye
    {0.86f, 0.62f, 0.48f},  // nose
    {0.78f, 0.20f, 0.26f},  // mouth
    {0.90f, 0.72f, 0.58f},  // chin
};

constexpr PartColor kRoomPalette[13] = {
    {0.92f, 0.92f, 0.90f},  // ceiling
    {0.76f, 0.74f, 0.66f},  // wall
    {0.48f, 0.36f, 0.24f},  // floor
    {0.56f, 0.76f, 0.92f},  // window
    {0.86f, 0.50f, 0.30f},  // picture
    {0.10f, 0.10f, 0.14f},  // tv
    {0.62f, 0.46f, 0.30f},  // shelf
    {0.70f, 0.54f, 0.34f},  // table
    {0.30f, 0.52f, 0.30f},  // chair
    {0.40f, 0.30f, 0.52f},  // sofa
    {0.96f, 0.88f, 0.52f},  // lamp
    {0.58f, 0.20f, 0.24f},  // rug
    {0.34f, 0.26f, 0.20f},  // door
};

// Room things as nominal rects in 64ths: {class, x, y, w, h}.
struct ThingSpec {
  int cls, x, y, w, h;
};
constexpr ThingSpec kRoomThings[] = {
    {12, 2, 14, 6, 30},    // door
    {3, 41, 14, 10, 13},   // window
    {4, 23, 15, 5, 8},     // picture
    {6, 55, 13, 8, 25},    // shelf
    {5, 23, 28, 8, 8},     // tv
    {10, 56, 33, 4, 9},    // lamp
    {7, 19, 38, 15, 7},    // table
    {8, 10, 42, 7, 8},     // chair
    {9, 45, 45, 15, 8},    // sofa
    {11, 23, 54, 18, 6},   // rug
};

void fill_rect(ImageGrid& img, LabelGrid& mask, const Rect& r, int cls, const PartColor& color) {
  const int x0 = std::max(0, r.x), y0 = std::max(0, r.y);
  const int x1 = std::min(img.w, r.x + r.w), y1 = std::min(img.h, r.y + r.h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      mask.at(y, x) = static_cast<uint8_t>(cls);
      img.at(y, x, 0) = color.r;
      img.at(y, x, 1) = color.g;
      img.at(y, x, 2) = color.b;
    }
}

PartColor jittered(const PartColor& c, float amp, Rng& rng) {
  auto j = [&](float v) {
    return std::clamp(v + static_cast<float>(rng.uniform(-amp, amp)), 0.f, 1.f);
  };
  return {j(c.r), j(c.g), j(c.b)};
}

int min_band_gap(Layout layout, int h) {
  const int* b = layout == Layout::kFace ? kFaceBands64 : kRoomBands64;
  const int n = layout == Layout::kFace ? 7 : 4;
  int gap = h;
  for (int i = 0; i + 1 < n; ++i) gap = std::min(gap, scale64(b[i + 1], h) - scale64(b[i], h));
  return gap;
}

}  // namespace

std::vector<int> layout_band_classes(Layout layout) {
  if (layout == Layout::kFace) return {std::begin(kFaceBandClasses), std::end(kFaceBandClasses)};
  return {std::begin(kRoomBandClasses), std::end(kRoomBandClasses)};
}

void validate_spec(const SyntheticSpec& spec) {
  require(spec.h >= 16 && spec.w >= 16, "SyntheticSpec: dims too small (min 16)");
  require(spec.h % 4 == 0 && spec.w % 4 == 0, "SyntheticSpec: dims must be multiples of 4");
  require(spec.count >= 0, "SyntheticSpec: negative count");
  require(spec.jitter_pos >= 0, "SyntheticSpec: negative jitter");
  require(spec.color_jitter >= 0.f && spec.color_jitter <= 0.5f, "SyntheticSpec: color jitter out of range");
  const int gap = min_band_gap(spec.layout, spec.h);
  require(2 * spec.jitter_pos < gap,
          "SyntheticSpec: position jitter " + std::to_string(spec.jitter_pos) +
              " too large for band gap " + std::to_string(gap) + " (parts would leave their band)");
  if (spec.layout == Layout::kFace) {
    require(scale64(kFaceBands64[0], spec.h) - spec.jitter_pos >= 0 &&
                scale64(kFaceBands64[6], spec.h) + spec.jitter_pos <= spec.h,
            "SyntheticSpec: jitter pushes face off canvas");
  }
}

SamplePair generate_sample(const SyntheticSpec& spec, int index) {
  validate_spec(spec);
  Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(index)));
  const int C = layout_class_count(spec.layout);
  SamplePair out{ImageGrid(spec.h, spec.w), LabelGrid(spec.h, spec.w, C)};

  auto jitter = [&]() {
    return spec.jitter_pos == 0 ? 0 : rng.uniform_int(2 * spec.jitter_pos + 1) - spec.jitter_pos;
  };

  if (spec.layout == Layout::kFace) {
    fill_rect(out.image, out.mask, {0, 0, spec.w, spec.h}, 0,
              jittered(kFacePalette[0], spec.color_jitter, rng));
    int bounds[7];
    for (int i = 0; i < 7; ++i) bounds[i] = scale64(kFaceBands64[i], spec.h) + jitter();
    // Face columns are fixed (no horizontal jitter): the mirrored landmark
    // patches keep exactly equal background margins.
    const int x0 = face_left(spec.w);
    const int x1 = spec.w - x0;
    for (int band = 0; band < 6; ++band) {
      const int cls = kFaceBandClasses[band];
      fill_rect(out.image, out.mask, {x0, bounds[band], x1 - x0, bounds[band + 1] - bounds[band]},
                cls, jittered(kFacePalette[cls], spec.color_jitter, rng));
    }
  } else {
    int bounds[4];
    bounds[0] = 0;
    bounds[3] = spec.h;
    bounds[1] = scale64(kRoomBands64[1], spec.h) + jitter();
    bounds[2] = scale64(kRoomBands64[2], spec.h) + jitter();
    for (int band = 0; band < 3; ++band) {
      const int cls = kRoomBandClasses[band];
      fill_rect(out.image, out.mask, {0, bounds[band], spec.w, bounds[band + 1] - bounds[band]},
                cls, jittered(kRoomPalette[cls], spec.color_jitter, rng));
    }
    for (const ThingSpec& t : kRoomThings) {
      Rect r{scale64(t.x, spec.w) + jitter(), scale64(t.y, spec.h) + jitter(),
             std::max(1, scale64(t.w, spec.w)), std::max(1, scale64(t.h, spec.h))};
      r.x = std::clamp(r.x, 0, spec.w - r.w);
      r.y = std::clamp(r.y, 0, spec.h - r.h);
      fill_rect(out.image, out.mask, r, t.cls, jittered(kRoomPalette[t.cls], spec.color_jitter, rng));
    }
  }
  return out;
}

std::vector<std::pair<int, int>> face_anchor_centers(int h, int w) {
  const int off = std::max(1, static_cast<int>(std::lround(5.0 * w / 64.0)));
  const int left = face_left(w) + off;
  const int right = w - left;  // exact mirror of the left anchors
  const int eye_y = scale64(25, h);
  const int nose_y = scale64(37, h);
  const int mouth_y = scale64(50, h);
  return {{left, eye_y}, {right, eye_y}, {w / 2, nose_y}, {left, mouth_y}, {right, mouth_y}};
}

std::vector<Rect> face_anchor_rects(int h, int w, int ps) {
  require(ps > 0, "face_anchor_rects: ps must be positive");
  std::vector<Rect> rects;
  for (auto [cx, cy] : face_anchor_centers(h, w)) {
    Rect r{cx - ps / 2, cy - ps / 2, ps, ps};
    require(rect_in_bounds(r, h, w), "face_anchor_rects: ps " + std::to_string(ps) +
                                         " does not fit around anchor (" + std::to_string(cx) + "," +
                                         std::to_string(cy) + ")");
    rects.push_back(r);
  }
  return rects;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  require(os.good(), "save_manifest: cannot open " + path);
  for (const ManifestEntry& e : manifest.entries)
    os << e.image << "\t" << (e.mask.empty() ? "-" : e.mask) << "\n";
  require(os.good(), "save_manifest: write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "load_manifest: cannot open " + path);
  DatasetManifest m;
  m.dir = fs::path(path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    require(tab != std::string::npos, "load_manifest: missing tab in line '" + line + "'");
    ManifestEntry e;
    e.image = line.substr(0, tab);
    const std::string mask = line.substr(tab + 1);
    e.mask = mask == "-" ? "" : mask;
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest write_dataset(const SyntheticSpec& spec, const std::string& out_dir) {
  validate_spec(spec);
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.dir = out_dir;
  for (int i = 0; i < spec.count; ++i) {
    const SamplePair sample = generate_sample(spec, i);
    char img_name[32], mask_name[32];
    std::snprintf(img_name, sizeof img_name, "sample_%05d.ppm", i);
    std::snprintf(mask_name, sizeof mask_name, "sample_%05d.pgm", i);
    save_image(sample.image, out_dir + "/" + img_name);
    save_mask(sample.mask, out_dir + "/" + mask_name);
    m.entries.push_back({img_name, mask_name});
  }
  return m;
}

}  // namespace grammarscope::data
