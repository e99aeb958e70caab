#include "grammarscope/corrupt.hpp"

#include <algorithm>
#include <cmath>

#include "grammarscope/rng.hpp"
#include "json.hpp"

namespace grammarscope::corrupt {

namespace {

void check_divisible(int h, int w, int ps) {
  require(ps > 0 && h % ps == 0 && w % ps == 0,
          "patch ops: dims " + std::to_string(w) + "x" + std::to_string(h) +
              " not divisible by ps " + std::to_string(ps));
}

template <typename T, typename Grid>
PatchGridT<T> unfold_impl(const Grid& grid, int ps, int channels, const T* plane, int classes) {
  check_divisible(grid.h, grid.w, ps);
  PatchGridT<T> out;
  out.grid_h = grid.h;
  out.grid_w = grid.w;
  out.channels = channels;
  out.ps = ps;
  out.classes = classes;
  out.data.resize(static_cast<size_t>(out.patches()) * out.patch_len());
  const int nx = out.nx();
  for (int p = 0; p < out.patches(); ++p) {
    const int py = p / nx, px = p % nx;
    T* dst = out.patch(p);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          dst[(c * ps + y) * ps + x] =
              plane[(static_cast<size_t>(py * ps + y) * grid.w + (px * ps + x)) * channels + c];
  }
  return out;
}

template <typename T, typename Grid>
void fold_impl(const PatchGridT<T>& patches, Grid& grid, T* plane) {
  const int ps = patches.ps, nx = patches.nx(), channels = patches.channels;
  for (int p = 0; p < patches.patches(); ++p) {
    const int py = p / nx, px = p % nx;
    const T* src = patches.patch(p);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          plane[(static_cast<size_t>(py * ps + y) * grid.w + (px * ps + x)) * channels + c] =
              src[(c * ps + y) * ps + x];
  }
}

// perm semantics follow the gather convention: slot i receives former patch
// perm[i].
template <typename T>
void permute_patches(PatchGridT<T>& patches, const std::vector<int>& perm) {
  require(static_cast<int>(perm.size()) == patches.patches(), "permute_patches: perm length mismatch");
  std::vector<T> old = patches.data;
  const int len = patches.patch_len();
  for (int i = 0; i < patches.patches(); ++i)
    std::copy_n(old.data() + static_cast<size_t>(perm[i]) * len, len, patches.patch(i));
}

// Cyclic rule: slot indices[j] receives former patch indices[(j+1) % n].
std::vector<int> cyclic_perm(int p, const std::vector<int>& indices) {
  std::vector<int> perm(p);
  for (int i = 0; i < p; ++i) perm[i] = i;
  const int n = static_cast<int>(indices.size());
  for (int j = 0; j < n; ++j) perm[indices[j]] = indices[(j + 1) % n];
  return perm;
}

int slot_count(const CorruptionRecord& rec, int h, int w) {
  if (rec.mode == "rects") return static_cast<int>(rec.rects.size());
  check_divisible(h, w, rec.ps);
  return (h / rec.ps) * (w / rec.ps);
}

void check_rects(const std::vector<Rect>& rects) {
  require(!rects.empty(), "rect corruption: empty rect list");
  for (const Rect& r : rects) {
    require(r.w == rects[0].w && r.h == rects[0].h, "rect corruption: rects must share dims");
    require(r.w > 0 && r.h > 0, "rect corruption: degenerate rect");
  }
}

template <typename Grid>
void check_rect_bounds(const Grid& grid, const std::vector<Rect>& rects) {
  for (const Rect& r : rects)
    require(data::rect_in_bounds(r, grid.h, grid.w), "rect corruption: rect out of bounds");
}

// Per-channel Gaussian blur of one image rect, reflect padding inside the
// rect so corruption stays strictly patch-local.
void blur_rect(ImageGrid& img, const Rect& r, const std::vector<double>& kernel, int ksize) {
  const int rad = ksize / 2;
  std::vector<float> src(static_cast<size_t>(r.h) * r.w * 3);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int c = 0; c < 3; ++c)
        src[(static_cast<size_t>(y) * r.w + x) * 3 + c] = img.at(r.y + y, r.x + x, c);
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = -rad; dy <= rad; ++dy)
          for (int dx = -rad; dx <= rad; ++dx) {
            const int sy = reflect(y + dy, r.h);
            const int sx = reflect(x + dx, r.w);
            acc += kernel[static_cast<size_t>(dy + rad) * ksize + (dx + rad)] *
                   src[(static_cast<size_t>(sy) * r.w + sx) * 3 + c];
          }
        img.at(r.y + y, r.x + x, c) = static_cast<float>(acc);
      }
}

Rect slot_rect(const CorruptionRecord& rec, int grid_w, int slot) {
  if (rec.mode == "rects") return rec.rects[slot];
  const int nx = grid_w / rec.ps;
  return Rect{(slot % nx) * rec.ps, (slot / nx) * rec.ps, rec.ps, rec.ps};
}

template <typename Grid, typename T>
void copy_rect(const Grid& src_grid, const Rect& src, Grid& dst_grid, const Rect& dst, int channels,
               const T* splane, T* dplane) {
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < channels; ++c)
        dplane[(static_cast<size_t>(dst.y + y) * dst_grid.w + (dst.x + x)) * channels + c] =
            splane[(static_cast<size_t>(src.y + y) * src_grid.w + (src.x + x)) * channels + c];
}

template <typename Grid, typename T>
void apply_rect_perm(Grid& grid, const CorruptionRecord& rec, int channels, T* plane,
                     const std::vector<int>& perm) {
  const Grid original = grid;
  const T* splane;
  if constexpr (std::is_same_v<Grid, ImageGrid>) {
    splane = original.px.data();
  } else {
    splane = original.ids.data();
  }
  for (size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] == static_cast<int>(i)) continue;
    copy_rect(original, rec.rects[perm[i]], grid, rec.rects[i], channels, splane, plane);
  }
}

}  // namespace

ImagePatches unfold(const ImageGrid& img, int ps) {
  return unfold_impl<float>(img, ps, 3, img.px.data(), 0);
}

MaskPatches unfold(const LabelGrid& mask, int ps) {
  return unfold_impl<uint8_t>(mask, ps, 1, mask.ids.data(), mask.classes);
}

ImageGrid fold(const ImagePatches& patches) {
  ImageGrid out(patches.grid_h, patches.grid_w);
  fold_impl(patches, out, out.px.data());
  return out;
}

LabelGrid fold(const MaskPatches& patches) {
  LabelGrid out(patches.grid_h, patches.grid_w, patches.classes > 0 ? patches.classes : 256);
  fold_impl(patches, out, out.ids.data());
  return out;
}

std::string record_to_json(const CorruptionRecord& rec) {
  nlohmann::json j;
  j["kind"] = rec.kind;
  j["mode"] = rec.mode;
  j["ps"] = rec.ps;
  if (!rec.rects.empty()) {
    nlohmann::json rects = nlohmann::json::array();
    for (const Rect& r : rec.rects) rects.push_back({r.x, r.y, r.w, r.h});
    j["rects"] = rects;
  }
  j["num_patch"] = rec.num_patch;
  j["indices"] = rec.indices;
  if (!rec.perm.empty()) j["perm"] = rec.perm;
  if (!rec.perms.empty()) j["perms"] = rec.perms;
  if (rec.kernel_size > 0) {
    j["kernel_size"] = rec.kernel_size;
    j["sigma"] = rec.sigma;
  }
  j["seed"] = rec.seed;
  return j.dump();
}

CorruptionRecord record_from_json(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  CorruptionRecord rec;
  rec.kind = j.at("kind").get<std::string>();
  rec.mode = j.value("mode", "tiling");
  rec.ps = j.value("ps", 0);
  if (j.contains("rects"))
    for (const auto& r : j["rects"]) rec.rects.push_back({r[0], r[1], r[2], r[3]});
  rec.num_patch = j.value("num_patch", 0);
  rec.indices = j.value("indices", std::vector<int>{});
  rec.perm = j.value("perm", std::vector<int>{});
  rec.perms = j.value("perms", std::vector<std::vector<int>>{});
  rec.kernel_size = j.value("kernel_size", 0);
  rec.sigma = j.value("sigma", 0.0);
  rec.seed = j.value("seed", uint64_t{0});
  return rec;
}

CorruptionRecord make_shuffle(int h, int w, int ps, int num_patch, uint64_t seed) {
  check_divisible(h, w, ps);
  const int p = (h / ps) * (w / ps);
  require(num_patch >= 2 && num_patch <= p,
          "make_shuffle: num_patch " + std::to_string(num_patch) + " outside [2," + std::to_string(p) + "]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "shuffle";
  rec.ps = ps;
  rec.num_patch = num_patch;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  rec.perm = cyclic_perm(p, rec.indices);
  return rec;
}

CorruptionRecord make_blackout(int h, int w, int ps, int num_patch, uint64_t seed) {
  check_divisible(h, w, ps);
  const int p = (h / ps) * (w / ps);
  require(num_patch >= 1 && num_patch <= p, "make_blackout: num_patch outside [1,p]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "blackout";
  rec.ps = ps;
  rec.num_patch = num_patch;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  return rec;
}

CorruptionRecord make_blur(int h, int w, int ps, int num_patch, int kernel_size, double sigma,
                           uint64_t seed) {
  check_divisible(h, w, ps);
  require(kernel_size >= 1 && kernel_size % 2 == 1, "make_blur: kernel_size must be odd");
  require(sigma > 0.0, "make_blur: sigma must be positive");
  const int p = (h / ps) * (w / ps);
  require(num_patch >= 1 && num_patch <= p, "make_blur: num_patch outside [1,p]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "blur";
  rec.ps = ps;
  rec.num_patch = num_patch;
  rec.kernel_size = kernel_size;
  rec.sigma = sigma;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  return rec;
}

CorruptionRecord make_puzzles(int h, int w, int ps, int num_perm, uint64_t seed) {
  check_divisible(h, w, ps);
  require(num_perm >= 0, "make_puzzles: negative num_perm");
  const int p = (h / ps) * (w / ps);
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "puzzle";
  rec.ps = ps;
  rec.num_patch = num_perm;
  rec.seed = seed;
  for (int i = 0; i < num_perm; ++i) rec.perms.push_back(rng.permutation(p));
  return rec;
}

CorruptionRecord make_shuffle_rects(const std::vector<Rect>& rects, int num_patch, uint64_t seed) {
  check_rects(rects);
  const int p = static_cast<int>(rects.size());
  require(num_patch >= 2 && num_patch <= p, "make_shuffle_rects: num_patch outside [2,#rects]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "shuffle";
  rec.mode = "rects";
  rec.rects = rects;
  rec.num_patch = num_patch;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  rec.perm = cyclic_perm(p, rec.indices);
  return rec;
}

CorruptionRecord make_blackout_rects(const std::vector<Rect>& rects, int num_patch, uint64_t seed) {
  check_rects(rects);
  const int p = static_cast<int>(rects.size());
  require(num_patch >= 1 && num_patch <= p, "make_blackout_rects: num_patch outside [1,#rects]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "blackout";
  rec.mode = "rects";
  rec.rects = rects;
  rec.num_patch = num_patch;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  return rec;
}

CorruptionRecord make_blur_rects(const std::vector<Rect>& rects, int num_patch, int kernel_size,
                                 double sigma, uint64_t seed) {
  check_rects(rects);
  require(kernel_size >= 1 && kernel_size % 2 == 1, "make_blur_rects: kernel_size must be odd");
  require(sigma > 0.0, "make_blur_rects: sigma must be positive");
  const int p = static_cast<int>(rects.size());
  require(num_patch >= 1 && num_patch <= p, "make_blur_rects: num_patch outside [1,#rects]");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "blur";
  rec.mode = "rects";
  rec.rects = rects;
  rec.num_patch = num_patch;
  rec.kernel_size = kernel_size;
  rec.sigma = sigma;
  rec.seed = seed;
  rec.indices = rng.sample(p, num_patch);
  return rec;
}

CorruptionRecord make_puzzles_rects(const std::vector<Rect>& rects, int num_perm, uint64_t seed) {
  check_rects(rects);
  require(num_perm >= 0, "make_puzzles_rects: negative num_perm");
  Rng rng(seed);
  CorruptionRecord rec;
  rec.kind = "puzzle";
  rec.mode = "rects";
  rec.rects = rects;
  rec.num_patch = num_perm;
  rec.seed = seed;
  for (int i = 0; i < num_perm; ++i) rec.perms.push_back(rng.permutation(static_cast<int>(rects.size())));
  return rec;
}

std::vector<double> gaussian_kernel_2d(int kernel_size, double sigma) {
  require(kernel_size >= 1 && kernel_size % 2 == 1, "gaussian_kernel_2d: kernel_size must be odd");
  require(sigma > 0.0, "gaussian_kernel_2d: sigma must be positive");
  const int rad = kernel_size / 2;
  std::vector<double> k(static_cast<size_t>(kernel_size) * kernel_size);
  double z = 0.0;
  for (int dy = -rad; dy <= rad; ++dy)
    for (int dx = -rad; dx <= rad; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[static_cast<size_t>(dy + rad) * kernel_size + (dx + rad)] = v;
      z += v;
    }
  for (double& v : k) v /= z;
  return k;
}

void apply_corruption(ImageGrid& img, const CorruptionRecord& rec) {
  const int p = slot_count(rec, img.h, img.w);
  for (int idx : rec.indices) require(idx >= 0 && idx < p, "apply_corruption: slot out of range");
  if (rec.mode == "rects") check_rect_bounds(img, rec.rects);

  if (rec.kind == "shuffle") {
    if (rec.mode == "tiling") {
      ImagePatches patches = unfold(img, rec.ps);
      permute_patches(patches, rec.perm);
      img = fold(patches);
    } else {
      apply_rect_perm(img, rec, 3, img.px.data(), rec.perm);
    }
  } else if (rec.kind == "blackout") {
    for (int slot : rec.indices) {
      const Rect r = slot_rect(rec, img.w, slot);
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x)
          for (int c = 0; c < 3; ++c) img.at(r.y + y, r.x + x, c) = 0.f;
    }
  } else if (rec.kind == "blur") {
    const std::vector<double> kernel = gaussian_kernel_2d(rec.kernel_size, rec.sigma);
    for (int slot : rec.indices) blur_rect(img, slot_rect(rec, img.w, slot), kernel, rec.kernel_size);
  } else {
    throw Error("apply_corruption: use apply_puzzles for kind 'puzzle'");
  }
}

void apply_corruption(LabelGrid& mask, const CorruptionRecord& rec) {
  const int p = slot_count(rec, mask.h, mask.w);
  for (int idx : rec.indices) require(idx >= 0 && idx < p, "apply_corruption: slot out of range");
  if (rec.mode == "rects") check_rect_bounds(mask, rec.rects);

  if (rec.kind == "shuffle") {
    if (rec.mode == "tiling") {
      MaskPatches patches = unfold(mask, rec.ps);
      permute_patches(patches, rec.perm);
      mask = fold(patches);
    } else {
      apply_rect_perm(mask, rec, 1, mask.ids.data(), rec.perm);
    }
  } else if (rec.kind == "blackout") {
    for (int slot : rec.indices) {
      const Rect r = slot_rect(rec, mask.w, slot);
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) mask.at(r.y + y, r.x + x) = 0;
    }
  } else if (rec.kind == "blur") {
    // class ids cannot be blurred; masks pass through
  } else {
    throw Error("apply_corruption: use apply_puzzles for kind 'puzzle'");
  }
}

std::vector<ImageGrid> apply_puzzles(const ImageGrid& img, const CorruptionRecord& rec) {
  require(rec.kind == "puzzle", "apply_puzzles: record kind is not 'puzzle'");
  std::vector<ImageGrid> out;
  out.push_back(img);
  for (const std::vector<int>& perm : rec.perms) {
    ImageGrid copy = img;
    if (rec.mode == "tiling") {
      ImagePatches patches = unfold(copy, rec.ps);
      permute_patches(patches, perm);
      copy = fold(patches);
    } else {
      check_rect_bounds(copy, rec.rects);
      apply_rect_perm(copy, rec, 3, copy.px.data(), perm);
    }
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<LabelGrid> apply_puzzles(const LabelGrid& mask, const CorruptionRecord& rec) {
  require(rec.kind == "puzzle", "apply_puzzles: record kind is not 'puzzle'");
  std::vector<LabelGrid> out;
  out.push_back(mask);
  for (const std::vector<int>& perm : rec.perms) {
    LabelGrid copy = mask;
    if (rec.mode == "tiling") {
      MaskPatches patches = unfold(copy, rec.ps);
      permute_patches(patches, perm);
      copy = fold(patches);
    } else {
      check_rect_bounds(copy, rec.rects);
      apply_rect_perm(copy, rec, 1, copy.ids.data(), perm);
    }
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace grammarscope::corrupt
