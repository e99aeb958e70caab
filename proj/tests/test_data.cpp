#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>

#include "grammarscope/dataset.hpp"
#include "grammarscope/image.hpp"
#include "grammarscope/transforms.hpp"
#include "testutil.hpp"

using namespace grammarscope;
using namespace grammarscope::data;

namespace {

ImageGrid random_image(int h, int w, Rng& rng) {
  ImageGrid img(h, w);
  for (auto& v : img.px) v = static_cast<float>(rng.uniform_int(256)) / 255.f;
  return img;
}

LabelGrid random_mask(int h, int w, int classes, Rng& rng) {
  LabelGrid mask(h, w, classes);
  for (auto& id : mask.ids) id = static_cast<uint8_t>(rng.uniform_int(classes));
  return mask;
}

}  // namespace

TEST_CASE("ppm: all-black file loads as zeros") {
  testutil::TempDir tmp("ppm0");
  const std::string path = tmp.sub("black.ppm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "P6\n2 2\n255\n";
    const char zeros[12] = {};
    os.write(zeros, 12);
  }
  const ImageGrid img = load_image(path);
  CHECK(img.h == 2);
  CHECK(img.w == 2);
  for (float v : img.px) CHECK(v == 0.f);
}

TEST_CASE("ppm: save then load returns identical 8-bit values") {
  testutil::TempDir tmp("ppm1");
  Rng rng(42);
  const ImageGrid img = random_image(8, 8, rng);
  save_image(img, tmp.sub("a.ppm"));
  const ImageGrid back = load_image(tmp.sub("a.ppm"));
  CHECK(back.px == img.px);  // exact: source values are 8-bit quantized
}

TEST_CASE("ppm: maxval other than 255 is an unsupported-format error") {
  testutil::TempDir tmp("ppm2");
  const std::string path = tmp.sub("m.ppm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "P6\n1 1\n65535\n";
    os << "aaaaaa";
  }
  CHECK_THROWS_WITH_AS(load_image(path), doctest::Contains("maxval"), Error);
}

TEST_CASE("ppm: malformed header and truncated payload are errors") {
  testutil::TempDir tmp("ppm3");
  {
    std::ofstream os(tmp.sub("bad.ppm"), std::ios::binary);
    os << "P5\n2 2\n255\n????";
  }
  CHECK_THROWS_AS(load_image(tmp.sub("bad.ppm")), Error);
  {
    std::ofstream os(tmp.sub("trunc.ppm"), std::ios::binary);
    os << "P6\n4 4\n255\n";
    os << "short";
  }
  CHECK_THROWS_AS(load_image(tmp.sub("trunc.ppm")), Error);
}

TEST_CASE("pgm: uniform-zero mask with C=7 loads as all zeros") {
  testutil::TempDir tmp("pgm0");
  const std::string path = tmp.sub("z.pgm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "P5\n#C=7\n4 4\n255\n";
    const char zeros[16] = {};
    os.write(zeros, 16);
  }
  const LabelGrid mask = load_mask(path);
  CHECK(mask.classes == 7);
  for (uint8_t id : mask.ids) CHECK(id == 0);
}

TEST_CASE("pgm: random mask round-trips exactly") {
  testutil::TempDir tmp("pgm1");
  Rng rng(7);
  const LabelGrid mask = random_mask(9, 5, 13, rng);
  save_mask(mask, tmp.sub("m.pgm"));
  const LabelGrid back = load_mask(tmp.sub("m.pgm"));
  CHECK(back.classes == 13);
  CHECK(back.ids == mask.ids);
}

TEST_CASE("pgm: pixel value at or above C is an out-of-range error") {
  testutil::TempDir tmp("pgm2");
  const std::string path = tmp.sub("bad.pgm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "P5\n#C=7\n1 1\n255\n";
    const char v = 7;
    os.write(&v, 1);
  }
  CHECK_THROWS_WITH_AS(load_mask(path), doctest::Contains("out of range"), Error);
}

TEST_CASE("synthetic generation is a pure function of spec and seed") {
  SyntheticSpec spec;
  spec.layout = Layout::kFace;
  spec.count = 2;
  spec.seed = 77;
  const SamplePair a0 = generate_sample(spec, 0);
  const SamplePair a0_again = generate_sample(spec, 0);
  CHECK(a0.image.px == a0_again.image.px);
  CHECK(a0.mask.ids == a0_again.mask.ids);

  SUBCASE("zero jitter makes samples identical") {
    spec.jitter_pos = 0;
    spec.color_jitter = 0.f;
    const SamplePair s0 = generate_sample(spec, 0);
    const SamplePair s1 = generate_sample(spec, 1);
    CHECK(s0.image.px == s1.image.px);
    CHECK(s0.mask.ids == s1.mask.ids);
  }
}

TEST_CASE("synthetic face masks follow the band grammar on 1000 samples") {
  SyntheticSpec spec;
  spec.layout = Layout::kFace;
  spec.count = 1000;
  spec.seed = 1;
  const std::vector<int> band_order = layout_band_classes(Layout::kFace);
  for (int i = 0; i < spec.count; ++i) {
    const SamplePair s = generate_sample(spec, i);
    // scripted scan: dominant non-background class per row, collapsed runs
    std::vector<int> dominant_seq;
    for (int y = 0; y < s.mask.h; ++y) {
      std::vector<int> counts(s.mask.classes, 0);
      for (int x = 0; x < s.mask.w; ++x) counts[s.mask.at(y, x)] += 1;
      int best = 1;
      for (int c = 2; c < s.mask.classes; ++c)
        if (counts[c] > counts[best]) best = c;
      if (counts[best] == 0) continue;  // background-only row
      if (dominant_seq.empty() || dominant_seq.back() != best) dominant_seq.push_back(best);
    }
    REQUIRE(dominant_seq == band_order);
  }
}

TEST_CASE("synthetic room masks keep ceiling above wall above floor") {
  SyntheticSpec spec;
  spec.layout = Layout::kRoom;
  spec.count = 50;
  spec.seed = 5;
  for (int i = 0; i < spec.count; ++i) {
    const SamplePair s = generate_sample(spec, i);
    double sum_row[3] = {0, 0, 0};
    int64_t count[3] = {0, 0, 0};
    for (int y = 0; y < s.mask.h; ++y)
      for (int x = 0; x < s.mask.w; ++x) {
        const int c = s.mask.at(y, x);
        if (c < 3) {
          sum_row[c] += y;
          count[c] += 1;
        }
      }
    REQUIRE(count[0] > 0);
    REQUIRE(count[1] > 0);
    REQUIRE(count[2] > 0);
    CHECK(sum_row[0] / count[0] < sum_row[1] / count[1]);
    CHECK(sum_row[1] / count[1] < sum_row[2] / count[2]);
  }
}

TEST_CASE("jitter too large for the band gaps is rejected") {
  SyntheticSpec spec;
  spec.jitter_pos = 32;
  spec.count = 1;
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("jitter"), Error);
}

TEST_CASE("resize to the same dims is the identity") {
  Rng rng(3);
  const ImageGrid img = random_image(6, 10, rng);
  const ImageGrid same = resize_image(img, 6, 10);
  for (size_t i = 0; i < img.px.size(); ++i) CHECK(same.px[i] == doctest::Approx(img.px[i]).epsilon(1e-6));
  const LabelGrid mask = random_mask(6, 10, 5, rng);
  CHECK(resize_mask(mask, 6, 10).ids == mask.ids);
}

TEST_CASE("nearest resize of a uniform mask stays uniform and never invents classes") {
  const LabelGrid uniform(7, 7, 4, 2);
  const LabelGrid up = resize_mask(uniform, 13, 3);
  for (uint8_t id : up.ids) CHECK(id == 2);

  Rng rng(9);
  const LabelGrid mask = random_mask(8, 8, 6, rng);
  std::set<uint8_t> source(mask.ids.begin(), mask.ids.end());
  const LabelGrid small = resize_mask(mask, 3, 5);
  for (uint8_t id : small.ids) CHECK(source.count(id) == 1);
}

TEST_CASE("bilinear downscale of a checkerboard averages to one half") {
  ImageGrid board(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) board.at(y, x, c) = static_cast<float>((x + y) % 2);
  const ImageGrid half = resize_image(board, 2, 2);
  // oracle: output samples land on 2x2 cell centers, each averaging {0,1,1,0}
  for (float v : half.px) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("crop with out-of-bounds rect is an error") {
  Rng rng(1);
  const ImageGrid img = random_image(8, 8, rng);
  CHECK_THROWS_AS(crop(img, Rect{4, 4, 8, 8}), Error);
  CHECK_THROWS_AS(crop(img, Rect{-1, 0, 4, 4}), Error);
  const ImageGrid ok = crop(img, Rect{2, 1, 3, 4});
  CHECK(ok.w == 3);
  CHECK(ok.h == 4);
  CHECK(ok.at(0, 0, 0) == img.at(1, 2, 0));
}

TEST_CASE("zero-strength photometric jitter is the identity") {
  Rng rng(8);
  const ImageGrid img = random_image(5, 5, rng);
  const PhotoSpec spec = sample_photometric({0.f, 0.f}, rng);
  const ImageGrid out = apply_photometric(img, spec);
  CHECK(out.px == img.px);
}

TEST_CASE("flip twice is the identity; geometric keeps the class histogram of the crop") {
  Rng rng(21);
  const ImageGrid img = random_image(6, 8, rng);
  CHECK(flip_horizontal(flip_horizontal(img)).px == img.px);

  const LabelGrid mask = random_mask(12, 16, 5, rng);
  const GeoSpec spec{Rect{4, 2, 8, 8}, true};
  const LabelGrid moved = apply_geometric(mask, spec);
  std::vector<int> hist_out(5, 0), hist_crop(5, 0);
  for (uint8_t id : moved.ids) hist_out[id] += 1;
  const LabelGrid cropped = crop(mask, spec.crop);
  for (uint8_t id : cropped.ids) hist_crop[id] += 1;
  CHECK(hist_out == hist_crop);
}

TEST_CASE("paired geometric transforms keep pixel-label correspondence (marker pixel)") {
  ImageGrid img(16, 16, 0.25f);
  LabelGrid mask(16, 16, 3, 0);
  img.at(5, 9, 0) = 1.f;  // marker
  mask.at(5, 9) = 2;
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const GeoSpec spec = sample_geometric(16, 16, rng, 4);
    const ImageGrid im2 = apply_geometric(img, spec);
    const LabelGrid mk2 = apply_geometric(mask, spec);
    for (int y = 0; y < im2.h; ++y)
      for (int x = 0; x < im2.w; ++x)
        CHECK((im2.at(y, x, 0) == 1.f) == (mk2.at(y, x) == 2));
  }
}

TEST_CASE("scale_geometric rounds coordinates and preserves the flip flag") {
  const GeoSpec spec{Rect{64, 64, 128, 128}, true};
  CHECK(scale_geometric(spec, 1.0).crop == spec.crop);
  const GeoSpec quarter = scale_geometric(spec, 0.25);
  CHECK(quarter.crop == Rect{16, 16, 32, 32});
  CHECK(quarter.flip == true);
}

TEST_CASE("scaled spec selects the same relative region on a downsampled grid") {
  // index grids: full-res pixel (y,x) carries value y*W+x; the 4x-downsampled
  // grid carries the value of its top-left source pixel.
  const int h = 32, w = 32;
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const GeoSpec spec = sample_geometric(h, w, rng, 4);
    const GeoSpec small = scale_geometric(spec, 0.25);
    // corners of the scaled crop, mapped back to full resolution, must land
    // within one (downsampled) pixel of the original crop corners
    CHECK(std::abs(small.crop.x * 4 - spec.crop.x) <= 4);
    CHECK(std::abs(small.crop.y * 4 - spec.crop.y) <= 4);
    CHECK(std::abs((small.crop.x + small.crop.w) * 4 - (spec.crop.x + spec.crop.w)) <= 4);
    CHECK(std::abs((small.crop.y + small.crop.h) * 4 - (spec.crop.y + spec.crop.h)) <= 4);
  }
}

TEST_CASE("manifest save/load round-trips entries") {
  testutil::TempDir tmp("manifest");
  DatasetManifest m;
  m.dir = tmp.str();
  m.entries.push_back({"img0.ppm", "msk0.pgm"});
  m.entries.push_back({"img1.ppm", ""});
  save_manifest(tmp.sub("m.txt"), m);
  const DatasetManifest back = load_manifest(tmp.sub("m.txt"));
  REQUIRE(back.size() == 2);
  CHECK(back.entries[0].image == "img0.ppm");
  CHECK(back.entries[0].mask == "msk0.pgm");
  CHECK(back.entries[1].mask.empty());
  CHECK(back.dir == tmp.str());
}

TEST_CASE("write_dataset is bit-identical for the same spec and seed") {
  testutil::TempDir tmp("dataset");
  SyntheticSpec spec;
  spec.count = 4;
  spec.seed = 99;
  write_dataset(spec, tmp.sub("a"));
  write_dataset(spec, tmp.sub("b"));
  for (int i = 0; i < spec.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05d.ppm", i);
    std::ifstream fa(tmp.sub("a") + "/" + name, std::ios::binary);
    std::ifstream fb(tmp.sub("b") + "/" + name, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), {});
    const std::string bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba == bb);
  }
}

TEST_CASE("face anchor rects are disjoint, in bounds, and mirror-symmetric") {
  const int h = 64, w = 64, ps = 16;
  const std::vector<Rect> rects = face_anchor_rects(h, w, ps);
  REQUIRE(rects.size() == 5);
  for (const Rect& r : rects) CHECK(rect_in_bounds(r, h, w));
  for (size_t i = 0; i < rects.size(); ++i)
    for (size_t j = i + 1; j < rects.size(); ++j) {
      const bool overlap = rects[i].x < rects[j].x + rects[j].w && rects[j].x < rects[i].x + rects[i].w &&
                           rects[i].y < rects[j].y + rects[j].h && rects[j].y < rects[i].y + rects[i].h;
      CHECK_FALSE(overlap);
    }
  // left/right anchor pairs mirror exactly, so their band histograms match
  CHECK(rects[0].x + rects[0].w + rects[1].x == w);
  CHECK(rects[3].x + rects[3].w + rects[4].x == w);
}
