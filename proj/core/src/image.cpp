#include "grammarscope/image.hpp"

#include <cmath>
#include <fstream>

namespace grammarscope::data {

namespace {

// Reads PNM header tokens, skipping whitespace and '#' comments. Comment
// lines are collected so the PGM loader can find "#C=".
struct PnmHeader {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  std::vector<std::string> comments;
};

std::string next_token(std::istream& is, std::vector<std::string>& comments) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      std::string line;
      while ((ch = is.get()) != EOF && ch != '\n') line.push_back(static_cast<char>(ch));
      comments.push_back(line);
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

PnmHeader read_header(std::istream& is, const std::string& path, const std::string& expected_magic) {
  PnmHeader hd;
  hd.magic = next_token(is, hd.comments);
  require(hd.magic == expected_magic,
          path + ": expected " + expected_magic + " header, got '" + hd.magic + "'");
  auto parse_int = [&](const char* what) {
    const std::string tok = next_token(is, hd.comments);
    require(!tok.empty(), path + ": truncated header (" + std::string(what) + ")");
    for (char c : tok) require(std::isdigit(static_cast<unsigned char>(c)), path + ": malformed " + what);
    return std::stoi(tok);
  };
  hd.w = parse_int("width");
  hd.h = parse_int("height");
  hd.maxval = parse_int("maxval");
  require(hd.w > 0 && hd.h > 0, path + ": non-positive dims");
  require(hd.maxval == 255, path + ": unsupported maxval " + std::to_string(hd.maxval));
  return hd;
}

uint8_t quantize(float v) {
  const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

}  // namespace

ImageGrid load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_image: cannot open " + path);
  const PnmHeader hd = read_header(is, path, "P6");
  ImageGrid img(hd.h, hd.w);
  std::vector<uint8_t> raw(static_cast<size_t>(hd.h) * hd.w * 3);
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(raw.data()),
                                    static_cast<std::streamsize>(raw.size()))),
          "load_image: truncated payload in " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.px[i] = static_cast<float>(raw[i]) / 255.f;
  return img;
}

void save_image(const ImageGrid& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_image: cannot open " + path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> raw(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) raw[i] = quantize(img.px[i]);
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(os.good(), "save_image: write failed for " + path);
}

LabelGrid load_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_mask: cannot open " + path);
  const PnmHeader hd = read_header(is, path, "P5");
  int classes = -1;
  for (const std::string& c : hd.comments) {
    if (c.rfind("C=", 0) == 0) classes = std::stoi(c.substr(2));
  }
  require(classes > 0 && classes <= 256, path + ": missing or bad #C= class count comment");
  LabelGrid mask(hd.h, hd.w, classes);
  std::vector<uint8_t> raw(static_cast<size_t>(hd.h) * hd.w);
  require(static_cast<bool>(is.read(reinterpret_cast<char*>(raw.data()),
                                    static_cast<std::streamsize>(raw.size()))),
          "load_mask: truncated payload in " + path);
  for (size_t i = 0; i < raw.size(); ++i) {
    require(raw[i] < classes, path + ": pixel value " + std::to_string(raw[i]) +
                                  " out of range for C=" + std::to_string(classes));
    mask.ids[i] = raw[i];
  }
  return mask;
}

void save_mask(const LabelGrid& mask, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_mask: cannot open " + path);
  os << "P5\n#C=" << mask.classes << "\n" << mask.w << " " << mask.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(mask.ids.data()), static_cast<std::streamsize>(mask.ids.size()));
  require(os.good(), "save_mask: write failed for " + path);
}

}  // namespace grammarscope::data
