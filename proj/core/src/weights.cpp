#include "grammarscope/weights.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace grammarscope::num {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

float u32_to_f32(uint32_t v) {
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

void save_weights(const std::string& path, const std::map<std::string, DenseArray>& arrays) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_weights: cannot open " + path);
  os.write("IGWT", 4);
  put_u32(os, kWeightFormatVersion);
  for (const auto& [name, arr] : arrays) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(arr.dims.size()));
    for (int d : arr.dims) put_u32(os, static_cast<uint32_t>(d));
    for (float f : arr.data) put_f32(os, f);
  }
  require(os.good(), "save_weights: write failed for " + path);
}

std::map<std::string, DenseArray> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_weights: cannot open " + path);
  char magic[4];
  require(static_cast<bool>(is.read(magic, 4)) && std::memcmp(magic, "IGWT", 4) == 0,
          "load_weights: bad magic in " + path);
  uint32_t version = 0;
  require(get_u32(is, version) && version == kWeightFormatVersion,
          "load_weights: unsupported version in " + path);

  std::map<std::string, DenseArray> out;
  for (;;) {
    uint32_t name_len = 0;
    if (!get_u32(is, name_len)) break;  // clean EOF
    require(name_len > 0 && name_len < 4096, "load_weights: implausible name length");
    std::string name(name_len, '\0');
    require(static_cast<bool>(is.read(name.data(), name_len)), "load_weights: truncated name");
    uint32_t rank = 0;
    require(get_u32(is, rank) && rank > 0 && rank <= 8, "load_weights: bad rank for " + name);
    std::vector<int> dims(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t d = 0;
      require(get_u32(is, d) && d > 0, "load_weights: bad dim for " + name);
      dims[i] = static_cast<int>(d);
      n *= d;
    }
    DenseArray arr(dims);
    for (int64_t i = 0; i < n; ++i) {
      uint32_t v = 0;
      require(get_u32(is, v), "load_weights: truncated data for " + name);
      arr.data[static_cast<size_t>(i)] = u32_to_f32(v);
    }
    out.emplace(std::move(name), std::move(arr));
  }
  return out;
}

}  // namespace grammarscope::num
