#pragma once

#include <map>
#include <string>

#include "grammarscope/dense.hpp"

namespace grammarscope::num {

// Versioned binary weight container. Layout, all little-endian:
//   magic "IGWT", u32 version, then records until EOF:
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data (row-major).
inline constexpr uint32_t kWeightFormatVersion = 1;

void save_weights(const std::string& path, const std::map<std::string, DenseArray>& arrays);
std::map<std::string, DenseArray> load_weights(const std::string& path);

}  // namespace grammarscope::num
