#pragma once

#include <stdexcept>
#include <string>

namespace grammarscope {

// Single exception type for contract violations (bad dims, malformed files,
// missing artifacts). The CLI turns these into a machine-readable error line.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace grammarscope
