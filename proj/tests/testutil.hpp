#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "grammarscope/dense.hpp"
#include "grammarscope/rng.hpp"
#include "grammarscope/tape.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

template <typename S>
grammarscope::num::DenseArrayT<S> random_array(std::vector<int> dims, grammarscope::Rng& rng,
                                               double lo = -1.0, double hi = 1.0) {
  grammarscope::num::DenseArrayT<S> arr(dims);
  for (auto& v : arr.data) v = static_cast<S>(rng.uniform(lo, hi));
  return arr;
}

// Central finite differences over every entry of every param leaf of a
// double tape, against the analytic backward. Returns the max relative
// error, with the standard max(|a|,|b|,1e-8) denominator.
inline double max_grad_rel_err(grammarscope::num::Tape64& tape, int loss, double eps = 1e-3) {
  namespace num = grammarscope::num;
  tape.forward(loss);
  tape.backward(loss);
  const std::vector<int> params = tape.params();
  std::vector<num::DenseArray64> analytic;
  for (int p : params) analytic.push_back(tape.grad(p));

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int p = params[pi];
    num::DenseArray64 saved = tape.value(p);
    for (int64_t i = 0; i < saved.size(); ++i) {
      num::DenseArray64 plus = saved, minus = saved;
      plus.data[i] += eps;
      minus.data[i] -= eps;
      tape.set_value(p, plus);
      const double f_plus = tape.forward(loss).data[0];
      tape.set_value(p, minus);
      const double f_minus = tape.forward(loss).data[0];
      tape.set_value(p, saved);
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      worst = std::max(worst, rel_err(fd, analytic[pi].data[i]));
    }
  }
  tape.forward(loss);
  return worst;
}

// Fresh temp dir under the build tree; removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("gs_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

// Adjusted Rand index by exhaustive pair counting (independent oracle).
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size();
  double ss = 0, sd = 0, ds = 0, dd = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const bool same_a = a[i] == a[j], same_b = b[i] == b[j];
      if (same_a && same_b) ss += 1;
      else if (same_a) sd += 1;
      else if (same_b) ds += 1;
      else dd += 1;
    }
  const double total = ss + sd + ds + dd;
  const double expected = (ss + sd) * (ss + ds) / total;
  const double maximum = 0.5 * ((ss + sd) + (ss + ds));
  if (maximum == expected) return 1.0;
  return (ss - expected) / (maximum - expected);
}

}  // namespace testutil
