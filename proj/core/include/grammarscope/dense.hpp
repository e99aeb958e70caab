#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "grammarscope/error.hpp"

namespace grammarscope::num {

// Row-major dense array. Storage is 32-bit float in the artifact; the double
// instantiation exists for the finite-difference oracles, which need forward
// evaluations well below float rounding noise.
template <typename S>
struct DenseArrayT {
  std::vector<int> dims;
  std::vector<S> data;

  DenseArrayT() = default;
  explicit DenseArrayT(std::vector<int> d, S fill = S(0)) : dims(std::move(d)) {
    data.assign(static_cast<size_t>(checked_size(dims)), fill);
  }
  DenseArrayT(std::vector<int> d, std::vector<S> values) : dims(std::move(d)), data(std::move(values)) {
    require(checked_size(dims) == static_cast<int64_t>(data.size()),
            "DenseArray: dims/data length mismatch");
  }

  static int64_t checked_size(const std::vector<int>& d) {
    require(!d.empty(), "DenseArray: dims must be non-empty");
    int64_t n = 1;
    for (int v : d) {
      require(v > 0, "DenseArray: dims must be positive");
      n *= v;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }

  int rows() const {
    require(rank() == 2, "DenseArray: rows() needs rank 2");
    return dims[0];
  }
  int cols() const {
    require(rank() == 2, "DenseArray: cols() needs rank 2");
    return dims[1];
  }

  S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  S operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_dims(const DenseArrayT& o) const { return dims == o.dims; }
  bool is_scalar() const { return size() == 1; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  DenseArrayT<T> cast() const {
    DenseArrayT<T> out;
    out.dims = dims;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using DenseArray = DenseArrayT<float>;
using DenseArray64 = DenseArrayT<double>;

inline std::string dims_str(const std::vector<int>& d) {
  std::string s = "(";
  for (size_t i = 0; i < d.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(d[i]);
  }
  return s + ")";
}

// C (+)= A(m,k)·B(k,n). All gemm variants accumulate in double and walk a
// fixed row-major order, so results are reproducible bit-for-bit.
template <typename S>
void gemm_nn(const DenseArrayT<S>& a, const DenseArrayT<S>& b, DenseArrayT<S>& c, bool accumulate) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "gemm_nn: inner dims mismatch " + dims_str(a.dims) + "x" + dims_str(b.dims));
  require(c.rows() == m && c.cols() == n, "gemm_nn: output dims mismatch");
  std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    double* arow = acc.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = static_cast<double>(a.data[static_cast<size_t>(i) * k + p]);
      const S* brow = b.data.data() + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) arow[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (int64_t i = 0; i < c.size(); ++i)
    c.data[i] = accumulate ? static_cast<S>(static_cast<double>(c.data[i]) + acc[i]) : static_cast<S>(acc[i]);
}

// C (+)= A(m,k)·Bᵀ where B is (n,k).
template <typename S>
void gemm_nt(const DenseArrayT<S>& a, const DenseArrayT<S>& b, DenseArrayT<S>& c, bool accumulate) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "gemm_nt: inner dims mismatch");
  require(c.rows() == m && c.cols() == n, "gemm_nt: output dims mismatch");
  for (int i = 0; i < m; ++i) {
    const S* arow = a.data.data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const S* brow = b.data.data() + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      S& out = c.data[static_cast<size_t>(i) * n + j];
      out = accumulate ? static_cast<S>(static_cast<double>(out) + s) : static_cast<S>(s);
    }
  }
}

// C (+)= Aᵀ·B where A is (k,m), B is (k,n).
template <typename S>
void gemm_tn(const DenseArrayT<S>& a, const DenseArrayT<S>& b, DenseArrayT<S>& c, bool accumulate) {
  const int k = a.rows(), m = a.cols(), n = b.cols();
  require(b.rows() == k, "gemm_tn: inner dims mismatch");
  require(c.rows() == m && c.cols() == n, "gemm_tn: output dims mismatch");
  std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const S* arow = a.data.data() + static_cast<size_t>(p) * m;
    const S* brow = b.data.data() + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = static_cast<double>(arow[i]);
      double* crow = acc.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (int64_t i = 0; i < c.size(); ++i)
    c.data[i] = accumulate ? static_cast<S>(static_cast<double>(c.data[i]) + acc[i]) : static_cast<S>(acc[i]);
}

}  // namespace grammarscope::num
