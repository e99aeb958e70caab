#pragma once

#include "grammarscope/dense.hpp"
#include "grammarscope/image.hpp"
#include "grammarscope/rng.hpp"

namespace grammarscope::cluster {

using data::ImageGrid;

// Pixel-level embedding f: two 3x3 stride-2 tanh conv layers (3 -> 16 -> d),
// producing a feature map at 1/4 the input resolution. Convolutions run as
// im2col + gemm; the backward pass is written out by hand and checked against
// finite differences in the tests.
template <typename S>
struct ExtractorT {
  int feat_dim = 32;
  num::DenseArrayT<S> w1, b1;  // [27,16], [1,16]
  num::DenseArrayT<S> w2, b2;  // [144,d], [1,d]

  static ExtractorT random_init(int d, Rng& rng);

  template <typename T>
  ExtractorT<T> cast() const {
    ExtractorT<T> out;
    out.feat_dim = feat_dim;
    out.w1 = w1.template cast<T>();
    out.b1 = b1.template cast<T>();
    out.w2 = w2.template cast<T>();
    out.b2 = b2.template cast<T>();
    return out;
  }
};

using Extractor = ExtractorT<float>;

template <typename S>
struct ExtractorGrads {
  num::DenseArrayT<S> w1, b1, w2, b2;
};

// Cached intermediates from a forward pass, consumed by backward.
template <typename S>
struct ExtractorTrace {
  int in_h = 0, in_w = 0;
  int h1 = 0, w1 = 0;  // after conv1
  int fh = 0, fw = 0;  // after conv2 (1/4 resolution)
  num::DenseArrayT<S> cols1, act1, cols2, feat;
};

template <typename S>
num::DenseArrayT<S> image_to_array(const ImageGrid& img);  // dims {h, w, 3}

// feat has dims {fh*fw, d}, pixel rows in row-major order.
template <typename S>
ExtractorTrace<S> extractor_forward(const ExtractorT<S>& ex, const num::DenseArrayT<S>& input);

// d_feat must match trace.feat dims; gradients are fresh (not accumulated).
template <typename S>
ExtractorGrads<S> extractor_backward(const ExtractorT<S>& ex, const ExtractorTrace<S>& trace,
                                     const num::DenseArrayT<S>& d_feat);

extern template struct ExtractorT<float>;
extern template struct ExtractorT<double>;

}  // namespace grammarscope::cluster
