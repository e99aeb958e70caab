#include "grammarscope/extractor.hpp"

#include <cmath>

namespace grammarscope::cluster {

using num::DenseArrayT;

namespace {

constexpr int kKernel = 3, kStride = 2, kPad = 1;

int conv_out(int in) { return (in + 2 * kPad - kKernel) / kStride + 1; }

// input: {h, w, c} interleaved. cols: {out_h*out_w, c*9}, column index
// c*9 + ky*3 + kx. Padding contributes zeros.
template <typename S>
DenseArrayT<S> im2col(const DenseArrayT<S>& input, int h, int w, int c) {
  const int oh = conv_out(h), ow = conv_out(w);
  DenseArrayT<S> cols({oh * ow, c * 9});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      S* row = cols.data.data() + (static_cast<size_t>(oy) * ow + ox) * c * 9;
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * kStride + ky - kPad;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * kStride + kx - kPad;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
          const S* px = input.data.data() + (static_cast<size_t>(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) row[ch * 9 + ky * 3 + kx] = px[ch];
        }
      }
    }
  return cols;
}

// Scatter-add of column gradients back onto the input plane.
template <typename S>
DenseArrayT<S> col2im(const DenseArrayT<S>& d_cols, int h, int w, int c) {
  const int oh = conv_out(h), ow = conv_out(w);
  DenseArrayT<S> d_input({h, w, c});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      const S* row = d_cols.data.data() + (static_cast<size_t>(oy) * ow + ox) * c * 9;
      for (int ky = 0; ky < kKernel; ++ky) {
        const int iy = oy * kStride + ky - kPad;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int ix = ox * kStride + kx - kPad;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
          S* px = d_input.data.data() + (static_cast<size_t>(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) px[ch] += row[ch * 9 + ky * 3 + kx];
        }
      }
    }
  return d_input;
}

template <typename S>
void add_bias_tanh(DenseArrayT<S>& pre, const DenseArrayT<S>& bias) {
  const int rows = pre.rows(), cols = pre.cols();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      S& v = pre.data[static_cast<size_t>(r) * cols + c];
      v = static_cast<S>(std::tanh(static_cast<double>(v) + static_cast<double>(bias.data[c])));
    }
}

// d_pre = d_act * (1 - act^2); db accumulates column sums of d_pre.
template <typename S>
DenseArrayT<S> tanh_backward(const DenseArrayT<S>& act, const DenseArrayT<S>& d_act,
                             DenseArrayT<S>& db) {
  DenseArrayT<S> d_pre(act.dims);
  const int rows = act.rows(), cols = act.cols();
  for (int c = 0; c < cols; ++c) {
    double sum = 0.0;
    for (int r = 0; r < rows; ++r) {
      const size_t i = static_cast<size_t>(r) * cols + c;
      const S y = act.data[i];
      const S g = d_act.data[i] * (S(1) - y * y);
      d_pre.data[i] = g;
      sum += static_cast<double>(g);
    }
    db.data[c] = static_cast<S>(sum);
  }
  return d_pre;
}

}  // namespace

template <typename S>
ExtractorT<S> ExtractorT<S>::random_init(int d, Rng& rng) {
  require(d > 0, "Extractor: feat_dim must be positive");
  ExtractorT<S> ex;
  ex.feat_dim = d;
  auto init = [&](std::vector<int> dims, double scale) {
    DenseArrayT<S> arr(dims);
    for (auto& v : arr.data) v = static_cast<S>(rng.uniform(-scale, scale));
    return arr;
  };
  ex.w1 = init({27, 16}, 1.0 / std::sqrt(27.0));
  ex.b1 = DenseArrayT<S>({1, 16});
  ex.w2 = init({144, d}, 1.0 / std::sqrt(144.0));
  ex.b2 = DenseArrayT<S>({1, d});
  return ex;
}

template <typename S>
DenseArrayT<S> image_to_array(const ImageGrid& img) {
  DenseArrayT<S> arr({img.h, img.w, 3});
  for (size_t i = 0; i < img.px.size(); ++i) arr.data[i] = static_cast<S>(img.px[i]);
  return arr;
}

template <typename S>
ExtractorTrace<S> extractor_forward(const ExtractorT<S>& ex, const DenseArrayT<S>& input) {
  require(input.rank() == 3 && input.dims[2] == 3, "extractor_forward: input must be {h,w,3}");
  ExtractorTrace<S> tr;
  tr.in_h = input.dims[0];
  tr.in_w = input.dims[1];
  tr.h1 = conv_out(tr.in_h);
  tr.w1 = conv_out(tr.in_w);
  tr.fh = conv_out(tr.h1);
  tr.fw = conv_out(tr.w1);

  tr.cols1 = im2col(input, tr.in_h, tr.in_w, 3);
  tr.act1 = DenseArrayT<S>({tr.h1 * tr.w1, 16});
  num::gemm_nn(tr.cols1, ex.w1, tr.act1, false);
  add_bias_tanh(tr.act1, ex.b1);

  DenseArrayT<S> act1_plane = tr.act1;
  act1_plane.dims = {tr.h1, tr.w1, 16};
  tr.cols2 = im2col(act1_plane, tr.h1, tr.w1, 16);
  tr.feat = DenseArrayT<S>({tr.fh * tr.fw, ex.feat_dim});
  num::gemm_nn(tr.cols2, ex.w2, tr.feat, false);
  add_bias_tanh(tr.feat, ex.b2);
  return tr;
}

template <typename S>
ExtractorGrads<S> extractor_backward(const ExtractorT<S>& ex, const ExtractorTrace<S>& trace,
                                     const DenseArrayT<S>& d_feat) {
  require(d_feat.same_dims(trace.feat), "extractor_backward: d_feat dims mismatch");
  ExtractorGrads<S> g;
  g.b2 = DenseArrayT<S>({1, ex.feat_dim});
  DenseArrayT<S> d_pre2 = tanh_backward(trace.feat, d_feat, g.b2);
  g.w2 = DenseArrayT<S>({144, ex.feat_dim});
  num::gemm_tn(trace.cols2, d_pre2, g.w2, false);

  DenseArrayT<S> d_cols2({trace.cols2.rows(), trace.cols2.cols()});
  num::gemm_nt(d_pre2, ex.w2, d_cols2, false);
  DenseArrayT<S> d_act1 = col2im(d_cols2, trace.h1, trace.w1, 16);
  d_act1.dims = {trace.h1 * trace.w1, 16};

  g.b1 = DenseArrayT<S>({1, 16});
  DenseArrayT<S> d_pre1 = tanh_backward(trace.act1, d_act1, g.b1);
  g.w1 = DenseArrayT<S>({27, 16});
  num::gemm_tn(trace.cols1, d_pre1, g.w1, false);
  return g;
}

template struct ExtractorT<float>;
template struct ExtractorT<double>;

template DenseArrayT<float> image_to_array<float>(const ImageGrid&);
template DenseArrayT<double> image_to_array<double>(const ImageGrid&);
template ExtractorTrace<float> extractor_forward<float>(const ExtractorT<float>&, const DenseArrayT<float>&);
template ExtractorTrace<double> extractor_forward<double>(const ExtractorT<double>&, const DenseArrayT<double>&);
template ExtractorGrads<float> extractor_backward<float>(const ExtractorT<float>&, const ExtractorTrace<float>&, const DenseArrayT<float>&);
template ExtractorGrads<double> extractor_backward<double>(const ExtractorT<double>&, const ExtractorTrace<double>&, const DenseArrayT<double>&);

}  // namespace grammarscope::cluster
