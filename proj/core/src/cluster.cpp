#include "grammarscope/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include "grammarscope/log.hpp"

namespace grammarscope::cluster {

using data::ImageGrid;
using num::DenseArrayT;

namespace {

// Rows normalized to unit L2; zero rows are an error (cosine undefined).
template <typename S>
DenseArrayT<S> normalize_rows(const DenseArrayT<S>& m, const char* what) {
  DenseArrayT<S> out = m;
  const int rows = m.rows(), cols = m.cols();
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double v = m.at(r, c);
      s += v * v;
    }
    require(s > 0.0, std::string(what) + ": zero-norm row " + std::to_string(r));
    const S inv = static_cast<S>(1.0 / std::sqrt(s));
    for (int c = 0; c < cols; ++c) out.at(r, c) *= inv;
  }
  return out;
}

LabelGrid mask_to_feature_res(const LabelGrid& mask, int fh, int fw) {
  return data::resize_mask(mask, fh, fw);
}

// logits = feat·W + b
DenseArray classifier_logits(const LinearClassifier& cls, const DenseArray& feat) {
  DenseArray logits({feat.rows(), cls.classes()});
  num::gemm_nn(feat, cls.weight, logits, false);
  for (int r = 0; r < logits.rows(); ++r)
    for (int c = 0; c < logits.cols(); ++c) logits.at(r, c) += cls.bias.data[c];
  return logits;
}

// Mean CE over rows; d_logits (optional) gets (softmax - onehot)/n.
double softmax_ce(const DenseArray& logits, const std::vector<int>& labels, DenseArray* d_logits) {
  const int n = logits.rows(), c = logits.cols();
  require(static_cast<int>(labels.size()) == n, "softmax_ce: label count mismatch");
  double loss = 0.0;
  if (d_logits != nullptr) *d_logits = DenseArray({n, c});
  std::vector<double> p(c);
  for (int r = 0; r < n; ++r) {
    const float* row = logits.data.data() + static_cast<size_t>(r) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    const int y = labels[r];
    require(y >= 0 && y < c, "softmax_ce: label out of range");
    loss += -(static_cast<double>(row[y]) - mx - std::log(z));
    if (d_logits != nullptr)
      for (int j = 0; j < c; ++j)
        d_logits->at(r, j) = static_cast<float>((p[j] / z - (j == y ? 1.0 : 0.0)) / n);
  }
  return loss / n;
}

std::vector<int> mask_labels(const LabelGrid& mask) {
  std::vector<int> out(mask.ids.size());
  for (size_t i = 0; i < mask.ids.size(); ++i) out[i] = mask.ids[i];
  return out;
}

struct SupervisedGrads {
  ExtractorGrads<float> ex;
  DenseArray w, b;
};

// CE forward/backward through classifier and extractor for one image.
double supervised_step(const Extractor& ex, const LinearClassifier& cls, const ImageGrid& img,
                       const LabelGrid& mask, SupervisedGrads* grads) {
  const auto input = image_to_array<float>(img);
  const auto trace = extractor_forward(ex, input);
  const LabelGrid small = mask_to_feature_res(mask, trace.fh, trace.fw);
  const std::vector<int> labels = mask_labels(small);
  const DenseArray logits = classifier_logits(cls, trace.feat);
  DenseArray d_logits;
  const double loss = softmax_ce(logits, labels, grads != nullptr ? &d_logits : nullptr);
  if (grads != nullptr) {
    grads->w = DenseArray({cls.weight.rows(), cls.weight.cols()});
    num::gemm_tn(trace.feat, d_logits, grads->w, false);
    grads->b = DenseArray({1, cls.classes()});
    for (int r = 0; r < d_logits.rows(); ++r)
      for (int c = 0; c < d_logits.cols(); ++c) grads->b.data[c] += d_logits.at(r, c);
    DenseArray d_feat({trace.feat.rows(), trace.feat.cols()});
    num::gemm_nt(d_logits, cls.weight, d_feat, false);
    grads->ex = extractor_backward(ex, trace, d_feat);
  }
  return loss;
}

void accumulate(DenseArray& into, const DenseArray& from) {
  for (int64_t i = 0; i < into.size(); ++i) into.data[i] += from.data[i];
}

std::vector<double> train_supervised(Extractor& ex, LinearClassifier& cls,
                                     const std::vector<ImageGrid>& images,
                                     const std::vector<LabelGrid>& masks,
                                     const SupervisedOptions& opts, const char* what) {
  require(!images.empty(), std::string(what) + ": empty training subset");
  require(images.size() == masks.size(), std::string(what) + ": image/mask count mismatch");
  for (const LabelGrid& m : masks)
    require(m.classes == cls.classes(), std::string(what) + ": class-count mismatch (mask C=" +
                                            std::to_string(m.classes) + ", classifier C=" +
                                            std::to_string(cls.classes()) + ")");
  num::Adam adam({opts.lr, 0.9f, 0.999f, 1e-8f});
  Rng rng(opts.seed);
  std::vector<double> epoch_losses;
  const int n = static_cast<int>(images.size());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const std::vector<int> order = rng.permutation(n);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += opts.batch_size) {
      const int stop = std::min(n, start + opts.batch_size);
      SupervisedGrads total;
      total.ex.w1 = DenseArray(ex.w1.dims);
      total.ex.b1 = DenseArray(ex.b1.dims);
      total.ex.w2 = DenseArray(ex.w2.dims);
      total.ex.b2 = DenseArray(ex.b2.dims);
      total.w = DenseArray(cls.weight.dims);
      total.b = DenseArray(cls.bias.dims);
      for (int i = start; i < stop; ++i) {
        SupervisedGrads g;
        epoch_loss += supervised_step(ex, cls, images[order[i]], masks[order[i]], &g);
        accumulate(total.ex.w1, g.ex.w1);
        accumulate(total.ex.b1, g.ex.b1);
        accumulate(total.ex.w2, g.ex.w2);
        accumulate(total.ex.b2, g.ex.b2);
        accumulate(total.w, g.w);
        accumulate(total.b, g.b);
      }
      const float inv = 1.f / static_cast<float>(stop - start);
      for (auto* arr : {&total.ex.w1, &total.ex.b1, &total.ex.w2, &total.ex.b2, &total.w, &total.b})
        for (auto& v : arr->data) v *= inv;
      adam.step("ex.w1", ex.w1, total.ex.w1);
      adam.step("ex.b1", ex.b1, total.ex.b1);
      adam.step("ex.w2", ex.w2, total.ex.w2);
      adam.step("ex.b2", ex.b2, total.ex.b2);
      adam.step("cls.w", cls.weight, total.w);
      adam.step("cls.b", cls.bias, total.b);
    }
    epoch_losses.push_back(epoch_loss / n);
    log_debug(std::string(what) + " epoch " + std::to_string(epoch) + " loss " +
              std::to_string(epoch_losses.back()));
  }
  return epoch_losses;
}

}  // namespace

LinearClassifier LinearClassifier::random_init(int d, int classes, Rng& rng) {
  require(d > 0 && classes > 0, "LinearClassifier: bad dims");
  LinearClassifier cls;
  cls.weight = DenseArray({d, classes});
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : cls.weight.data) v = static_cast<float>(rng.uniform(-scale, scale));
  cls.bias = DenseArray({1, classes});
  return cls;
}

std::vector<double> finetune_prior(Extractor& ex, LinearClassifier& cls,
                                   const std::vector<ImageGrid>& images,
                                   const std::vector<LabelGrid>& masks,
                                   const SupervisedOptions& opts) {
  return train_supervised(ex, cls, images, masks, opts, "finetune_prior");
}

std::vector<double> finetune_patch_detector(Extractor& ex, LinearClassifier& cls,
                                            const std::vector<ImageGrid>& patch_images,
                                            const std::vector<LabelGrid>& patch_masks,
                                            const SupervisedOptions& opts) {
  return train_supervised(ex, cls, patch_images, patch_masks, opts, "finetune_patch_detector");
}

TwoStreamFeatures two_stream_features(const Extractor& ex, const ImageGrid& image,
                                      const PhotoSpec& p1, const PhotoSpec& p2, const GeoSpec& g2,
                                      double ratio) {
  TwoStreamFeatures out;

  const ImageGrid x1 = data::apply_photometric(image, p1);
  const auto trace1 = extractor_forward(ex, image_to_array<float>(x1));
  const GeoSpec g1 = data::scale_geometric(g2, ratio);
  require(data::rect_in_bounds(g1.crop, trace1.fh, trace1.fw),
          "two_stream_features: scaled crop exceeds feature map");
  // Crop + flip on the feature map, mirroring the image-space transform.
  {
    const int cw = g1.crop.w, ch = g1.crop.h;
    DenseArray z1({ch * cw, ex.feat_dim});
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        const int sx = g1.flip ? g1.crop.x + cw - 1 - x : g1.crop.x + x;
        const int sy = g1.crop.y + y;
        std::copy_n(trace1.feat.data.data() + (static_cast<size_t>(sy) * trace1.fw + sx) * ex.feat_dim,
                    ex.feat_dim, z1.data.data() + (static_cast<size_t>(y) * cw + x) * ex.feat_dim);
      }
    out.z1 = {ch, cw, std::move(z1)};
  }

  const ImageGrid x2 = data::apply_geometric(data::apply_photometric(image, p2), g2);
  const auto trace2 = extractor_forward(ex, image_to_array<float>(x2));
  out.z2 = {trace2.fh, trace2.fw, trace2.feat};
  require(out.z1.fh == out.z2.fh && out.z1.fw == out.z2.fw,
          "two_stream_features: stream dims mismatch " + std::to_string(out.z1.fh) + "x" +
              std::to_string(out.z1.fw) + " vs " + std::to_string(out.z2.fh) + "x" +
              std::to_string(out.z2.fw));
  return out;
}

std::vector<int> assign_clusters(const DenseArray& feat, const CentroidBank& bank) {
  const DenseArray z = normalize_rows(feat, "assign_clusters features");
  const DenseArray mu = normalize_rows(bank.mu, "assign_clusters centroids");
  const int n = z.rows(), k = mu.rows(), d = z.cols();
  require(mu.cols() == d, "assign_clusters: feature/centroid dim mismatch");
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const float* zi = z.data.data() + static_cast<size_t>(i) * d;
    double best = -2.0;
    int best_k = 0;
    for (int c = 0; c < k; ++c) {
      const float* mc = mu.data.data() + static_cast<size_t>(c) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(zi[j]) * mc[j];
      if (dot > best) {  // strict: ties keep the lowest cluster id
        best = dot;
        best_k = c;
      }
    }
    out[i] = best_k;
  }
  return out;
}

KmeansResult minibatch_kmeans(const std::vector<DenseArray>& batches, int k,
                              const CentroidBank* init, int km_iter, uint64_t seed) {
  require(!batches.empty(), "minibatch_kmeans: no feature batches");
  require(km_iter >= 1, "minibatch_kmeans: km_iter must be >= 1");
  const int d = batches[0].cols();
  int64_t total = 0;
  for (const DenseArray& b : batches) {
    require(b.cols() == d, "minibatch_kmeans: inconsistent feature dims");
    total += b.rows();
  }
  require(k >= 1 && k <= total, "minibatch_kmeans: need 1 <= K <= #points");

  DenseArray z({static_cast<int>(total), d});
  int64_t row = 0;
  for (const DenseArray& b : batches) {
    std::copy(b.data.begin(), b.data.end(), z.data.begin() + row * d);
    row += b.rows();
  }
  z = normalize_rows(z, "minibatch_kmeans features");
  const int n = z.rows();

  CentroidBank bank;
  if (init != nullptr) {
    require(init->k() == k && init->dim() == d, "minibatch_kmeans: init bank dims mismatch");
    bank.mu = normalize_rows(init->mu, "minibatch_kmeans init");
  } else {
    // k-means++ style seeding on cosine distance.
    Rng rng(seed);
    bank.mu = DenseArray({k, d});
    std::vector<double> dist(n, 2.0);
    int first = rng.uniform_int(n);
    std::copy_n(z.data.data() + static_cast<size_t>(first) * d, d, bank.mu.data.data());
    for (int c = 1; c < k; ++c) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* zi = z.data.data() + static_cast<size_t>(i) * d;
        const float* mc = bank.mu.data.data() + static_cast<size_t>(c - 1) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(zi[j]) * mc[j];
        dist[i] = std::min(dist[i], 1.0 - dot);
        sum += dist[i];
      }
      int pick = 0;
      if (sum <= 0.0) {
        pick = rng.uniform_int(n);
      } else {
        const double target = rng.uniform() * sum;
        double acc = 0.0;
        pick = n - 1;
        for (int i = 0; i < n; ++i) {
          acc += dist[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      }
      std::copy_n(z.data.data() + static_cast<size_t>(pick) * d, d,
                  bank.mu.data.data() + static_cast<size_t>(c) * d);
    }
  }

  KmeansResult res;
  std::vector<int> assign(n, -1);
  std::vector<double> point_dist(n, 0.0);
  for (int iter = 0; iter < km_iter; ++iter) {
    // Assignment step; objective is recorded here, which keeps it
    // non-increasing even across empty-cluster re-seeding.
    const std::vector<int> prev = assign;
    double objective = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* zi = z.data.data() + static_cast<size_t>(i) * d;
      double best = -2.0;
      int best_k = 0;
      for (int c = 0; c < k; ++c) {
        const float* mc = bank.mu.data.data() + static_cast<size_t>(c) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(zi[j]) * mc[j];
        if (dot > best) {
          best = dot;
          best_k = c;
        }
      }
      assign[i] = best_k;
      point_dist[i] = 1.0 - best;
      objective += 1.0 - best;
    }
    res.objective.push_back(objective);
    res.iterations = iter + 1;
    if (assign == prev) break;

    // Update step: spherical mean per cluster.
    std::vector<double> sums(static_cast<size_t>(k) * d, 0.0);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      const float* zi = z.data.data() + static_cast<size_t>(i) * d;
      double* target = sums.data() + static_cast<size_t>(assign[i]) * d;
      for (int j = 0; j < d; ++j) target[j] += zi[j];
      counts[assign[i]] += 1;
    }
    std::vector<bool> taken(n, false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed from the farthest assigned point (lowest index on ties).
        int far = -1;
        double far_dist = -1.0;
        for (int i = 0; i < n; ++i)
          if (!taken[i] && point_dist[i] > far_dist) {
            far_dist = point_dist[i];
            far = i;
          }
        require(far >= 0, "minibatch_kmeans: cannot re-seed empty cluster");
        taken[far] = true;
        std::copy_n(z.data.data() + static_cast<size_t>(far) * d, d,
                    bank.mu.data.data() + static_cast<size_t>(c) * d);
        continue;
      }
      double norm = 0.0;
      const double* src = sums.data() + static_cast<size_t>(c) * d;
      for (int j = 0; j < d; ++j) norm += src[j] * src[j];
      norm = std::sqrt(norm);
      float* dst = bank.mu.data.data() + static_cast<size_t>(c) * d;
      if (norm <= 0.0) continue;  // direction cancels out exactly; keep old centroid
      for (int j = 0; j < d; ++j) dst[j] = static_cast<float>(src[j] / norm);
    }
  }

  res.bank = std::move(bank);
  int64_t offset = 0;
  for (const DenseArray& b : batches) {
    res.assignments.emplace_back(assign.begin() + offset, assign.begin() + offset + b.rows());
    offset += b.rows();
  }
  return res;
}

template <typename S>
double dc_loss_t(const DenseArrayT<S>& z, const std::vector<int>& y, const DenseArrayT<S>& mu_raw,
                 DenseArrayT<S>* dz) {
  const int n = z.rows(), d = z.cols(), k = mu_raw.rows();
  require(mu_raw.cols() == d, "dc_loss: feature/centroid dim mismatch");
  require(static_cast<int>(y.size()) == n, "dc_loss: label count mismatch");
  if (dz != nullptr) require(dz->same_dims(z), "dc_loss: dz dims mismatch");
  const DenseArrayT<S> mu = normalize_rows(mu_raw, "dc_loss centroids");

  double loss = 0.0;
  std::vector<double> sims(k), p(k), du(d);
  for (int i = 0; i < n; ++i) {
    const S* zi = z.data.data() + static_cast<size_t>(i) * d;
    double norm_sq = 0.0;
    for (int j = 0; j < d; ++j) norm_sq += static_cast<double>(zi[j]) * static_cast<double>(zi[j]);
    require(norm_sq > 0.0, "dc_loss: zero-norm feature at row " + std::to_string(i));
    const double norm = std::sqrt(norm_sq);

    // logits are -d(z, mu_k) = cos - 1; softmax is shift-invariant so the
    // constant drops out.
    double mx = -2.0;
    for (int c = 0; c < k; ++c) {
      const S* mc = mu.data.data() + static_cast<size_t>(c) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(zi[j]) * static_cast<double>(mc[j]);
      sims[c] = dot / norm;
      mx = std::max(mx, sims[c]);
    }
    double zsum = 0.0;
    for (int c = 0; c < k; ++c) {
      p[c] = std::exp(sims[c] - mx);
      zsum += p[c];
    }
    const int yi = y[i];
    require(yi >= 0 && yi < k, "dc_loss: cluster id out of range");
    loss += -(sims[yi] - mx - std::log(zsum));

    if (dz != nullptr) {
      std::fill(du.begin(), du.end(), 0.0);
      for (int c = 0; c < k; ++c) {
        const double coef = (p[c] / zsum - (c == yi ? 1.0 : 0.0)) / n;
        const S* mc = mu.data.data() + static_cast<size_t>(c) * d;
        for (int j = 0; j < d; ++j) du[j] += coef * static_cast<double>(mc[j]);
      }
      // through u = z/|z|:  dz = (du - (du·u) u) / |z|
      double dot_du_u = 0.0;
      for (int j = 0; j < d; ++j) dot_du_u += du[j] * (static_cast<double>(zi[j]) / norm);
      S* out = dz->data.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j)
        out[j] += static_cast<S>((du[j] - dot_du_u * (static_cast<double>(zi[j]) / norm)) / norm);
    }
  }
  return loss / n;
}

template double dc_loss_t<float>(const DenseArrayT<float>&, const std::vector<int>&,
                                 const DenseArrayT<float>&, DenseArrayT<float>*);
template double dc_loss_t<double>(const DenseArrayT<double>&, const std::vector<int>&,
                                  const DenseArrayT<double>&, DenseArrayT<double>*);

PicieLossValues picie_losses(const DenseArray& z1, const DenseArray& z2, const std::vector<int>& y1,
                             const std::vector<int>& y2, const CentroidBank& mu1,
                             const CentroidBank& mu2, DenseArray* dz1, DenseArray* dz2) {
  PicieLossValues v;
  v.within = dc_loss(z1, y1, mu1, dz1) + dc_loss(z2, y2, mu2, dz2);
  v.cross = dc_loss(z1, y2, mu2, dz1) + dc_loss(z2, y1, mu1, dz2);
  v.total = v.within + v.cross;
  return v;
}

namespace {

// Training-time variant of two_stream_features that keeps extractor traces
// and the transform geometry so gradients can flow back.
struct StreamTraces {
  ExtractorTrace<float> t1, t2;
  GeoSpec g1;  // feature-scale crop for stream 1
  DenseArray z1, z2;
  int ch = 0, cw = 0;
};

StreamTraces two_stream_traced(const Extractor& ex, const ImageGrid& image, const PhotoSpec& p1,
                               const PhotoSpec& p2, const GeoSpec& g2) {
  StreamTraces st;
  const ImageGrid x1 = data::apply_photometric(image, p1);
  st.t1 = extractor_forward(ex, image_to_array<float>(x1));
  st.g1 = data::scale_geometric(g2, 0.25);
  require(data::rect_in_bounds(st.g1.crop, st.t1.fh, st.t1.fw),
          "train_picie: scaled crop exceeds feature map");
  st.ch = st.g1.crop.h;
  st.cw = st.g1.crop.w;
  st.z1 = DenseArray({st.ch * st.cw, ex.feat_dim});
  for (int y = 0; y < st.ch; ++y)
    for (int x = 0; x < st.cw; ++x) {
      const int sx = st.g1.flip ? st.g1.crop.x + st.cw - 1 - x : st.g1.crop.x + x;
      const int sy = st.g1.crop.y + y;
      std::copy_n(st.t1.feat.data.data() + (static_cast<size_t>(sy) * st.t1.fw + sx) * ex.feat_dim,
                  ex.feat_dim, st.z1.data.data() + (static_cast<size_t>(y) * st.cw + x) * ex.feat_dim);
    }
  const ImageGrid x2 = data::apply_geometric(data::apply_photometric(image, p2), g2);
  st.t2 = extractor_forward(ex, image_to_array<float>(x2));
  st.z2 = st.t2.feat;
  require(st.t2.fh == st.ch && st.t2.fw == st.cw, "train_picie: stream dims mismatch");
  return st;
}

}  // namespace

PicieResult train_picie(Extractor& ex, const std::vector<ImageGrid>& images,
                        const PicieConfig& cfg) {
  require(!images.empty(), "train_picie: empty dataset");
  require(cfg.km_init >= 1, "train_picie: km_init must be >= 1");
  require(cfg.km_num >= 1, "train_picie: km_num must be >= 1");
  require(cfg.batch_size >= 1, "train_picie: batch_size must be >= 1");
  const int n = static_cast<int>(images.size());
  Rng rng(cfg.seed);
  num::Adam adam({cfg.lr, 0.9f, 0.999f, 1e-8f});

  std::deque<DenseArray> buffer1, buffer2;
  const size_t buffer_cap = static_cast<size_t>(std::max(cfg.km_init, cfg.km_num));
  auto push_features = [&](const DenseArray& z1, const DenseArray& z2) {
    buffer1.push_back(z1);
    buffer2.push_back(z2);
    while (buffer1.size() > buffer_cap) buffer1.pop_front();
    while (buffer2.size() > buffer_cap) buffer2.pop_front();
  };
  auto cluster_buffers = [&](const CentroidBank* warm1, const CentroidBank* warm2, uint64_t salt) {
    const std::vector<DenseArray> b1(buffer1.begin(), buffer1.end());
    const std::vector<DenseArray> b2(buffer2.begin(), buffer2.end());
    auto r1 = minibatch_kmeans(b1, cfg.k, warm1, cfg.km_iter, derive_seed(cfg.seed, salt));
    auto r2 = minibatch_kmeans(b2, cfg.k, warm2, cfg.km_iter, derive_seed(cfg.seed, salt + 1));
    return std::pair{std::move(r1.bank), std::move(r2.bank)};
  };

  auto next_batch = [&](std::vector<int>& order, int& cursor) {
    std::vector<int> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor >= n) {
        order = rng.permutation(n);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    return batch;
  };

  auto batch_features = [&](const std::vector<int>& batch, std::vector<StreamTraces>* traces) {
    std::vector<StreamTraces> local;
    int64_t rows = 0;
    for (int idx : batch) {
      const PhotoSpec p1 = data::sample_photometric(cfg.photo, rng);
      const PhotoSpec p2 = data::sample_photometric(cfg.photo, rng);
      const GeoSpec g2 = data::sample_geometric(images[idx].h, images[idx].w, rng);
      local.push_back(two_stream_traced(ex, images[idx], p1, p2, g2));
      rows += local.back().z1.rows();
    }
    DenseArray z1({static_cast<int>(rows), ex.feat_dim});
    DenseArray z2({static_cast<int>(rows), ex.feat_dim});
    int64_t at = 0;
    for (const StreamTraces& st : local) {
      std::copy(st.z1.data.begin(), st.z1.data.end(), z1.data.begin() + at * ex.feat_dim);
      std::copy(st.z2.data.begin(), st.z2.data.end(), z2.data.begin() + at * ex.feat_dim);
      at += st.z1.rows();
    }
    if (traces != nullptr) *traces = std::move(local);
    return std::pair{std::move(z1), std::move(z2)};
  };

  std::vector<int> order = rng.permutation(n);
  int cursor = 0;

  // Initial clustering from km_init collected batches (no gradient steps).
  for (int b = 0; b < cfg.km_init; ++b) {
    auto [z1, z2] = batch_features(next_batch(order, cursor), nullptr);
    push_features(z1, z2);
  }
  auto [mu1, mu2] = cluster_buffers(nullptr, nullptr, /*salt=*/1000);

  PicieResult res;
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int since_cluster = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    PicieEpochLog log;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<StreamTraces> traces;
      auto [z1, z2] = batch_features(next_batch(order, cursor), &traces);
      const std::vector<int> y1 = assign_clusters(z1, mu1);
      const std::vector<int> y2 = assign_clusters(z2, mu2);
      DenseArray dz1(z1.dims), dz2(z2.dims);
      const PicieLossValues v = picie_losses(z1, z2, y1, y2, mu1, mu2, &dz1, &dz2);
      log.within += v.within;
      log.cross += v.cross;
      log.total += v.total;

      ExtractorGrads<float> total{DenseArray(ex.w1.dims), DenseArray(ex.b1.dims),
                                  DenseArray(ex.w2.dims), DenseArray(ex.b2.dims)};
      int64_t at = 0;
      for (const StreamTraces& st : traces) {
        const int rows = st.z1.rows();
        // Stream 1: undo the feature-space crop/flip, then conv backward.
        DenseArray d_feat1({st.t1.fh * st.t1.fw, ex.feat_dim});
        for (int y = 0; y < st.ch; ++y)
          for (int x = 0; x < st.cw; ++x) {
            const int sx = st.g1.flip ? st.g1.crop.x + st.cw - 1 - x : st.g1.crop.x + x;
            const int sy = st.g1.crop.y + y;
            const float* src = dz1.data.data() + ((at + static_cast<size_t>(y) * st.cw + x)) * ex.feat_dim;
            float* dst = d_feat1.data.data() + (static_cast<size_t>(sy) * st.t1.fw + sx) * ex.feat_dim;
            for (int j = 0; j < ex.feat_dim; ++j) dst[j] += src[j];
          }
        const auto g1 = extractor_backward(ex, st.t1, d_feat1);
        DenseArray d_feat2({rows, ex.feat_dim});
        std::copy_n(dz2.data.begin() + at * ex.feat_dim, static_cast<size_t>(rows) * ex.feat_dim,
                    d_feat2.data.begin());
        const auto g2 = extractor_backward(ex, st.t2, d_feat2);
        accumulate(total.w1, g1.w1);
        accumulate(total.b1, g1.b1);
        accumulate(total.w2, g1.w2);
        accumulate(total.b2, g1.b2);
        accumulate(total.w1, g2.w1);
        accumulate(total.b1, g2.b1);
        accumulate(total.w2, g2.w2);
        accumulate(total.b2, g2.b2);
        at += rows;
      }
      adam.step("ex.w1", ex.w1, total.w1);
      adam.step("ex.b1", ex.b1, total.b1);
      adam.step("ex.w2", ex.w2, total.w2);
      adam.step("ex.b2", ex.b2, total.b2);

      push_features(z1, z2);
      since_cluster += 1;
      if (since_cluster >= cfg.km_num) {
        std::tie(mu1, mu2) = cluster_buffers(&mu1, &mu2, 2000 + epoch * batches_per_epoch + b);
        since_cluster = 0;
      }
    }
    log.within /= batches_per_epoch;
    log.cross /= batches_per_epoch;
    log.total /= batches_per_epoch;
    res.epochs.push_back(log);
    log_info("train_picie epoch " + std::to_string(epoch) + " L_total " + std::to_string(log.total));
  }
  res.bank = std::move(mu1);
  return res;
}

namespace {

std::vector<int> argmax_rows(const DenseArray& scores) {
  std::vector<int> out(scores.rows());
  for (int r = 0; r < scores.rows(); ++r) {
    const float* row = scores.data.data() + static_cast<size_t>(r) * scores.cols();
    int best = 0;
    for (int c = 1; c < scores.cols(); ++c)
      if (row[c] > row[best]) best = c;
    out[r] = best;
  }
  return out;
}

LabelGrid labels_to_grid(const std::vector<int>& labels, int fh, int fw, int classes, int out_h,
                         int out_w) {
  LabelGrid small(fh, fw, classes);
  for (size_t i = 0; i < labels.size(); ++i) small.ids[i] = static_cast<uint8_t>(labels[i]);
  return data::resize_mask(small, out_h, out_w);
}

}  // namespace

LabelGrid segment_with_centroids(const Extractor& ex, const CentroidBank& bank,
                                 const ImageGrid& image) {
  const auto trace = extractor_forward(ex, image_to_array<float>(image));
  const std::vector<int> assign = assign_clusters(trace.feat, bank);
  return labels_to_grid(assign, trace.fh, trace.fw, bank.k(), image.h, image.w);
}

LabelGrid segment_with_classifier(const Extractor& ex, const LinearClassifier& cls,
                                  const ImageGrid& image) {
  const auto trace = extractor_forward(ex, image_to_array<float>(image));
  const DenseArray logits = classifier_logits(cls, trace.feat);
  return labels_to_grid(argmax_rows(logits), trace.fh, trace.fw, cls.classes(), image.h, image.w);
}

LabelGrid merge_clusters(const LabelGrid& clusters, const ClusterMergeMap& map) {
  require(!map.to_class.empty() && map.classes > 0, "merge_clusters: empty map");
  for (int c : map.to_class)
    require(c >= 0 && c < map.classes, "merge_clusters: class id out of range");
  LabelGrid out(clusters.h, clusters.w, map.classes);
  for (size_t i = 0; i < clusters.ids.size(); ++i) {
    require(static_cast<size_t>(clusters.ids[i]) < map.to_class.size(),
            "merge_clusters: cluster id outside map");
    out.ids[i] = static_cast<uint8_t>(map.to_class[clusters.ids[i]]);
  }
  return out;
}

ClusterMergeMap auto_merge_map(const Extractor& ex, const CentroidBank& bank,
                               const LinearClassifier& cls, const std::vector<ImageGrid>& images) {
  require(!images.empty(), "auto_merge_map: no images");
  const int k = bank.k(), c = cls.classes();
  std::vector<int64_t> counts(static_cast<size_t>(k) * c, 0);
  for (const ImageGrid& img : images) {
    const auto trace = extractor_forward(ex, image_to_array<float>(img));
    const std::vector<int> assign = assign_clusters(trace.feat, bank);
    const std::vector<int> pred = argmax_rows(classifier_logits(cls, trace.feat));
    for (size_t i = 0; i < assign.size(); ++i) counts[static_cast<size_t>(assign[i]) * c + pred[i]] += 1;
  }
  ClusterMergeMap map;
  map.classes = c;
  map.to_class.resize(k, 0);
  for (int i = 0; i < k; ++i) {
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (counts[static_cast<size_t>(i) * c + j] > counts[static_cast<size_t>(i) * c + best]) best = j;
    map.to_class[i] = best;
  }
  return map;
}

void save_merge_map(const std::string& path, const ClusterMergeMap& map) {
  std::ofstream os(path);
  require(os.good(), "save_merge_map: cannot open " + path);
  for (size_t i = 0; i < map.to_class.size(); ++i) os << i << " " << map.to_class[i] << "\n";
  require(os.good(), "save_merge_map: write failed");
}

ClusterMergeMap load_merge_map(const std::string& path, int k, int classes) {
  std::ifstream is(path);
  require(is.good(), "load_merge_map: cannot open " + path);
  ClusterMergeMap map;
  map.classes = classes;
  map.to_class.assign(k, -1);
  int cl, cls_id;
  while (is >> cl >> cls_id) {
    require(cl >= 0 && cl < k, "load_merge_map: cluster id out of range");
    require(cls_id >= 0 && cls_id < classes, "load_merge_map: class id out of range");
    map.to_class[cl] = cls_id;
  }
  for (int i = 0; i < k; ++i)
    require(map.to_class[i] >= 0, "load_merge_map: cluster " + std::to_string(i) + " unmapped");
  return map;
}

double pixel_accuracy(const LabelGrid& pred, const LabelGrid& truth) {
  require(pred.h == truth.h && pred.w == truth.w, "pixel_accuracy: dims mismatch");
  int64_t hit = 0;
  for (size_t i = 0; i < pred.ids.size(); ++i) hit += pred.ids[i] == truth.ids[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.ids.size());
}

}  // namespace grammarscope::cluster
