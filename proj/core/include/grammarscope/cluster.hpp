#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grammarscope/adam.hpp"
#include "grammarscope/extractor.hpp"
#include "grammarscope/transforms.hpp"

namespace grammarscope::cluster {

using data::GeoSpec;
using data::LabelGrid;
using data::PhotoParams;
using data::PhotoSpec;
using num::DenseArray;

// g: d -> C linear projection used for the supervised prior and the patch
// detector.
struct LinearClassifier {
  DenseArray weight;  // [d, C]
  DenseArray bias;    // [1, C]

  static LinearClassifier random_init(int d, int classes, Rng& rng);
  int classes() const { return weight.cols(); }
};

// K L2-normalized centroid rows.
struct CentroidBank {
  DenseArray mu;  // [K, d]
  int k() const { return mu.rows(); }
  int dim() const { return mu.cols(); }
};

// A feature map with its spatial geometry; feat is {fh*fw, d}.
struct FeatureMap {
  int fh = 0, fw = 0;
  DenseArray feat;
};

// Mean pixel-wise cross-entropy of classifier logits against a mask
// downsampled (nearest) to the feature resolution.
struct SupervisedOptions {
  int epochs = 10;
  int batch_size = 16;
  float lr = 1e-4f;
  uint64_t seed = 0;
};

// Fine-tunes extractor + classifier on a labeled subset; returns the mean
// loss per epoch.
std::vector<double> finetune_prior(Extractor& ex, LinearClassifier& cls,
                                   const std::vector<data::ImageGrid>& images,
                                   const std::vector<LabelGrid>& masks,
                                   const SupervisedOptions& opts);

// Same objective over patch crops supervised by stage-1 output masks.
std::vector<double> finetune_patch_detector(Extractor& ex, LinearClassifier& cls,
                                            const std::vector<data::ImageGrid>& patch_images,
                                            const std::vector<LabelGrid>& patch_masks,
                                            const SupervisedOptions& opts);

// Two augmentation streams that end in pixel-aligned feature maps:
//   z1 = scale_geometric(g2, ratio)(f(p1(x)))   (transform on features)
//   z2 = f(g2(p2(x)))                           (transform on the image)
struct TwoStreamFeatures {
  FeatureMap z1, z2;
};
TwoStreamFeatures two_stream_features(const Extractor& ex, const data::ImageGrid& image,
                                      const PhotoSpec& p1, const PhotoSpec& p2, const GeoSpec& g2,
                                      double ratio = 0.25);

// Nearest centroid by cosine distance, ties to the lowest cluster id.
std::vector<int> assign_clusters(const DenseArray& feat, const CentroidBank& bank);

// Spherical mini-batch K-means over the collected feature batches. The
// objective sum(1 - cos) is recorded after each assignment step and is
// non-increasing; empty clusters re-seed from the farthest assigned point.
struct KmeansResult {
  CentroidBank bank;
  std::vector<std::vector<int>> assignments;  // one per input batch
  std::vector<double> objective;              // per alternation
  int iterations = 0;
};
KmeansResult minibatch_kmeans(const std::vector<DenseArray>& batches, int k,
                              const CentroidBank* init, int km_iter, uint64_t seed);

// DeepCluster loss: mean over pixels of -log softmax(-d(z, mu))[y] with
// cosine distance d. If dz is given it must be zero-initialized to z's dims;
// the gradient w.r.t. the raw (pre-normalization) features accumulates into
// it. The double instantiation exists for the finite-difference oracles.
template <typename S>
double dc_loss_t(const num::DenseArrayT<S>& z, const std::vector<int>& y,
                 const num::DenseArrayT<S>& mu, num::DenseArrayT<S>* dz = nullptr);

extern template double dc_loss_t<float>(const num::DenseArrayT<float>&, const std::vector<int>&,
                                        const num::DenseArrayT<float>&, num::DenseArrayT<float>*);
extern template double dc_loss_t<double>(const num::DenseArrayT<double>&, const std::vector<int>&,
                                         const num::DenseArrayT<double>&, num::DenseArrayT<double>*);

inline double dc_loss(const DenseArray& z, const std::vector<int>& y, const CentroidBank& bank,
                      DenseArray* dz = nullptr) {
  return dc_loss_t<float>(z, y, bank.mu, dz);
}

struct PicieLossValues {
  double within = 0.0, cross = 0.0, total = 0.0;
};
PicieLossValues picie_losses(const DenseArray& z1, const DenseArray& z2, const std::vector<int>& y1,
                             const std::vector<int>& y2, const CentroidBank& mu1,
                             const CentroidBank& mu2, DenseArray* dz1 = nullptr,
                             DenseArray* dz2 = nullptr);

struct PicieConfig {
  int k = 20;
  int km_init = 20;
  int km_num = 20;
  int km_iter = 100;
  int epochs = 10;
  int batch_size = 16;
  float lr = 1e-4f;
  PhotoParams photo{0.15f, 0.05f};
  uint64_t seed = 0;
};

struct PicieEpochLog {
  double within = 0.0, cross = 0.0, total = 0.0;
};

struct PicieResult {
  CentroidBank bank;  // stream-1 bank, recorded as the segmentation head
  std::vector<PicieEpochLog> epochs;
};

PicieResult train_picie(Extractor& ex, const std::vector<data::ImageGrid>& images,
                        const PicieConfig& cfg);

// Per-pixel argmax of -d(z, mu_k) or of classifier logits, upsampled
// (nearest) back to the input dims.
LabelGrid segment_with_centroids(const Extractor& ex, const CentroidBank& bank,
                                 const data::ImageGrid& image);
LabelGrid segment_with_classifier(const Extractor& ex, const LinearClassifier& cls,
                                  const data::ImageGrid& image);

// Surjective cluster -> class relabeling.
struct ClusterMergeMap {
  std::vector<int> to_class;  // size K
  int classes = 0;
};
LabelGrid merge_clusters(const LabelGrid& clusters, const ClusterMergeMap& map);

// Majority overlap between cluster assignments and classifier labels.
ClusterMergeMap auto_merge_map(const Extractor& ex, const CentroidBank& bank,
                               const LinearClassifier& cls,
                               const std::vector<data::ImageGrid>& images);

// Text lines "<cluster-id> <class-id>".
void save_merge_map(const std::string& path, const ClusterMergeMap& map);
ClusterMergeMap load_merge_map(const std::string& path, int k, int classes);

double pixel_accuracy(const LabelGrid& pred, const LabelGrid& truth);

}  // namespace grammarscope::cluster
