#pragma once

#include <map>
#include <string>
#include <vector>

#include "grammarscope/dense.hpp"
#include "grammarscope/image.hpp"
#include "grammarscope/rng.hpp"
#include "grammarscope/tape.hpp"
#include "grammarscope/transforms.hpp"

namespace grammarscope::syntax {

using data::LabelGrid;
using data::Rect;
using num::DenseArray;

enum class TraversalKind { kFiveCrop, kZigZag };

TraversalKind parse_traversal(const std::string& s);
const char* traversal_name(TraversalKind kind);

// Ordered patch rectangles defining the syntax sequence. Zig-zag is
// serpentine (row 0 left-to-right, row 1 right-to-left, ...); five-crop
// follows the anchor order and may be treated as circular for training
// augmentation.
struct TraversalPlan {
  TraversalKind kind = TraversalKind::kZigZag;
  int ps = 0;
  std::vector<Rect> rects;
  int steps() const { return static_cast<int>(rects.size()); }
};

TraversalPlan build_traversal(TraversalKind kind, int h, int w, int ps,
                              const std::vector<std::pair<int, int>>& anchors = {});

void save_plan(const std::string& path, const TraversalPlan& plan);
TraversalPlan load_plan(const std::string& path);

// Class-proportion histogram of a mask patch; entries sum to 1.
std::vector<float> semantics_vector(const LabelGrid& patch, int classes);

inline constexpr int kEncoderDim = 128;

// Mask encoder (ps_mask^2 -> 128 affine), two LSTM directions with gate
// parameter sets {W_i, W_f, W_g, W_o} / {b_i, ...} over concat(x, h), and a
// projection (hidden -> C) per direction.
struct SyntaxModel {
  int classes = 0;
  int mask_res = 64;
  int hidden = 0;  // defaults to 128 + C

  DenseArray enc_w, enc_b;  // [mask_res^2, 128], [1, 128]
  struct Direction {
    DenseArray w_i, w_f, w_g, w_o;  // [(input+hidden), hidden]
    DenseArray b_i, b_f, b_g, b_o;  // [1, hidden]
    DenseArray proj_w, proj_b;      // [hidden, C], [1, C]
  };
  Direction fwd, bwd;

  int input_dim() const { return kEncoderDim + classes; }

  static SyntaxModel random_init(int classes, int mask_res, int hidden, Rng& rng);
};

void save_model(const std::string& path, const SyntaxModel& model);
SyntaxModel load_model(const std::string& path);

// Mask patch at the model's mask resolution, encoded as ids/(C-1), flattened,
// affine-mapped to 128 and concatenated with the semantics vector.
std::vector<float> encode_patch(const SyntaxModel& model, const LabelGrid& patch);

struct PredictionPair {
  std::vector<float> forward;   // targets s_{t+1}
  std::vector<float> backward;  // targets s_{t-1}
};

// Runs both directions over a full sequence of encoded patch inputs
// (each of length 128 + C). Zero initial hidden and cell states.
std::vector<PredictionPair> bilstm_forward(const SyntaxModel& model,
                                           const std::vector<std::vector<float>>& inputs);

// Patch/semantics sequence for one mask via the plan (crop + nearest resize).
struct SequenceData {
  std::vector<LabelGrid> patches;           // at the mask resolution
  std::vector<std::vector<float>> sems;     // per-step semantics vectors
  std::vector<std::vector<float>> inputs;   // encoded PatchInputs (may be empty)
};

// Model-free extraction, enough for the mIoU method.
SequenceData extract_patches(const LabelGrid& mask, const TraversalPlan& plan, int mask_res,
                             int classes);
// Fills seq.inputs through the model's encoder.
void encode_sequence(const SyntaxModel& model, SequenceData& seq);
SequenceData extract_sequence(const SyntaxModel& model, const LabelGrid& mask,
                              const TraversalPlan& plan);

// Mean over the 2(G-1) in-range terms of |p - s|^2 (forward prediction made
// at t-1 targets s_t; backward made at t+1 targets s_t).
double syntax_loss(const std::vector<PredictionPair>& preds,
                   const std::vector<std::vector<float>>& sems);

enum class LrSchedule { kConstant, kStepHalfway, kMultiStep };
LrSchedule parse_schedule(const std::string& s);

struct SyntaxTrainConfig {
  int epochs = 40;
  int batch_size = 32;
  float lr = 1e-4f;
  LrSchedule schedule = LrSchedule::kStepHalfway;  // lr/10 after epoch 20
  bool circular_shift = false;  // five-crop augmentation: random rotation
  uint64_t seed = 0;
};

struct SyntaxTrainResult {
  std::vector<double> epoch_loss;
};

// Trains encoder + LSTM + projections jointly on sequences from correct
// masks only.
SyntaxTrainResult train_syntax(SyntaxModel& model, const std::vector<LabelGrid>& masks,
                               const TraversalPlan& plan, const SyntaxTrainConfig& cfg);

// Tape construction for a batch of sequences, shared between training and
// the joint gradient check. Returns the loss node; leaves are registered as
// "mask_t<k>" / "sem_t<k>" inputs and the model parameter names.
template <typename S>
struct SyntaxGraph {
  num::TapeT<S> tape;
  typename num::TapeT<S>::Id loss = -1;
  std::vector<typename num::TapeT<S>::Id> mask_inputs;  // per step, {B, mask_res^2}
  std::vector<typename num::TapeT<S>::Id> sem_inputs;   // per step, {B, C}
  std::vector<typename num::TapeT<S>::Id> neg_sem_inputs;
  std::map<std::string, typename num::TapeT<S>::Id> params;
};

template <typename S>
SyntaxGraph<S> build_syntax_graph(const SyntaxModel& model, int steps, int batch);

// Binds one batch of sequences to the graph's input leaves.
template <typename S>
void bind_sequences(SyntaxGraph<S>& graph, const std::vector<const SequenceData*>& batch);

extern template struct SyntaxGraph<float>;
extern template struct SyntaxGraph<double>;
extern template SyntaxGraph<float> build_syntax_graph<float>(const SyntaxModel&, int, int);
extern template SyntaxGraph<double> build_syntax_graph<double>(const SyntaxModel&, int, int);
extern template void bind_sequences<float>(SyntaxGraph<float>&, const std::vector<const SequenceData*>&);
extern template void bind_sequences<double>(SyntaxGraph<double>&, const std::vector<const SequenceData*>&);

}  // namespace grammarscope::syntax
