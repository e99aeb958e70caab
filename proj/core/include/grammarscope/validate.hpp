#pragma once

#include <string>
#include <vector>

#include "grammarscope/syntax.hpp"

namespace grammarscope::validate {

using data::LabelGrid;
using syntax::SequenceData;
using syntax::SyntaxModel;
using syntax::TraversalPlan;

enum class Method { kBaseline, kAvgSemantics, kMiou };
Method parse_method(const std::string& s);
const char* method_name(Method m);

// Per-step modal mask and mean semantics vector over the training set; the
// universal syntax reference for test methods 2 and 3.
struct AveragedSemantics {
  std::vector<LabelGrid> masks;             // at the model mask resolution
  std::vector<std::vector<float>> sems;     // renormalized means
  int steps() const { return static_cast<int>(masks.size()); }
};

AveragedSemantics averaged_semantics(const std::vector<LabelGrid>& masks, const TraversalPlan& plan,
                                     int mask_res, int classes);

struct ResidualTrace {
  std::vector<double> forward;   // per step, 0 where undefined
  std::vector<double> backward;
  std::vector<double> combined;  // forward + backward
  double e_pred = 0.0;           // fixed-order sum of combined
};

// Method 1: per-step L2 against the sequence's own semantics.
ResidualTrace residual_baseline(const SyntaxModel& model, const SequenceData& seq);
// Method 2: same predictions, targets replaced by the averaged semantics.
ResidualTrace residual_avg(const SyntaxModel& model, const SequenceData& seq,
                           const AveragedSemantics& avg);

// Method 3 (model-free): mean over steps of mean-over-present-classes IoU
// between the step mask and the averaged mask.
double miou_masks(const LabelGrid& a, const LabelGrid& b);
double miou_validation(const SequenceData& seq, const AveragedSemantics& avg);

enum class Direction { kHigherIsCorrupt, kLowerIsCorrupt };

struct ThresholdModel {
  double tau = 0.0;
  Direction direction = Direction::kHigherIsCorrupt;
  double balanced_accuracy = 0.0;  // on the calibration lists
};

// Candidates are midpoints of adjacent sorted unique scores plus the two
// degenerate end thresholds; picks the balanced-accuracy maximizer, ties to
// the smallest tau.
ThresholdModel calibrate_threshold(const std::vector<double>& correct_scores,
                                   const std::vector<double>& corrupt_scores, Direction direction);

void save_threshold(const std::string& path, const ThresholdModel& model);
ThresholdModel load_threshold(const std::string& path);

// Returns true when corrupted. A score equal to tau classifies as correct.
bool classify_corrupt(double score, const ThresholdModel& model);

struct DetectionReport {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy = 0.0;
  double recall = 0.0;
};

// verdicts/labels: true = corrupted.
DetectionReport detection_metrics(const std::vector<bool>& verdicts, const std::vector<bool>& labels);

// Puzzle solving across copies of one image: residual methods take the
// argmin of e_pred, the mIoU method the argmax score; ties resolve to the
// lowest index (the original is index 0 by construction).
int solve_puzzle_residual(const std::vector<double>& e_preds);
int solve_puzzle_miou(const std::vector<double>& scores);

}  // namespace grammarscope::validate
