#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "grammarscope/dataset.hpp"
#include "grammarscope/validate.hpp"
#include "testutil.hpp"

using namespace grammarscope;
using namespace grammarscope::validate;
using grammarscope::syntax::SequenceData;
using grammarscope::syntax::SyntaxModel;
using grammarscope::syntax::TraversalKind;
using grammarscope::syntax::TraversalPlan;
using testutil::rel_err;

namespace {

SyntaxModel zero_model(int classes, int mask_res, int hidden) {
  Rng rng(0);
  SyntaxModel m = SyntaxModel::random_init(classes, mask_res, hidden, rng);
  for (auto* arr : {&m.enc_w, &m.enc_b}) std::fill(arr->data.begin(), arr->data.end(), 0.f);
  for (auto* dir : {&m.fwd, &m.bwd})
    for (auto* arr : {&dir->w_i, &dir->w_f, &dir->w_g, &dir->w_o, &dir->b_i, &dir->b_f, &dir->b_g,
                      &dir->b_o, &dir->proj_w, &dir->proj_b})
      std::fill(arr->data.begin(), arr->data.end(), 0.f);
  return m;
}

data::LabelGrid banded_mask(int h, int w, int classes, int phase) {
  data::LabelGrid mask(h, w, classes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask.at(y, x) = static_cast<uint8_t>((y / 4 + phase) % classes);
  return mask;
}

}  // namespace

TEST_CASE("averaged semantics of identical masks reproduces the mask") {
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  const data::LabelGrid mask = banded_mask(16, 16, 3, 0);
  const std::vector<data::LabelGrid> trainset(5, mask);
  const AveragedSemantics avg = averaged_semantics(trainset, plan, 8, 3);
  REQUIRE(avg.steps() == plan.steps());
  const SequenceData seq = syntax::extract_patches(mask, plan, 8, 3);
  for (int t = 0; t < plan.steps(); ++t) {
    CHECK(avg.masks[t].ids == seq.patches[t].ids);
    for (int c = 0; c < 3; ++c) CHECK(avg.sems[t][c] == doctest::Approx(seq.sems[t][c]));
  }
}

TEST_CASE("averaged semantics takes the per-pixel mode; ties go to the lowest id") {
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 8, 16, 8);
  // three trainset masks with classes {1,1,2} at every pixel -> mode 1
  std::vector<data::LabelGrid> trio = {data::LabelGrid(8, 16, 3, 1), data::LabelGrid(8, 16, 3, 1),
                                       data::LabelGrid(8, 16, 3, 2)};
  AveragedSemantics avg = averaged_semantics(trio, plan, 8, 3);
  for (uint8_t id : avg.masks[0].ids) CHECK(id == 1);

  // modal tie {1,2} -> 1
  std::vector<data::LabelGrid> tie = {data::LabelGrid(8, 16, 3, 2), data::LabelGrid(8, 16, 3, 1)};
  avg = averaged_semantics(tie, plan, 8, 3);
  for (uint8_t id : avg.masks[0].ids) CHECK(id == 1);

  CHECK_THROWS_AS(averaged_semantics({}, plan, 8, 3), Error);
}

TEST_CASE("zero-parameter model: per-step error is the norm of the targets per defined direction") {
  const int classes = 3, mask_res = 8;
  SyntaxModel model = zero_model(classes, mask_res, 8);
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  const data::LabelGrid mask = banded_mask(16, 16, classes, 1);
  const SequenceData seq = syntax::extract_sequence(model, mask, plan);
  const ResidualTrace tr = residual_baseline(model, seq);

  const int steps = plan.steps();
  double expected_total = 0.0;
  for (int t = 0; t < steps; ++t) {
    double norm = 0.0;
    for (float v : seq.sems[t]) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    double expected = 0.0;
    if (t >= 1) expected += norm;
    if (t + 1 < steps) expected += norm;
    CHECK(tr.combined[t] == doctest::Approx(expected));
    expected_total += expected;
  }
  CHECK(tr.e_pred == doctest::Approx(expected_total));

  SUBCASE("avg targets: e_pred sums the averaged-vector norms") {
    const AveragedSemantics avg = averaged_semantics({mask}, plan, mask_res, classes);
    const ResidualTrace ta = residual_avg(model, seq, avg);
    double total = 0.0;
    for (int t = 0; t < steps; ++t) {
      double norm = 0.0;
      for (float v : avg.sems[t]) norm += static_cast<double>(v) * v;
      norm = std::sqrt(norm);
      total += (t >= 1 ? norm : 0.0) + (t + 1 < steps ? norm : 0.0);
    }
    CHECK(ta.e_pred == doctest::Approx(total));
  }
}

TEST_CASE("residual_avg equals the baseline when the average matches the sequence") {
  Rng rng(1);
  SyntaxModel model = SyntaxModel::random_init(3, 8, 8, rng);
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  const data::LabelGrid mask = banded_mask(16, 16, 3, 0);
  const SequenceData seq = syntax::extract_sequence(model, mask, plan);
  const AveragedSemantics avg = averaged_semantics({mask}, plan, 8, 3);
  const ResidualTrace base = residual_baseline(model, seq);
  const ResidualTrace with_avg = residual_avg(model, seq, avg);
  CHECK(base.e_pred == doctest::Approx(with_avg.e_pred));
  for (size_t t = 0; t < base.combined.size(); ++t)
    CHECK(base.combined[t] == doctest::Approx(with_avg.combined[t]));
}

TEST_CASE("e_pred is pure: scoring the same sequence twice is bit-identical") {
  Rng rng(2);
  SyntaxModel model = SyntaxModel::random_init(3, 8, 8, rng);
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  data::LabelGrid mask(16, 16, 3);
  for (auto& id : mask.ids) id = static_cast<uint8_t>(rng.uniform_int(3));
  const SequenceData seq = syntax::extract_sequence(model, mask, plan);
  const ResidualTrace a = residual_baseline(model, seq);
  const ResidualTrace b = residual_baseline(model, seq);
  CHECK(a.e_pred == b.e_pred);
  CHECK(a.combined == b.combined);
}

TEST_CASE("miou of identical masks is 1; disjoint single-class masks give 0") {
  data::LabelGrid a(4, 4, 2, 0);
  CHECK(miou_masks(a, a) == doctest::Approx(1.0));
  const data::LabelGrid b(4, 4, 2, 1);
  CHECK(miou_masks(a, b) == doctest::Approx(0.0));
}

TEST_CASE("miou hand-counted example: 2x2 masks give 7/12") {
  data::LabelGrid a(2, 2, 2), b(2, 2, 2);
  a.at(0, 0) = 0; a.at(0, 1) = 0; a.at(1, 0) = 1; a.at(1, 1) = 1;
  b.at(0, 0) = 0; b.at(0, 1) = 0; b.at(1, 0) = 0; b.at(1, 1) = 1;
  // oracle: IoU_0 = 2/3, IoU_1 = 1/2, mean = 7/12
  CHECK(miou_masks(a, b) == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("miou skips classes absent from both masks and stays within [0,1]") {
  data::LabelGrid a(4, 4, 7, 2), b(4, 4, 7, 2);
  b.at(0, 0) = 3;
  const double score = miou_masks(a, b);
  CHECK(score > 0.0);
  CHECK(score <= 1.0);
  // classes 0,1,4,5,6 appear in neither mask and must not drag the mean down
  CHECK(score == doctest::Approx(0.5 * (15.0 / 16.0 + 0.0)));
}

TEST_CASE("miou_validation averages per-step scores and is 1 only for matching masks") {
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  const data::LabelGrid mask = banded_mask(16, 16, 3, 0);
  const AveragedSemantics avg = averaged_semantics({mask}, plan, 8, 3);
  const SequenceData seq = syntax::extract_patches(mask, plan, 8, 3);
  CHECK(miou_validation(seq, avg) == doctest::Approx(1.0));
  const SequenceData other = syntax::extract_patches(banded_mask(16, 16, 3, 1), plan, 8, 3);
  CHECK(miou_validation(other, avg) < 1.0);
}

TEST_CASE("calibrate: perfect separation picks the gap midpoint with balanced accuracy 1") {
  const ThresholdModel model =
      calibrate_threshold({1, 1, 2}, {3, 4, 5}, Direction::kHigherIsCorrupt);
  CHECK(model.tau == doctest::Approx(2.5));
  CHECK(model.balanced_accuracy == doctest::Approx(1.0));
}

TEST_CASE("calibrate: fully overlapping identical lists sit at balanced accuracy 0.5") {
  const ThresholdModel model =
      calibrate_threshold({2, 2, 2}, {2, 2, 2}, Direction::kHigherIsCorrupt);
  CHECK(model.balanced_accuracy == doctest::Approx(0.5));
}

TEST_CASE("calibrate never does worse than the degenerate classifiers") {
  // inverted single points: every midpoint misclassifies both sides
  const ThresholdModel inverted = calibrate_threshold({3}, {1}, Direction::kHigherIsCorrupt);
  CHECK(inverted.balanced_accuracy >= 0.5);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> correct, corrupt;
    for (int i = 0; i < 1 + rng.uniform_int(6); ++i) correct.push_back(rng.uniform(0, 10));
    for (int i = 0; i < 1 + rng.uniform_int(6); ++i) corrupt.push_back(rng.uniform(0, 10));
    const Direction dir = trial % 2 == 0 ? Direction::kHigherIsCorrupt : Direction::kLowerIsCorrupt;
    CHECK(calibrate_threshold(correct, corrupt, dir).balanced_accuracy >= 0.5);
  }

  CHECK_THROWS_AS(calibrate_threshold({}, {1.0}, Direction::kHigherIsCorrupt), Error);
  CHECK_THROWS_AS(calibrate_threshold({1.0}, {}, Direction::kHigherIsCorrupt), Error);
}

TEST_CASE("classify: boundary score counts as correct; epsilon beyond flips per direction") {
  ThresholdModel residual{2.0, Direction::kHigherIsCorrupt, 1.0};
  CHECK_FALSE(classify_corrupt(2.0, residual));
  CHECK(classify_corrupt(2.0 + 1e-9, residual));
  CHECK_FALSE(classify_corrupt(2.0 - 1e-9, residual));

  ThresholdModel miou{0.6, Direction::kLowerIsCorrupt, 1.0};
  CHECK_FALSE(classify_corrupt(0.6, miou));
  CHECK(classify_corrupt(0.6 - 1e-9, miou));
  CHECK_FALSE(classify_corrupt(0.6 + 1e-9, miou));
}

TEST_CASE("threshold model JSON round-trips") {
  testutil::TempDir tmp("threshold");
  const ThresholdModel model{2.625, Direction::kLowerIsCorrupt, 0.875};
  save_threshold(tmp.sub("t.json"), model);
  const ThresholdModel back = load_threshold(tmp.sub("t.json"));
  CHECK(back.tau == model.tau);
  CHECK(back.direction == model.direction);
  CHECK(back.balanced_accuracy == model.balanced_accuracy);
}

TEST_CASE("detection metrics reproduce hand-computed confusion matrices") {
  struct Fixture {
    int tp, tn, fp, fn;
    double accuracy, recall;
  };
  // hand-computed: accuracy = (tp+tn)/total, recall = tp/(tp+fn)
  const Fixture fixtures[] = {
      {5, 5, 0, 0, 1.0, 1.0},
      {96, 88, 12, 4, 0.92, 0.96},
      {0, 10, 0, 10, 0.5, 0.0},
      {10, 0, 10, 0, 0.5, 1.0},
      {1, 1, 1, 1, 0.5, 0.5},
      {3, 17, 2, 3, 0.8, 0.5},
      {50, 30, 10, 10, 0.8, 5.0 / 6.0},
      {7, 0, 0, 3, 0.7, 0.7},
      {0, 1, 3, 0, 0.25, 0.0},
      {25, 50, 15, 10, 0.75, 25.0 / 35.0},
  };
  for (const Fixture& f : fixtures) {
    std::vector<bool> verdicts, labels;
    auto add = [&](int count, bool verdict, bool label) {
      for (int i = 0; i < count; ++i) {
        verdicts.push_back(verdict);
        labels.push_back(label);
      }
    };
    add(f.tp, true, true);
    add(f.tn, false, false);
    add(f.fp, true, false);
    add(f.fn, false, true);
    const DetectionReport r = detection_metrics(verdicts, labels);
    CHECK(r.tp == f.tp);
    CHECK(r.tn == f.tn);
    CHECK(r.fp == f.fp);
    CHECK(r.fn == f.fn);
    CHECK(r.accuracy == doctest::Approx(f.accuracy));
    CHECK(r.recall == doctest::Approx(f.recall));
  }
}

TEST_CASE("all-corrupt predictions on a balanced set: accuracy 0.5, recall 1.0") {
  std::vector<bool> verdicts(10, true);
  std::vector<bool> labels(10, false);
  for (int i = 0; i < 5; ++i) labels[i] = true;
  const DetectionReport r = detection_metrics(verdicts, labels);
  CHECK(r.accuracy == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(1.0));
}

TEST_CASE("puzzle solving: ties resolve to the lowest index") {
  CHECK(solve_puzzle_residual({1.5, 1.5, 1.5, 1.5}) == 0);
  CHECK(solve_puzzle_residual({2.0, 0.5, 0.5}) == 1);
  CHECK(solve_puzzle_miou({0.7, 0.7, 0.7}) == 0);
  CHECK(solve_puzzle_miou({0.2, 0.9, 0.9}) == 1);
}

TEST_CASE("puzzle via miou: average equal to the original's masks selects index 0") {
  const TraversalPlan plan = syntax::build_traversal(TraversalKind::kZigZag, 16, 16, 8);
  const data::LabelGrid original = banded_mask(16, 16, 3, 0);
  const AveragedSemantics avg = averaged_semantics({original}, plan, 8, 3);
  std::vector<double> scores;
  scores.push_back(miou_validation(syntax::extract_patches(original, plan, 8, 3), avg));
  for (int phase = 1; phase < 3; ++phase)
    scores.push_back(
        miou_validation(syntax::extract_patches(banded_mask(16, 16, 3, phase), plan, 8, 3), avg));
  CHECK(scores[0] == doctest::Approx(1.0));
  CHECK(solve_puzzle_miou(scores) == 0);
}
