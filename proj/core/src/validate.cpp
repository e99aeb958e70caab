#include "grammarscope/validate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace grammarscope::validate {

Method parse_method(const std::string& s) {
  if (s == "baseline") return Method::kBaseline;
  if (s == "avg") return Method::kAvgSemantics;
  if (s == "miou") return Method::kMiou;
  throw Error("unknown method '" + s + "' (expected baseline|avg|miou)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kAvgSemantics: return "avg";
    case Method::kMiou: return "miou";
  }
  return "?";
}

AveragedSemantics averaged_semantics(const std::vector<LabelGrid>& masks, const TraversalPlan& plan,
                                     int mask_res, int classes) {
  require(!masks.empty(), "averaged_semantics: empty trainset");
  const int steps = plan.steps();
  const int res = mask_res;

  // counts[t][pixel][class]
  std::vector<std::vector<int64_t>> counts(
      steps, std::vector<int64_t>(static_cast<size_t>(res) * res * classes, 0));
  std::vector<std::vector<double>> sem_sums(steps, std::vector<double>(classes, 0.0));

  for (const LabelGrid& mask : masks) {
    const SequenceData seq = syntax::extract_patches(mask, plan, mask_res, classes);
    for (int t = 0; t < steps; ++t) {
      const LabelGrid& patch = seq.patches[t];
      for (size_t p = 0; p < patch.ids.size(); ++p) counts[t][p * classes + patch.ids[p]] += 1;
      for (int c = 0; c < classes; ++c) sem_sums[t][c] += seq.sems[t][c];
    }
  }

  AveragedSemantics avg;
  for (int t = 0; t < steps; ++t) {
    LabelGrid modal(res, res, classes);
    for (int p = 0; p < res * res; ++p) {
      int best = 0;  // modal class, ties to the lowest id
      for (int c = 1; c < classes; ++c)
        if (counts[t][static_cast<size_t>(p) * classes + c] >
            counts[t][static_cast<size_t>(p) * classes + best])
          best = c;
      modal.ids[p] = static_cast<uint8_t>(best);
    }
    avg.masks.push_back(std::move(modal));
    double total = 0.0;
    for (double v : sem_sums[t]) total += v;
    std::vector<float> sem(classes);
    for (int c = 0; c < classes; ++c)
      sem[c] = total > 0.0 ? static_cast<float>(sem_sums[t][c] / total) : 0.f;
    avg.sems.push_back(std::move(sem));
  }
  return avg;
}

namespace {

double l2(const std::vector<float>& a, const std::vector<float>& b) {
  require(a.size() == b.size(), "residual: prediction/target length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

ResidualTrace residual_against(const SyntaxModel& model, const SequenceData& seq,
                               const std::vector<std::vector<float>>& targets) {
  const int steps = static_cast<int>(seq.inputs.size());
  require(static_cast<int>(targets.size()) == steps, "residual: target count mismatch");
  const auto preds = syntax::bilstm_forward(model, seq.inputs);
  ResidualTrace tr;
  tr.forward.assign(steps, 0.0);
  tr.backward.assign(steps, 0.0);
  tr.combined.assign(steps, 0.0);
  for (int t = 0; t < steps; ++t) {
    if (t >= 1) tr.forward[t] = l2(preds[t - 1].forward, targets[t]);
    if (t + 1 < steps) tr.backward[t] = l2(preds[t + 1].backward, targets[t]);
    tr.combined[t] = tr.forward[t] + tr.backward[t];
  }
  double total = 0.0;
  for (int t = 0; t < steps; ++t) total += tr.combined[t];  // fixed order
  tr.e_pred = total;
  return tr;
}

}  // namespace

ResidualTrace residual_baseline(const SyntaxModel& model, const SequenceData& seq) {
  return residual_against(model, seq, seq.sems);
}

ResidualTrace residual_avg(const SyntaxModel& model, const SequenceData& seq,
                           const AveragedSemantics& avg) {
  require(avg.steps() == static_cast<int>(seq.inputs.size()),
          "residual_avg: averaged semantics step count mismatch");
  std::vector<std::vector<float>> targets(avg.sems.begin(), avg.sems.end());
  return residual_against(model, seq, targets);
}

double miou_masks(const LabelGrid& a, const LabelGrid& b) {
  require(a.h == b.h && a.w == b.w, "miou_masks: dims mismatch");
  const int classes = std::max(a.classes, b.classes);
  std::vector<int64_t> inter(classes, 0), uni(classes, 0);
  for (size_t i = 0; i < a.ids.size(); ++i) {
    const int ca = a.ids[i], cb = b.ids[i];
    if (ca == cb) {
      inter[ca] += 1;
      uni[ca] += 1;
    } else {
      uni[ca] += 1;
      uni[cb] += 1;
    }
  }
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (uni[c] == 0) continue;  // absent from both masks
    total += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    present += 1;
  }
  return present == 0 ? 0.0 : total / present;
}

double miou_validation(const SequenceData& seq, const AveragedSemantics& avg) {
  const int steps = static_cast<int>(seq.patches.size());
  require(avg.steps() == steps, "miou_validation: step count mismatch");
  double total = 0.0;
  for (int t = 0; t < steps; ++t) total += miou_masks(seq.patches[t], avg.masks[t]);
  return total / steps;
}

namespace {

double balanced_accuracy(const std::vector<double>& correct, const std::vector<double>& corrupt,
                         double tau, Direction dir) {
  int64_t tp = 0, tn = 0;
  for (double s : corrupt)
    if ((dir == Direction::kHigherIsCorrupt && s > tau) ||
        (dir == Direction::kLowerIsCorrupt && s < tau))
      tp += 1;
  for (double s : correct)
    if (!((dir == Direction::kHigherIsCorrupt && s > tau) ||
          (dir == Direction::kLowerIsCorrupt && s < tau)))
      tn += 1;
  const double tpr = static_cast<double>(tp) / static_cast<double>(corrupt.size());
  const double tnr = static_cast<double>(tn) / static_cast<double>(correct.size());
  return 0.5 * (tpr + tnr);
}

}  // namespace

ThresholdModel calibrate_threshold(const std::vector<double>& correct_scores,
                                   const std::vector<double>& corrupt_scores, Direction direction) {
  require(!correct_scores.empty() && !corrupt_scores.empty(),
          "calibrate_threshold: both score lists must be non-empty");
  std::vector<double> uniq;
  uniq.insert(uniq.end(), correct_scores.begin(), correct_scores.end());
  uniq.insert(uniq.end(), corrupt_scores.begin(), corrupt_scores.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> candidates;
  for (size_t i = 0; i + 1 < uniq.size(); ++i) candidates.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  // End thresholds matching the two degenerate classifiers, so the chosen tau
  // is never worse than either.
  if (direction == Direction::kHigherIsCorrupt) {
    candidates.push_back(uniq.back());        // all correct
    candidates.push_back(uniq.front() - 1.0);  // all corrupt
  } else {
    candidates.push_back(uniq.front());       // all correct
    candidates.push_back(uniq.back() + 1.0);  // all corrupt
  }
  std::sort(candidates.begin(), candidates.end());

  ThresholdModel best;
  best.direction = direction;
  best.balanced_accuracy = -1.0;
  for (double tau : candidates) {
    const double ba = balanced_accuracy(correct_scores, corrupt_scores, tau, direction);
    if (ba > best.balanced_accuracy) {  // ties keep the smallest tau
      best.balanced_accuracy = ba;
      best.tau = tau;
    }
  }
  return best;
}

void save_threshold(const std::string& path, const ThresholdModel& model) {
  nlohmann::json j;
  j["tau"] = model.tau;
  j["direction"] = model.direction == Direction::kHigherIsCorrupt ? "higher" : "lower";
  j["balanced_accuracy"] = model.balanced_accuracy;
  std::ofstream os(path);
  require(os.good(), "save_threshold: cannot open " + path);
  os << j.dump(2) << "\n";
}

ThresholdModel load_threshold(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "load_threshold: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  ThresholdModel m;
  m.tau = j.at("tau").get<double>();
  const std::string dir = j.at("direction").get<std::string>();
  require(dir == "higher" || dir == "lower", "load_threshold: bad direction");
  m.direction = dir == "higher" ? Direction::kHigherIsCorrupt : Direction::kLowerIsCorrupt;
  m.balanced_accuracy = j.value("balanced_accuracy", 0.0);
  return m;
}

bool classify_corrupt(double score, const ThresholdModel& model) {
  return model.direction == Direction::kHigherIsCorrupt ? score > model.tau : score < model.tau;
}

DetectionReport detection_metrics(const std::vector<bool>& verdicts, const std::vector<bool>& labels) {
  require(verdicts.size() == labels.size(), "detection_metrics: verdict/label count mismatch");
  require(!verdicts.empty(), "detection_metrics: empty inputs");
  DetectionReport r;
  for (size_t i = 0; i < verdicts.size(); ++i) {
    if (labels[i] && verdicts[i]) r.tp += 1;
    else if (labels[i] && !verdicts[i]) r.fn += 1;
    else if (!labels[i] && verdicts[i]) r.fp += 1;
    else r.tn += 1;
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(verdicts.size());
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  return r;
}

int solve_puzzle_residual(const std::vector<double>& e_preds) {
  require(!e_preds.empty(), "solve_puzzle: no copies");
  int best = 0;
  for (size_t i = 1; i < e_preds.size(); ++i)
    if (e_preds[i] < e_preds[best]) best = static_cast<int>(i);  // ties keep the lowest index
  return best;
}

int solve_puzzle_miou(const std::vector<double>& scores) {
  require(!scores.empty(), "solve_puzzle: no copies");
  int best = 0;
  for (size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace grammarscope::validate
