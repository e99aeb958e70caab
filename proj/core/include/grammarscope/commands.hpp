#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grammarscope/cluster.hpp"
#include "grammarscope/config.hpp"
#include "grammarscope/dataset.hpp"
#include "grammarscope/syntax.hpp"
#include "grammarscope/validate.hpp"

namespace grammarscope::cli {

// Stage-1 weights bundle persisted in one IGWT container.
struct Stage1Artifacts {
  cluster::Extractor extractor;
  cluster::LinearClassifier classifier;
  std::optional<cluster::CentroidBank> bank;
};

void save_stage1(const std::string& path, const Stage1Artifacts& art);
Stage1Artifacts load_stage1(const std::string& path);

// Pipeline commands. Each consumes/produces the documented file artifacts
// and throws grammarscope::Error on contract violations (the CLI maps that
// to a nonzero exit with one machine-readable error line).

// out/: data/sample_*.{ppm,pgm}, train.txt, val.txt, test.txt
void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force);

// out/: copies of every split file with ceil(half) corrupted (seeded choice),
// manifest.txt, records.jsonl (one line per corrupted image).
void cmd_corrupt(const RunConfig& cfg, const std::string& manifest_path, const std::string& out_dir);

// out/: weights.igwt (+ merge.txt, prior_log.csv, picie_log.csv, pd_log.csv
// depending on cluster_stage). weights_in/plan_in/masks_in feed the
// patch-detector stage.
void cmd_train_cluster(const RunConfig& cfg, const std::string& manifest_path,
                       const std::string& out_dir, const std::string& weights_in = "",
                       const std::string& plan_in = "", const std::string& masks_in = "");

// out/: pred_*.pgm + manifest.txt pairing source images with predictions.
void cmd_segment(const RunConfig& cfg, const std::string& weights_path,
                 const std::string& manifest_path, const std::string& out_dir);

// out/: model.igwt, plan.json, syntax_log.csv
void cmd_train_syntax(const RunConfig& cfg, const std::string& masks_manifest,
                      const std::string& out_dir);

// out/: threshold.json, scores.csv (score,label histogram data)
void cmd_calibrate(const RunConfig& cfg, const std::string& masks_manifest,
                   const std::string& records_path, const std::string& model_path,
                   const std::string& train_masks, const std::string& plan_path,
                   const std::string& out_dir);

// out/: report.csv, report.json (per-image traces), scores.csv
void cmd_evaluate(const RunConfig& cfg, const std::string& masks_manifest,
                  const std::string& records_path, const std::string& model_path,
                  const std::string& train_masks, const std::string& plan_path,
                  const std::string& threshold_path, const std::string& out_dir);

// out/: report.csv (one row per method), report.json
void cmd_puzzle(const RunConfig& cfg, const std::string& images_manifest,
                const std::string& weights_path, const std::string& model_path,
                const std::string& train_masks, const std::string& plan_path,
                const std::string& out_dir);

// Merges scenario report CSVs into one (single header).
void cmd_report(const std::vector<std::string>& inputs, const std::string& out_csv);

// Shared helpers (exposed for tests).
syntax::TraversalPlan plan_from_config(const RunConfig& cfg, int h, int w);
std::vector<data::Rect> corruption_rects(const RunConfig& cfg, int h, int w);

}  // namespace grammarscope::cli
