// grammarscope: learns part semantics (deep clustering) and part arrangement
// (bi-LSTM syntax) from synthetic scenes, then flags patch corruptions.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grammarscope/commands.hpp"

namespace gs = grammarscope;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "key=value config file");
  cmd->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
  cmd->footer(gs::cli::config_help());
}

gs::cli::RunConfig load(const CommonArgs& args) {
  return gs::cli::load_config(args.config, args.sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grammarscope: image-grammar learning and patch-corruption detection"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  std::string gen_out;
  bool gen_force = false;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset with split manifests");
  add_common(gen, gen_args);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");

  CommonArgs cor_args;
  std::string cor_manifest, cor_out;
  CLI::App* cor = app.add_subcommand("corrupt", "corrupt half of a manifest (seeded choice)");
  add_common(cor, cor_args);
  cor->add_option("--manifest", cor_manifest, "input manifest")->required();
  cor->add_option("--out", cor_out, "output directory")->required();

  CommonArgs tc_args;
  std::string tc_manifest, tc_out, tc_weights, tc_plan, tc_masks;
  CLI::App* tc = app.add_subcommand("train-cluster", "stage-1 training (prior|picie|prior+picie|patch)");
  add_common(tc, tc_args);
  tc->add_option("--manifest", tc_manifest, "training manifest")->required();
  tc->add_option("--out", tc_out, "output directory")->required();
  tc->add_option("--weights", tc_weights, "existing stage-1 weights (picie/patch stages)");
  tc->add_option("--plan", tc_plan, "traversal plan JSON (patch stage)");
  tc->add_option("--masks", tc_masks, "stage-1 mask manifest (patch stage)");

  CommonArgs seg_args;
  std::string seg_weights, seg_manifest, seg_out;
  CLI::App* seg = app.add_subcommand("segment", "predict semantic masks for a manifest");
  add_common(seg, seg_args);
  seg->add_option("--weights", seg_weights, "stage-1 weights")->required();
  seg->add_option("--manifest", seg_manifest, "input manifest")->required();
  seg->add_option("--out", seg_out, "output directory")->required();

  CommonArgs ts_args;
  std::string ts_masks, ts_out;
  CLI::App* ts = app.add_subcommand("train-syntax", "stage-2 bi-LSTM training on mask sequences");
  add_common(ts, ts_args);
  ts->add_option("--masks", ts_masks, "mask manifest (correct images only)")->required();
  ts->add_option("--out", ts_out, "output directory")->required();

  CommonArgs cal_args;
  std::string cal_masks, cal_records, cal_model, cal_train_masks, cal_plan, cal_out;
  CLI::App* cal = app.add_subcommand("calibrate", "choose the detection threshold on validation scores");
  add_common(cal, cal_args);
  cal->add_option("--masks", cal_masks, "validation mask manifest (corrupted split)")->required();
  cal->add_option("--records", cal_records, "records.jsonl from corrupt")->required();
  cal->add_option("--model", cal_model, "syntax model (residual methods)");
  cal->add_option("--train-masks", cal_train_masks, "trainset mask manifest (avg/miou methods)");
  cal->add_option("--plan", cal_plan, "traversal plan JSON")->required();
  cal->add_option("--out", cal_out, "output directory")->required();

  CommonArgs ev_args;
  std::string ev_masks, ev_records, ev_model, ev_train_masks, ev_plan, ev_threshold, ev_out;
  CLI::App* ev = app.add_subcommand("evaluate", "score a test split and report detection metrics");
  add_common(ev, ev_args);
  ev->add_option("--masks", ev_masks, "test mask manifest (corrupted split)")->required();
  ev->add_option("--records", ev_records, "records.jsonl from corrupt")->required();
  ev->add_option("--model", ev_model, "syntax model (residual methods)");
  ev->add_option("--train-masks", ev_train_masks, "trainset mask manifest (avg/miou methods)");
  ev->add_option("--plan", ev_plan, "traversal plan JSON")->required();
  ev->add_option("--threshold", ev_threshold, "threshold.json from calibrate")->required();
  ev->add_option("--out", ev_out, "output directory")->required();

  CommonArgs pz_args;
  std::string pz_manifest, pz_weights, pz_model, pz_train_masks, pz_plan, pz_out;
  CLI::App* pz = app.add_subcommand("puzzle", "puzzle-solving success for all three methods");
  add_common(pz, pz_args);
  pz->add_option("--manifest", pz_manifest, "correct test image manifest")->required();
  pz->add_option("--weights", pz_weights, "stage-1 weights")->required();
  pz->add_option("--model", pz_model, "syntax model")->required();
  pz->add_option("--train-masks", pz_train_masks, "trainset mask manifest")->required();
  pz->add_option("--plan", pz_plan, "traversal plan JSON")->required();
  pz->add_option("--out", pz_out, "output directory")->required();

  std::vector<std::string> rep_inputs;
  std::string rep_out;
  CLI::App* rep = app.add_subcommand("report", "merge scenario report CSVs");
  rep->add_option("--out", rep_out, "merged CSV path")->required();
  rep->add_option("inputs", rep_inputs, "scenario report.csv files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) gs::cli::cmd_gen_data(load(gen_args), gen_out, gen_force);
    if (cor->parsed()) gs::cli::cmd_corrupt(load(cor_args), cor_manifest, cor_out);
    if (tc->parsed())
      gs::cli::cmd_train_cluster(load(tc_args), tc_manifest, tc_out, tc_weights, tc_plan, tc_masks);
    if (seg->parsed()) gs::cli::cmd_segment(load(seg_args), seg_weights, seg_manifest, seg_out);
    if (ts->parsed()) gs::cli::cmd_train_syntax(load(ts_args), ts_masks, ts_out);
    if (cal->parsed())
      gs::cli::cmd_calibrate(load(cal_args), cal_masks, cal_records, cal_model, cal_train_masks,
                             cal_plan, cal_out);
    if (ev->parsed())
      gs::cli::cmd_evaluate(load(ev_args), ev_masks, ev_records, ev_model, ev_train_masks, ev_plan,
                            ev_threshold, ev_out);
    if (pz->parsed())
      gs::cli::cmd_puzzle(load(pz_args), pz_manifest, pz_weights, pz_model, pz_train_masks, pz_plan,
                          pz_out);
    if (rep->parsed()) gs::cli::cmd_report(rep_inputs, rep_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
