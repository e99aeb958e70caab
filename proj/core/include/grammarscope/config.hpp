#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grammarscope/error.hpp"

namespace grammarscope::cli {

// Every tunable of the pipeline as a typed key. Configs are plain-text
// key=value files; unknown keys are rejected and every value is range-checked
// at load. The seed is mandatory (no wall-clock seeding anywhere).
struct RunConfig {
  uint64_t seed = 0;

  // data
  std::string layout = "face";
  int classes = 0;  // 0 = derived from layout
  int image_h = 64, image_w = 64;
  int n = 100;
  int split_train = 80, split_val = 10, split_test = 10;
  int jitter_pos = 2;
  float color_jitter = 0.06f;

  // photometric augmentation (stage-1 streams and invariance checks)
  float photo_gain = 0.15f;
  float photo_bias = 0.05f;

  // cluster / stage 1
  int feat_dim = 32;
  int k = 20;
  int km_init = 20;
  int km_num = 20;
  int km_iter = 100;
  std::string cluster_stage = "prior";  // prior | picie | prior+picie | patch
  int prior_n = 50;
  int prior_epochs = 10;
  float prior_lr = 1e-4f;
  int prior_batch = 16;
  int picie_epochs = 10;
  float picie_lr = 1e-4f;
  int picie_batch = 16;
  std::string seg_source = "classifier";  // classifier | centroids
  std::string merge_map;                  // optional path; empty = auto
  int pd_epochs = 5;
  float pd_lr = 1e-4f;

  // syntax / stage 2
  std::string traversal;  // five-crop | zig-zag; empty = derived from layout
  int ps = 16;
  int mask_res = 64;
  int hidden = 0;  // 0 = 128 + C
  int syn_epochs = 40;
  float syn_lr = 1e-4f;
  int syn_batch = 32;
  std::string syn_schedule = "step";  // constant | step | multistep
  bool circular_shift = false;

  // corruption scenarios
  std::string corrupt_kind = "shuffle";    // shuffle | blackout | blur | puzzle
  std::string corrupt_mode = "landmarks";  // tiling | landmarks
  int num_patch = 2;
  int corrupt_ps = 16;
  int kernel_size = 7;
  float sigma = 3.f;
  int num_perm = 3;

  // validation
  std::string method = "baseline";  // baseline | avg | miou
  int puzzle_count = 0;             // 0 = every correct test image

  int jobs = 1;

  int resolved_classes() const;
  std::string resolved_traversal() const;
};

// Parses the file (may be empty string for defaults) then applies overrides
// of the form "key=value".
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

// One line per key: "name (type, default=..): range" — used by --help.
std::string config_help();

}  // namespace grammarscope::cli
