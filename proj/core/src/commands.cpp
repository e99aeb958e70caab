#include "grammarscope/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include "grammarscope/corrupt.hpp"
#include "grammarscope/log.hpp"
#include "grammarscope/weights.hpp"
#include "json.hpp"

namespace grammarscope::cli {

namespace fs = std::filesystem;
using data::DatasetManifest;
using data::ImageGrid;
using data::LabelGrid;
using num::DenseArray;

namespace {

constexpr uint64_t kGenSalt = 1, kCorruptSalt = 2, kClusterSalt = 3, kSyntaxSalt = 4,
                   kPuzzleSalt = 5;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void require_artifact(const std::string& path, const std::string& what, const std::string& producer) {
  require(!path.empty() && fs::exists(path),
          "missing upstream artifact: " + what + " '" + path + "' (run " + producer + " first)");
}

void ensure_out_dir(const std::string& out_dir) { fs::create_directories(out_dir); }

// Deterministic static-chunk parallel map; results land by index.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const int chunk = (n + jobs - 1) / jobs;
  for (int w = 0; w < jobs; ++w) {
    const int lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

data::SyntheticSpec spec_from_config(const RunConfig& cfg) {
  data::SyntheticSpec spec;
  spec.layout = data::parse_layout(cfg.layout);
  spec.h = cfg.image_h;
  spec.w = cfg.image_w;
  spec.jitter_pos = cfg.jitter_pos;
  spec.color_jitter = cfg.color_jitter;
  spec.count = cfg.n;
  spec.seed = mix_seed(cfg.seed, kGenSalt);
  return spec;
}

std::string filename_of(const std::string& path) { return fs::path(path).filename().string(); }

// Corrupted-image filenames from records.jsonl.
std::set<std::string> corrupted_ids(const std::string& records_path) {
  std::ifstream is(records_path);
  require(is.good(), "cannot open records file " + records_path);
  std::set<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ids.insert(filename_of(j.at("image").get<std::string>()));
  }
  return ids;
}

std::vector<LabelGrid> load_all_masks(const DatasetManifest& manifest) {
  std::vector<LabelGrid> masks;
  masks.reserve(manifest.size());
  for (size_t i = 0; i < manifest.size(); ++i) {
    require(manifest.has_mask(i), "manifest entry " + manifest.entries[i].image + " has no mask");
    masks.push_back(data::load_mask(manifest.mask_path(i)));
  }
  return masks;
}

void write_csv(const std::string& path, const std::string& contents) {
  std::ofstream os(path);
  require(os.good(), "cannot open " + path);
  os << contents;
  require(os.good(), "write failed for " + path);
}

std::string report_csv_header() { return "method,corruption,num_patch,ps,accuracy,recall,puzzle_rate\n"; }

LabelGrid segment_image(const RunConfig& cfg, const Stage1Artifacts& art,
                        const cluster::ClusterMergeMap* merge, const ImageGrid& img) {
  if (cfg.seg_source == "classifier") return cluster::segment_with_classifier(art.extractor, art.classifier, img);
  require(art.bank.has_value(), "seg_source=centroids but weights carry no centroid bank");
  LabelGrid clusters = cluster::segment_with_centroids(art.extractor, *art.bank, img);
  require(merge != nullptr, "seg_source=centroids requires a cluster merge map");
  return cluster::merge_clusters(clusters, *merge);
}

struct ScoredImage {
  std::string id;
  double score = 0.0;
  bool label = false;
  validate::ResidualTrace trace;  // residual methods only
};

std::string scores_csv(const std::vector<ScoredImage>& scored) {
  std::string out = "score,label\n";
  for (const ScoredImage& s : scored) out += fmt_g(s.score) + "," + (s.label ? "1" : "0") + "\n";
  return out;
}

}  // namespace

syntax::TraversalPlan plan_from_config(const RunConfig& cfg, int h, int w) {
  const syntax::TraversalKind kind = syntax::parse_traversal(cfg.resolved_traversal());
  if (kind == syntax::TraversalKind::kFiveCrop) {
    require(cfg.layout == "face", "five-crop traversal needs the face layout's anchor template");
    return syntax::build_traversal(kind, h, w, cfg.ps, data::face_anchor_centers(h, w));
  }
  return syntax::build_traversal(kind, h, w, cfg.ps);
}

std::vector<data::Rect> corruption_rects(const RunConfig& cfg, int h, int w) {
  require(cfg.layout == "face", "landmark corruption needs the face layout's anchor template");
  return data::face_anchor_rects(h, w, cfg.corrupt_ps);
}

void save_stage1(const std::string& path, const Stage1Artifacts& art) {
  std::map<std::string, DenseArray> arrays;
  arrays["extractor.w1"] = art.extractor.w1;
  arrays["extractor.b1"] = art.extractor.b1;
  arrays["extractor.w2"] = art.extractor.w2;
  arrays["extractor.b2"] = art.extractor.b2;
  arrays["classifier.weight"] = art.classifier.weight;
  arrays["classifier.bias"] = art.classifier.bias;
  if (art.bank.has_value()) arrays["centroids"] = art.bank->mu;
  num::save_weights(path, arrays);
}

Stage1Artifacts load_stage1(const std::string& path) {
  auto arrays = num::load_weights(path);
  Stage1Artifacts art;
  for (const char* name : {"extractor.w1", "extractor.b1", "extractor.w2", "extractor.b2",
                           "classifier.weight", "classifier.bias"})
    require(arrays.count(name) == 1, "stage-1 weights missing record '" + std::string(name) + "'");
  art.extractor.w1 = arrays.at("extractor.w1");
  art.extractor.b1 = arrays.at("extractor.b1");
  art.extractor.w2 = arrays.at("extractor.w2");
  art.extractor.b2 = arrays.at("extractor.b2");
  art.extractor.feat_dim = art.extractor.w2.cols();
  art.classifier.weight = arrays.at("classifier.weight");
  art.classifier.bias = arrays.at("classifier.bias");
  if (arrays.count("centroids") == 1) art.bank = cluster::CentroidBank{arrays.at("centroids")};
  return art;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw Error("output directory '" + out_dir + "' is not empty (use --force to overwrite)");
  ensure_out_dir(out_dir);

  data::SyntheticSpec spec = spec_from_config(cfg);
  const DatasetManifest all = data::write_dataset(spec, out_dir + "/data");

  auto slice = [&](int begin, int count, const std::string& name) {
    DatasetManifest m;
    m.dir = out_dir;
    for (int i = begin; i < begin + count; ++i) {
      m.entries.push_back({"data/" + all.entries[i].image, "data/" + all.entries[i].mask});
    }
    data::save_manifest(out_dir + "/" + name, m);
    return m;
  };
  slice(0, cfg.split_train, "train.txt");
  slice(cfg.split_train, cfg.split_val, "val.txt");
  slice(cfg.split_train + cfg.split_val, cfg.split_test, "test.txt");
  log_info("gen-data: wrote " + std::to_string(cfg.n) + " samples and split manifests to " + out_dir);
}

namespace {

corrupt::CorruptionRecord make_record(const RunConfig& cfg, int h, int w, uint64_t seed) {
  if (cfg.corrupt_mode == "landmarks") {
    const std::vector<data::Rect> rects = corruption_rects(cfg, h, w);
    if (cfg.corrupt_kind == "shuffle") return corrupt::make_shuffle_rects(rects, cfg.num_patch, seed);
    if (cfg.corrupt_kind == "blackout") return corrupt::make_blackout_rects(rects, cfg.num_patch, seed);
    if (cfg.corrupt_kind == "blur")
      return corrupt::make_blur_rects(rects, cfg.num_patch, cfg.kernel_size, cfg.sigma, seed);
  } else {
    if (cfg.corrupt_kind == "shuffle")
      return corrupt::make_shuffle(h, w, cfg.corrupt_ps, cfg.num_patch, seed);
    if (cfg.corrupt_kind == "blackout")
      return corrupt::make_blackout(h, w, cfg.corrupt_ps, cfg.num_patch, seed);
    if (cfg.corrupt_kind == "blur")
      return corrupt::make_blur(h, w, cfg.corrupt_ps, cfg.num_patch, cfg.kernel_size, cfg.sigma, seed);
  }
  throw Error("cmd corrupt handles shuffle|blackout|blur (puzzles are generated by the puzzle command)");
}

}  // namespace

void cmd_corrupt(const RunConfig& cfg, const std::string& manifest_path, const std::string& out_dir) {
  require_artifact(manifest_path, "manifest", "gen-data");
  const DatasetManifest manifest = data::load_manifest(manifest_path);
  require(manifest.size() > 0, "cmd corrupt: empty manifest");
  ensure_out_dir(out_dir);

  const int n = static_cast<int>(manifest.size());
  const int half = (n + 1) / 2;  // ceil
  Rng chooser(mix_seed(cfg.seed, kCorruptSalt));
  std::vector<int> picked = chooser.sample(n, half);
  std::vector<bool> corrupted(n, false);
  for (int i : picked) corrupted[i] = true;

  DatasetManifest out_manifest;
  out_manifest.dir = out_dir;
  std::ofstream records(out_dir + "/records.jsonl");
  require(records.good(), "cannot open " + out_dir + "/records.jsonl");

  for (int i = 0; i < n; ++i) {
    ImageGrid img = data::load_image(manifest.image_path(i));
    std::optional<LabelGrid> mask;
    if (manifest.has_mask(i)) mask = data::load_mask(manifest.mask_path(i));
    const std::string img_name = filename_of(manifest.entries[i].image);
    const std::string mask_name = mask ? filename_of(manifest.entries[i].mask) : "";

    if (corrupted[i]) {
      const corrupt::CorruptionRecord rec =
          make_record(cfg, img.h, img.w, derive_seed(mix_seed(cfg.seed, kCorruptSalt), i));
      corrupt::apply_corruption(img, rec);
      if (mask) corrupt::apply_corruption(*mask, rec);
      nlohmann::json j = nlohmann::json::parse(corrupt::record_to_json(rec));
      j["image"] = img_name;
      records << j.dump() << "\n";
    }
    data::save_image(img, out_dir + "/" + img_name);
    if (mask) data::save_mask(*mask, out_dir + "/" + mask_name);
    out_manifest.entries.push_back({img_name, mask_name});
  }
  require(records.good(), "write failed for records.jsonl");
  data::save_manifest(out_dir + "/manifest.txt", out_manifest);
  log_info("corrupt: " + std::to_string(half) + "/" + std::to_string(n) + " images corrupted (" +
           cfg.corrupt_kind + ", " + cfg.corrupt_mode + ") -> " + out_dir);
}

void cmd_train_cluster(const RunConfig& cfg, const std::string& manifest_path,
                       const std::string& out_dir, const std::string& weights_in,
                       const std::string& plan_in, const std::string& masks_in) {
  require_artifact(manifest_path, "manifest", "gen-data");
  const DatasetManifest manifest = data::load_manifest(manifest_path);
  require(manifest.size() > 0, "cmd train-cluster: empty manifest");
  ensure_out_dir(out_dir);
  const int classes = cfg.resolved_classes();

  Stage1Artifacts art;
  if (!weights_in.empty()) {
    require_artifact(weights_in, "stage-1 weights", "train-cluster");
    art = load_stage1(weights_in);
  } else {
    Rng init_rng(mix_seed(cfg.seed, kClusterSalt));
    art.extractor = cluster::Extractor::random_init(cfg.feat_dim, init_rng);
    art.classifier = cluster::LinearClassifier::random_init(cfg.feat_dim, classes, init_rng);
  }

  const bool run_prior = cfg.cluster_stage == "prior" || cfg.cluster_stage == "prior+picie";
  const bool run_picie = cfg.cluster_stage == "picie" || cfg.cluster_stage == "prior+picie";
  const bool run_patch = cfg.cluster_stage == "patch";

  if (run_prior) {
    const int m = std::min<int>(cfg.prior_n, static_cast<int>(manifest.size()));
    std::vector<ImageGrid> images;
    std::vector<LabelGrid> masks;
    for (int i = 0; i < m; ++i) {
      require(manifest.has_mask(i), "prior fine-tuning needs labeled samples");
      images.push_back(data::load_image(manifest.image_path(i)));
      masks.push_back(data::load_mask(manifest.mask_path(i)));
    }
    cluster::SupervisedOptions opts{cfg.prior_epochs, cfg.prior_batch, cfg.prior_lr,
                                    mix_seed(cfg.seed, kClusterSalt + 10)};
    const std::vector<double> losses = cluster::finetune_prior(art.extractor, art.classifier, images,
                                                               masks, opts);
    std::string csv = "epoch,loss\n";
    for (size_t e = 0; e < losses.size(); ++e) csv += std::to_string(e) + "," + fmt_g(losses[e]) + "\n";
    write_csv(out_dir + "/prior_log.csv", csv);
  }

  if (run_picie) {
    std::vector<ImageGrid> images;
    images.reserve(manifest.size());
    for (size_t i = 0; i < manifest.size(); ++i) images.push_back(data::load_image(manifest.image_path(i)));
    cluster::PicieConfig pc;
    pc.k = cfg.k;
    pc.km_init = cfg.km_init;
    pc.km_num = cfg.km_num;
    pc.km_iter = cfg.km_iter;
    pc.epochs = cfg.picie_epochs;
    pc.batch_size = cfg.picie_batch;
    pc.lr = cfg.picie_lr;
    pc.photo = {cfg.photo_gain, cfg.photo_bias};
    pc.seed = mix_seed(cfg.seed, kClusterSalt + 20);
    const cluster::PicieResult res = cluster::train_picie(art.extractor, images, pc);
    art.bank = res.bank;
    std::string csv = "epoch,L_within,L_cross,L_total\n";
    for (size_t e = 0; e < res.epochs.size(); ++e)
      csv += std::to_string(e) + "," + fmt_g(res.epochs[e].within) + "," + fmt_g(res.epochs[e].cross) +
             "," + fmt_g(res.epochs[e].total) + "\n";
    write_csv(out_dir + "/picie_log.csv", csv);

    cluster::ClusterMergeMap merge;
    if (!cfg.merge_map.empty()) {
      merge = cluster::load_merge_map(cfg.merge_map, cfg.k, classes);
    } else {
      merge = cluster::auto_merge_map(art.extractor, *art.bank, art.classifier, images);
    }
    cluster::save_merge_map(out_dir + "/merge.txt", merge);
  }

  if (run_patch) {
    require_artifact(weights_in, "stage-1 weights", "train-cluster (prior)");
    require_artifact(plan_in, "traversal plan", "train-syntax");
    const syntax::TraversalPlan plan = syntax::load_plan(plan_in);
    // Supervision comes from stage-1 masks: either a segmented manifest or
    // re-segmentation of the inputs.
    std::vector<ImageGrid> patch_images;
    std::vector<LabelGrid> patch_masks;
    DatasetManifest mask_manifest;
    if (!masks_in.empty()) {
      require_artifact(masks_in, "stage-1 mask manifest", "segment");
      mask_manifest = data::load_manifest(masks_in);
    }
    for (size_t i = 0; i < manifest.size(); ++i) {
      const ImageGrid img = data::load_image(manifest.image_path(i));
      LabelGrid mask = masks_in.empty()
                           ? segment_image(cfg, art, nullptr, img)
                           : data::load_mask(mask_manifest.mask_path(i));
      for (const data::Rect& r : plan.rects) {
        patch_images.push_back(data::resize_image(data::crop(img, r), cfg.image_h, cfg.image_w));
        patch_masks.push_back(data::resize_mask(data::crop(mask, r), cfg.image_h, cfg.image_w));
      }
    }
    cluster::SupervisedOptions opts{cfg.pd_epochs, cfg.prior_batch, cfg.pd_lr,
                                    mix_seed(cfg.seed, kClusterSalt + 30)};
    const std::vector<double> losses =
        cluster::finetune_patch_detector(art.extractor, art.classifier, patch_images, patch_masks, opts);
    std::string csv = "epoch,loss\n";
    for (size_t e = 0; e < losses.size(); ++e) csv += std::to_string(e) + "," + fmt_g(losses[e]) + "\n";
    write_csv(out_dir + "/pd_log.csv", csv);
  }

  save_stage1(out_dir + "/weights.igwt", art);
  log_info("train-cluster: stage '" + cfg.cluster_stage + "' done -> " + out_dir + "/weights.igwt");
}

void cmd_segment(const RunConfig& cfg, const std::string& weights_path,
                 const std::string& manifest_path, const std::string& out_dir) {
  require_artifact(weights_path, "stage-1 weights", "train-cluster");
  require_artifact(manifest_path, "manifest", "gen-data");
  const Stage1Artifacts art = load_stage1(weights_path);
  const DatasetManifest manifest = data::load_manifest(manifest_path);
  ensure_out_dir(out_dir);

  std::optional<cluster::ClusterMergeMap> merge;
  if (cfg.seg_source == "centroids") {
    require(art.bank.has_value(), "seg_source=centroids but weights carry no centroid bank");
    const std::string merge_path =
        cfg.merge_map.empty() ? (fs::path(weights_path).parent_path() / "merge.txt").string()
                              : cfg.merge_map;
    require_artifact(merge_path, "cluster merge map", "train-cluster (picie)");
    merge = cluster::load_merge_map(merge_path, art.bank->k(), cfg.resolved_classes());
  }

  const int n = static_cast<int>(manifest.size());
  std::vector<std::string> mask_names(n);
  parallel_for(n, cfg.jobs, [&](int i) {
    const ImageGrid img = data::load_image(manifest.image_path(i));
    const LabelGrid pred = segment_image(cfg, art, merge ? &*merge : nullptr, img);
    char name[32];
    std::snprintf(name, sizeof name, "pred_%05d.pgm", i);
    data::save_mask(pred, out_dir + "/" + name);
    mask_names[i] = name;
  });

  DatasetManifest out_manifest;
  out_manifest.dir = out_dir;
  for (int i = 0; i < n; ++i) {
    const std::string image_rel =
        fs::relative(fs::absolute(manifest.image_path(i)), fs::absolute(out_dir)).string();
    out_manifest.entries.push_back({image_rel, mask_names[i]});
  }
  data::save_manifest(out_dir + "/manifest.txt", out_manifest);
  log_info("segment: " + std::to_string(n) + " masks -> " + out_dir);
}

void cmd_train_syntax(const RunConfig& cfg, const std::string& masks_manifest,
                      const std::string& out_dir) {
  require_artifact(masks_manifest, "mask manifest", "segment");
  const DatasetManifest manifest = data::load_manifest(masks_manifest);
  const std::vector<LabelGrid> masks = load_all_masks(manifest);
  require(!masks.empty(), "cmd train-syntax: empty dataset");
  ensure_out_dir(out_dir);

  const syntax::TraversalPlan plan = plan_from_config(cfg, masks[0].h, masks[0].w);
  Rng init_rng(mix_seed(cfg.seed, kSyntaxSalt));
  syntax::SyntaxModel model =
      syntax::SyntaxModel::random_init(cfg.resolved_classes(), cfg.mask_res, cfg.hidden, init_rng);

  syntax::SyntaxTrainConfig tc;
  tc.epochs = cfg.syn_epochs;
  tc.batch_size = cfg.syn_batch;
  tc.lr = cfg.syn_lr;
  tc.schedule = syntax::parse_schedule(cfg.syn_schedule);
  tc.circular_shift = cfg.circular_shift;
  tc.seed = mix_seed(cfg.seed, kSyntaxSalt + 1);
  const syntax::SyntaxTrainResult res = syntax::train_syntax(model, masks, plan, tc);

  syntax::save_model(out_dir + "/model.igwt", model);
  syntax::save_plan(out_dir + "/plan.json", plan);
  std::string csv = "epoch,loss\n";
  for (size_t e = 0; e < res.epoch_loss.size(); ++e)
    csv += std::to_string(e) + "," + fmt_g(res.epoch_loss[e]) + "\n";
  write_csv(out_dir + "/syntax_log.csv", csv);
  log_info("train-syntax: " + std::to_string(masks.size()) + " sequences, G=" +
           std::to_string(plan.steps()) + " -> " + out_dir);
}

namespace {

struct ScoringContext {
  validate::Method method;
  std::optional<syntax::SyntaxModel> model;
  std::optional<validate::AveragedSemantics> avg;
  syntax::TraversalPlan plan;
  int mask_res = 0, classes = 0;
};

ScoringContext make_scoring_context(const RunConfig& cfg, const std::string& model_path,
                                    const std::string& train_masks, const std::string& plan_path) {
  ScoringContext ctx;
  ctx.method = validate::parse_method(cfg.method);
  require_artifact(plan_path, "traversal plan", "train-syntax");
  ctx.plan = syntax::load_plan(plan_path);
  ctx.classes = cfg.resolved_classes();
  if (ctx.method != validate::Method::kMiou) {
    require_artifact(model_path, "syntax model", "train-syntax");
    ctx.model = syntax::load_model(model_path);
    ctx.mask_res = ctx.model->mask_res;
    require(ctx.model->classes == ctx.classes, "syntax model class count mismatch");
  } else {
    ctx.mask_res = cfg.mask_res;
  }
  if (ctx.method != validate::Method::kBaseline) {
    require_artifact(train_masks, "trainset mask manifest", "segment");
    const DatasetManifest tm = data::load_manifest(train_masks);
    const std::vector<LabelGrid> masks = load_all_masks(tm);
    ctx.avg = validate::averaged_semantics(masks, ctx.plan, ctx.mask_res, ctx.classes);
  }
  return ctx;
}

std::vector<ScoredImage> score_manifest(const RunConfig& cfg, const ScoringContext& ctx,
                                        const std::string& masks_manifest,
                                        const std::string& records_path) {
  const DatasetManifest manifest = data::load_manifest(masks_manifest);
  require(manifest.size() > 0, "scoring: empty manifest");
  const std::set<std::string> corrupted = corrupted_ids(records_path);

  const int n = static_cast<int>(manifest.size());
  std::vector<ScoredImage> scored(n);
  parallel_for(n, cfg.jobs, [&](int i) {
    const LabelGrid mask = data::load_mask(manifest.mask_path(i));
    syntax::SequenceData seq = syntax::extract_patches(mask, ctx.plan, ctx.mask_res, ctx.classes);
    ScoredImage& s = scored[i];
    s.id = filename_of(manifest.entries[i].image);
    s.label = corrupted.count(s.id) > 0;
    switch (ctx.method) {
      case validate::Method::kBaseline:
        syntax::encode_sequence(*ctx.model, seq);
        s.trace = validate::residual_baseline(*ctx.model, seq);
        s.score = s.trace.e_pred;
        break;
      case validate::Method::kAvgSemantics:
        syntax::encode_sequence(*ctx.model, seq);
        s.trace = validate::residual_avg(*ctx.model, seq, *ctx.avg);
        s.score = s.trace.e_pred;
        break;
      case validate::Method::kMiou:
        s.score = validate::miou_validation(seq, *ctx.avg);
        break;
    }
  });
  return scored;
}

nlohmann::json trace_json(const validate::ResidualTrace& tr) {
  nlohmann::json j;
  j["forward"] = tr.forward;
  j["backward"] = tr.backward;
  j["combined"] = tr.combined;
  return j;
}

}  // namespace

void cmd_calibrate(const RunConfig& cfg, const std::string& masks_manifest,
                   const std::string& records_path, const std::string& model_path,
                   const std::string& train_masks, const std::string& plan_path,
                   const std::string& out_dir) {
  require_artifact(masks_manifest, "validation mask manifest", "segment");
  require_artifact(records_path, "corruption records", "corrupt");
  const ScoringContext ctx = make_scoring_context(cfg, model_path, train_masks, plan_path);
  const std::vector<ScoredImage> scored = score_manifest(cfg, ctx, masks_manifest, records_path);
  ensure_out_dir(out_dir);

  std::vector<double> correct, corrupt;
  for (const ScoredImage& s : scored) (s.label ? corrupt : correct).push_back(s.score);
  const validate::Direction dir = ctx.method == validate::Method::kMiou
                                      ? validate::Direction::kLowerIsCorrupt
                                      : validate::Direction::kHigherIsCorrupt;
  const validate::ThresholdModel model = validate::calibrate_threshold(correct, corrupt, dir);
  validate::save_threshold(out_dir + "/threshold.json", model);
  write_csv(out_dir + "/scores.csv", scores_csv(scored));
  log_info("calibrate: tau=" + fmt_g(model.tau) + " balanced_accuracy=" +
           fmt_g(model.balanced_accuracy) + " -> " + out_dir);
}

void cmd_evaluate(const RunConfig& cfg, const std::string& masks_manifest,
                  const std::string& records_path, const std::string& model_path,
                  const std::string& train_masks, const std::string& plan_path,
                  const std::string& threshold_path, const std::string& out_dir) {
  require_artifact(masks_manifest, "test mask manifest", "segment");
  require_artifact(records_path, "corruption records", "corrupt");
  require_artifact(threshold_path, "threshold model", "calibrate");
  const ScoringContext ctx = make_scoring_context(cfg, model_path, train_masks, plan_path);
  const validate::ThresholdModel threshold = validate::load_threshold(threshold_path);
  const std::vector<ScoredImage> scored = score_manifest(cfg, ctx, masks_manifest, records_path);
  ensure_out_dir(out_dir);

  std::vector<bool> verdicts, labels;
  for (const ScoredImage& s : scored) {
    verdicts.push_back(validate::classify_corrupt(s.score, threshold));
    labels.push_back(s.label);
  }
  const validate::DetectionReport report = validate::detection_metrics(verdicts, labels);

  std::string csv = report_csv_header();
  csv += cfg.method + "," + cfg.corrupt_kind + "," + std::to_string(cfg.num_patch) + "," +
         std::to_string(cfg.corrupt_ps) + "," + fmt_g(report.accuracy) + "," + fmt_g(report.recall) +
         ",\n";
  write_csv(out_dir + "/report.csv", csv);
  write_csv(out_dir + "/scores.csv", scores_csv(scored));

  nlohmann::json j;
  j["scenario"] = {{"method", cfg.method},
                   {"corruption", cfg.corrupt_kind},
                   {"mode", cfg.corrupt_mode},
                   {"num_patch", cfg.num_patch},
                   {"ps", cfg.corrupt_ps}};
  j["threshold"] = threshold.tau;
  j["metrics"] = {{"tp", report.tp}, {"tn", report.tn}, {"fp", report.fp},
                  {"fn", report.fn}, {"accuracy", report.accuracy}, {"recall", report.recall}};
  nlohmann::json images = nlohmann::json::array();
  for (size_t i = 0; i < scored.size(); ++i) {
    nlohmann::json e;
    e["id"] = scored[i].id;
    e["score"] = scored[i].score;
    e["label"] = scored[i].label;
    e["verdict"] = static_cast<bool>(verdicts[i]);
    if (ctx.method != validate::Method::kMiou) e["trace"] = trace_json(scored[i].trace);
    images.push_back(std::move(e));
  }
  j["images"] = std::move(images);
  std::ofstream os(out_dir + "/report.json");
  require(os.good(), "cannot open " + out_dir + "/report.json");
  os << j.dump(2) << "\n";

  log_info("evaluate: accuracy=" + fmt_g(report.accuracy) + " recall=" + fmt_g(report.recall) +
           " -> " + out_dir);
}

void cmd_puzzle(const RunConfig& cfg, const std::string& images_manifest,
                const std::string& weights_path, const std::string& model_path,
                const std::string& train_masks, const std::string& plan_path,
                const std::string& out_dir) {
  require_artifact(images_manifest, "test image manifest", "gen-data");
  require_artifact(weights_path, "stage-1 weights", "train-cluster");
  require_artifact(model_path, "syntax model", "train-syntax");
  require_artifact(train_masks, "trainset mask manifest", "segment");
  require_artifact(plan_path, "traversal plan", "train-syntax");

  const DatasetManifest manifest = data::load_manifest(images_manifest);
  require(manifest.size() > 0, "cmd puzzle: empty manifest");
  const Stage1Artifacts art = load_stage1(weights_path);
  const syntax::SyntaxModel model = syntax::load_model(model_path);
  const syntax::TraversalPlan plan = syntax::load_plan(plan_path);
  const int classes = cfg.resolved_classes();
  require(model.classes == classes, "syntax model class count mismatch");

  const DatasetManifest tm = data::load_manifest(train_masks);
  const validate::AveragedSemantics avg =
      validate::averaged_semantics(load_all_masks(tm), plan, model.mask_res, classes);

  const int count = cfg.puzzle_count > 0
                        ? std::min<int>(cfg.puzzle_count, static_cast<int>(manifest.size()))
                        : static_cast<int>(manifest.size());
  ensure_out_dir(out_dir);

  std::vector<int> pick_base(count), pick_avg(count), pick_miou(count);
  parallel_for(count, cfg.jobs, [&](int i) {
    const ImageGrid img = data::load_image(manifest.image_path(i));
    const uint64_t seed = derive_seed(mix_seed(cfg.seed, kPuzzleSalt), i);
    corrupt::CorruptionRecord rec;
    if (cfg.corrupt_mode == "landmarks") {
      rec = corrupt::make_puzzles_rects(corruption_rects(cfg, img.h, img.w), cfg.num_perm, seed);
    } else {
      rec = corrupt::make_puzzles(img.h, img.w, cfg.corrupt_ps, cfg.num_perm, seed);
    }
    const std::vector<ImageGrid> copies = corrupt::apply_puzzles(img, rec);
    std::vector<double> e_base, e_avg, s_miou;
    for (const ImageGrid& copy : copies) {
      const LabelGrid mask = segment_image(cfg, art, nullptr, copy);
      syntax::SequenceData seq = syntax::extract_sequence(model, mask, plan);
      e_base.push_back(validate::residual_baseline(model, seq).e_pred);
      e_avg.push_back(validate::residual_avg(model, seq, avg).e_pred);
      s_miou.push_back(validate::miou_validation(seq, avg));
    }
    pick_base[i] = validate::solve_puzzle_residual(e_base);
    pick_avg[i] = validate::solve_puzzle_residual(e_avg);
    pick_miou[i] = validate::solve_puzzle_miou(s_miou);
  });

  auto success = [&](const std::vector<int>& picks) {
    int64_t hits = 0;
    for (int p : picks) hits += p == 0 ? 1 : 0;
    return static_cast<double>(hits) / picks.size();
  };
  const double rate_base = success(pick_base), rate_avg = success(pick_avg),
               rate_miou = success(pick_miou);

  std::string csv = report_csv_header();
  auto row = [&](const std::string& method, double rate) {
    csv += method + ",puzzle," + std::to_string(cfg.num_perm) + "," + std::to_string(cfg.corrupt_ps) +
           ",,," + fmt_g(rate) + "\n";
  };
  row("baseline", rate_base);
  row("avg", rate_avg);
  row("miou", rate_miou);
  write_csv(out_dir + "/report.csv", csv);

  nlohmann::json j;
  j["num_perm"] = cfg.num_perm;
  j["count"] = count;
  j["success"] = {{"baseline", rate_base}, {"avg", rate_avg}, {"miou", rate_miou}};
  j["picks"] = {{"baseline", pick_base}, {"avg", pick_avg}, {"miou", pick_miou}};
  std::ofstream os(out_dir + "/report.json");
  require(os.good(), "cannot open " + out_dir + "/report.json");
  os << j.dump(2) << "\n";

  log_info("puzzle: baseline=" + fmt_g(rate_base) + " avg=" + fmt_g(rate_avg) + " miou=" +
           fmt_g(rate_miou) + " over " + std::to_string(count) + " puzzles -> " + out_dir);
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& out_csv) {
  require(!inputs.empty(), "cmd report: no input CSVs");
  std::string merged = report_csv_header();
  for (const std::string& input : inputs) {
    require_artifact(input, "scenario report", "evaluate or puzzle");
    std::ifstream is(input);
    require(is.good(), "cannot open " + input);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
      if (first) {
        require(line + "\n" == report_csv_header(), "cmd report: '" + input + "' is not a scenario report");
        first = false;
        continue;
      }
      if (!line.empty()) merged += line + "\n";
    }
  }
  write_csv(out_csv, merged);
  log_info("report: merged " + std::to_string(inputs.size()) + " scenario files -> " + out_csv);
}

}  // namespace grammarscope::cli
