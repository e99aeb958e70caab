#include "grammarscope/syntax.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "grammarscope/adam.hpp"
#include "grammarscope/log.hpp"
#include "grammarscope/weights.hpp"
#include "json.hpp"

namespace grammarscope::syntax {

TraversalKind parse_traversal(const std::string& s) {
  if (s == "five-crop") return TraversalKind::kFiveCrop;
  if (s == "zig-zag") return TraversalKind::kZigZag;
  throw Error("unknown traversal kind '" + s + "' (expected five-crop|zig-zag)");
}

const char* traversal_name(TraversalKind kind) {
  return kind == TraversalKind::kFiveCrop ? "five-crop" : "zig-zag";
}

TraversalPlan build_traversal(TraversalKind kind, int h, int w, int ps,
                              const std::vector<std::pair<int, int>>& anchors) {
  require(ps > 0, "build_traversal: ps must be positive");
  TraversalPlan plan;
  plan.kind = kind;
  plan.ps = ps;
  if (kind == TraversalKind::kZigZag) {
    require(h % ps == 0 && w % ps == 0, "build_traversal: zig-zag needs dims divisible by ps");
    const int ny = h / ps, nx = w / ps;
    for (int ry = 0; ry < ny; ++ry) {
      for (int i = 0; i < nx; ++i) {
        const int rx = (ry % 2 == 0) ? i : nx - 1 - i;  // serpentine
        plan.rects.push_back({rx * ps, ry * ps, ps, ps});
      }
    }
  } else {
    require(anchors.size() == 5, "build_traversal: five-crop needs 5 anchor centers");
    for (auto [cx, cy] : anchors) {
      const Rect r{cx - ps / 2, cy - ps / 2, ps, ps};
      require(data::rect_in_bounds(r, h, w),
              "build_traversal: anchor rect out of bounds at (" + std::to_string(cx) + "," +
                  std::to_string(cy) + ")");
      plan.rects.push_back(r);
    }
  }
  require(plan.steps() >= 2, "build_traversal: traversal needs at least 2 patches");
  return plan;
}

void save_plan(const std::string& path, const TraversalPlan& plan) {
  nlohmann::json j;
  j["kind"] = traversal_name(plan.kind);
  j["ps"] = plan.ps;
  nlohmann::json rects = nlohmann::json::array();
  for (const Rect& r : plan.rects) rects.push_back({r.x, r.y, r.w, r.h});
  j["rects"] = rects;
  std::ofstream os(path);
  require(os.good(), "save_plan: cannot open " + path);
  os << j.dump(2) << "\n";
}

TraversalPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "load_plan: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  TraversalPlan plan;
  plan.kind = parse_traversal(j.at("kind").get<std::string>());
  plan.ps = j.at("ps").get<int>();
  for (const auto& r : j.at("rects")) plan.rects.push_back({r[0], r[1], r[2], r[3]});
  require(plan.steps() >= 2, "load_plan: traversal needs at least 2 patches");
  return plan;
}

std::vector<float> semantics_vector(const LabelGrid& patch, int classes) {
  require(classes > 0, "semantics_vector: classes must be positive");
  std::vector<int64_t> counts(classes, 0);
  for (uint8_t id : patch.ids) {
    require(id < classes, "semantics_vector: class id " + std::to_string(id) +
                              " out of range for C=" + std::to_string(classes));
    counts[id] += 1;
  }
  std::vector<float> out(classes);
  const double total = static_cast<double>(patch.ids.size());
  for (int c = 0; c < classes; ++c) out[c] = static_cast<float>(counts[c] / total);
  return out;
}

SyntaxModel SyntaxModel::random_init(int classes, int mask_res, int hidden, Rng& rng) {
  require(classes >= 2, "SyntaxModel: classes must be >= 2");
  require(mask_res >= 2, "SyntaxModel: mask_res must be >= 2");
  SyntaxModel m;
  m.classes = classes;
  m.mask_res = mask_res;
  m.hidden = hidden > 0 ? hidden : kEncoderDim + classes;
  const int input = m.input_dim();
  auto init = [&](std::vector<int> dims, double scale) {
    DenseArray arr(dims);
    for (auto& v : arr.data) v = static_cast<float>(rng.uniform(-scale, scale));
    return arr;
  };
  const double enc_scale = 1.0 / std::sqrt(static_cast<double>(mask_res) * mask_res);
  m.enc_w = init({mask_res * mask_res, kEncoderDim}, enc_scale);
  m.enc_b = DenseArray({1, kEncoderDim});
  const double s = 1.0 / std::sqrt(static_cast<double>(m.hidden));
  for (Direction* dir : {&m.fwd, &m.bwd}) {
    dir->w_i = init({input + m.hidden, m.hidden}, s);
    dir->w_f = init({input + m.hidden, m.hidden}, s);
    dir->w_g = init({input + m.hidden, m.hidden}, s);
    dir->w_o = init({input + m.hidden, m.hidden}, s);
    dir->b_i = DenseArray({1, m.hidden});
    dir->b_f = DenseArray({1, m.hidden});
    dir->b_g = DenseArray({1, m.hidden});
    dir->b_o = DenseArray({1, m.hidden});
    dir->proj_w = init({m.hidden, classes}, s);
    dir->proj_b = DenseArray({1, classes});
  }
  return m;
}

namespace {

std::map<std::string, DenseArray*> param_refs(SyntaxModel& m) {
  std::map<std::string, DenseArray*> refs;
  refs["encoder.weight"] = &m.enc_w;
  refs["encoder.bias"] = &m.enc_b;
  auto dir_refs = [&](const char* tag, SyntaxModel::Direction& d) {
    const std::string p = std::string("lstm.") + tag + ".";
    refs[p + "W_i"] = &d.w_i;
    refs[p + "W_f"] = &d.w_f;
    refs[p + "W_g"] = &d.w_g;
    refs[p + "W_o"] = &d.w_o;
    refs[p + "b_i"] = &d.b_i;
    refs[p + "b_f"] = &d.b_f;
    refs[p + "b_g"] = &d.b_g;
    refs[p + "b_o"] = &d.b_o;
    refs[std::string("proj.") + tag + ".weight"] = &d.proj_w;
    refs[std::string("proj.") + tag + ".bias"] = &d.proj_b;
  };
  dir_refs("fwd", m.fwd);
  dir_refs("bwd", m.bwd);
  return refs;
}

}  // namespace

void save_model(const std::string& path, const SyntaxModel& model) {
  std::map<std::string, DenseArray> arrays;
  auto refs = param_refs(const_cast<SyntaxModel&>(model));
  for (const auto& [name, arr] : refs) arrays[name] = *arr;
  arrays["meta"] = DenseArray({3}, {static_cast<float>(model.classes),
                                    static_cast<float>(model.mask_res),
                                    static_cast<float>(model.hidden)});
  num::save_weights(path, arrays);
}

SyntaxModel load_model(const std::string& path) {
  auto arrays = num::load_weights(path);
  require(arrays.count("meta") == 1, "load_model: missing meta record in " + path);
  const DenseArray& meta = arrays.at("meta");
  require(meta.size() == 3, "load_model: bad meta record");
  SyntaxModel m;
  m.classes = static_cast<int>(meta.data[0]);
  m.mask_res = static_cast<int>(meta.data[1]);
  m.hidden = static_cast<int>(meta.data[2]);
  auto refs = param_refs(m);
  for (auto& [name, arr] : refs) {
    require(arrays.count(name) == 1, "load_model: missing record '" + name + "' in " + path);
    *arr = arrays.at(name);
  }
  require(m.enc_w.rows() == m.mask_res * m.mask_res && m.enc_w.cols() == kEncoderDim,
          "load_model: encoder dims inconsistent with meta");
  require(m.fwd.w_i.rows() == m.input_dim() + m.hidden && m.fwd.w_i.cols() == m.hidden,
          "load_model: lstm dims inconsistent with meta");
  return m;
}

namespace {

std::vector<float> scaled_mask_row(const LabelGrid& patch, int classes) {
  std::vector<float> out(patch.ids.size());
  const float denom = static_cast<float>(classes - 1);
  for (size_t i = 0; i < patch.ids.size(); ++i) out[i] = static_cast<float>(patch.ids[i]) / denom;
  return out;
}

// row-vector x (len n) times W (n x m) + b, double accumulation
std::vector<float> affine_row(const std::vector<float>& x, const DenseArray& w, const DenseArray& b) {
  const int n = w.rows(), m = w.cols();
  require(static_cast<int>(x.size()) == n, "affine_row: input length mismatch");
  std::vector<float> out(m);
  for (int j = 0; j < m; ++j) {
    double acc = static_cast<double>(b.data[j]);
    for (int i = 0; i < n; ++i)
      acc += static_cast<double>(x[i]) * static_cast<double>(w.data[static_cast<size_t>(i) * m + j]);
    out[j] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace

std::vector<float> encode_patch(const SyntaxModel& model, const LabelGrid& patch) {
  require(patch.h == model.mask_res && patch.w == model.mask_res,
          "encode_patch: patch must be at the model mask resolution " +
              std::to_string(model.mask_res));
  require(patch.classes == model.classes, "encode_patch: class count mismatch");
  const std::vector<float> flat = scaled_mask_row(patch, model.classes);
  std::vector<float> enc = affine_row(flat, model.enc_w, model.enc_b);
  const std::vector<float> sem = semantics_vector(patch, model.classes);
  enc.insert(enc.end(), sem.begin(), sem.end());
  return enc;
}

std::vector<PredictionPair> bilstm_forward(const SyntaxModel& model,
                                           const std::vector<std::vector<float>>& inputs) {
  const int steps = static_cast<int>(inputs.size());
  require(steps >= 2, "bilstm_forward: sequence needs G >= 2");
  const int input = model.input_dim(), hidden = model.hidden;
  for (const auto& x : inputs)
    require(static_cast<int>(x.size()) == input, "bilstm_forward: input length mismatch");

  auto run_direction = [&](const SyntaxModel::Direction& dir, bool reverse) {
    std::vector<std::vector<float>> preds(steps);
    std::vector<float> h(hidden, 0.f), c(hidden, 0.f);
    for (int k = 0; k < steps; ++k) {
      const int t = reverse ? steps - 1 - k : k;
      std::vector<float> z(inputs[t]);
      z.insert(z.end(), h.begin(), h.end());
      const std::vector<float> pre_i = affine_row(z, dir.w_i, dir.b_i);
      const std::vector<float> pre_f = affine_row(z, dir.w_f, dir.b_f);
      const std::vector<float> pre_g = affine_row(z, dir.w_g, dir.b_g);
      const std::vector<float> pre_o = affine_row(z, dir.w_o, dir.b_o);
      for (int j = 0; j < hidden; ++j) {
        const double i_g = 1.0 / (1.0 + std::exp(-static_cast<double>(pre_i[j])));
        const double f_g = 1.0 / (1.0 + std::exp(-static_cast<double>(pre_f[j])));
        const double g_g = std::tanh(static_cast<double>(pre_g[j]));
        const double o_g = 1.0 / (1.0 + std::exp(-static_cast<double>(pre_o[j])));
        const double c_new = f_g * static_cast<double>(c[j]) + i_g * g_g;
        c[j] = static_cast<float>(c_new);
        h[j] = static_cast<float>(o_g * std::tanh(c_new));
      }
      preds[t] = affine_row(h, dir.proj_w, dir.proj_b);
    }
    return preds;
  };

  const auto fwd = run_direction(model.fwd, false);
  const auto bwd = run_direction(model.bwd, true);
  std::vector<PredictionPair> out(steps);
  for (int t = 0; t < steps; ++t) out[t] = {fwd[t], bwd[t]};
  return out;
}

SequenceData extract_patches(const LabelGrid& mask, const TraversalPlan& plan, int mask_res,
                             int classes) {
  require(mask_res >= 2, "extract_patches: mask_res must be >= 2");
  SequenceData seq;
  for (const Rect& r : plan.rects) {
    LabelGrid patch = data::crop(mask, r);
    if (patch.h != mask_res || patch.w != mask_res)
      patch = data::resize_mask(patch, mask_res, mask_res);
    require(patch.classes == classes,
            "extract_patches: mask C=" + std::to_string(patch.classes) +
                " does not match configured C=" + std::to_string(classes));
    seq.sems.push_back(semantics_vector(patch, classes));
    seq.patches.push_back(std::move(patch));
  }
  return seq;
}

void encode_sequence(const SyntaxModel& model, SequenceData& seq) {
  seq.inputs.clear();
  for (const LabelGrid& patch : seq.patches) seq.inputs.push_back(encode_patch(model, patch));
}

SequenceData extract_sequence(const SyntaxModel& model, const LabelGrid& mask,
                              const TraversalPlan& plan) {
  SequenceData seq = extract_patches(mask, plan, model.mask_res, model.classes);
  encode_sequence(model, seq);
  return seq;
}

double syntax_loss(const std::vector<PredictionPair>& preds,
                   const std::vector<std::vector<float>>& sems) {
  const int steps = static_cast<int>(sems.size());
  require(static_cast<int>(preds.size()) == steps, "syntax_loss: prediction/target length mismatch");
  require(steps >= 2, "syntax_loss: G >= 2 required");
  double total = 0.0;
  int terms = 0;
  for (int t = 1; t < steps; ++t) {  // forward prediction made at t-1 targets s_t
    const auto& p = preds[t - 1].forward;
    for (size_t j = 0; j < sems[t].size(); ++j) {
      const double d = static_cast<double>(p[j]) - sems[t][j];
      total += d * d;
    }
    terms += 1;
  }
  for (int t = 0; t + 1 < steps; ++t) {  // backward prediction made at t+1 targets s_t
    const auto& p = preds[t + 1].backward;
    for (size_t j = 0; j < sems[t].size(); ++j) {
      const double d = static_cast<double>(p[j]) - sems[t][j];
      total += d * d;
    }
    terms += 1;
  }
  return total / terms;
}

template <typename S>
SyntaxGraph<S> build_syntax_graph(const SyntaxModel& model, int steps, int batch) {
  require(steps >= 2, "build_syntax_graph: G >= 2 required");
  require(batch >= 1, "build_syntax_graph: batch must be >= 1");
  SyntaxGraph<S> g;
  auto& tape = g.tape;
  using Id = typename num::TapeT<S>::Id;

  auto refs = param_refs(const_cast<SyntaxModel&>(model));
  for (const auto& [name, arr] : refs) g.params[name] = tape.param(name, arr->template cast<S>());

  const int r2 = model.mask_res * model.mask_res;
  const int hidden = model.hidden;
  for (int t = 0; t < steps; ++t) {
    g.mask_inputs.push_back(tape.input("mask_t" + std::to_string(t),
                                       num::DenseArrayT<S>({batch, r2})));
    g.sem_inputs.push_back(tape.input("sem_t" + std::to_string(t),
                                      num::DenseArrayT<S>({batch, model.classes})));
    g.neg_sem_inputs.push_back(tape.input("neg_sem_t" + std::to_string(t),
                                          num::DenseArrayT<S>({batch, model.classes})));
  }
  const Id zeros = tape.input("zeros_state", num::DenseArrayT<S>({batch, hidden}));

  std::vector<Id> xs;
  for (int t = 0; t < steps; ++t) {
    const Id enc = tape.add(tape.matmul(g.mask_inputs[t], g.params["encoder.weight"]),
                            g.params["encoder.bias"]);
    xs.push_back(tape.concat(enc, g.sem_inputs[t]));
  }

  auto run_direction = [&](const char* tag, bool reverse) {
    const std::string lp = std::string("lstm.") + tag + ".";
    const std::string pp = std::string("proj.") + tag + ".";
    Id h = zeros, c = zeros;
    std::vector<Id> preds(steps, -1);
    for (int k = 0; k < steps; ++k) {
      const int t = reverse ? steps - 1 - k : k;
      const Id z = tape.concat(xs[t], h);
      const Id gate_i = tape.sigmoid(tape.add(tape.matmul(z, g.params[lp + "W_i"]), g.params[lp + "b_i"]));
      const Id gate_f = tape.sigmoid(tape.add(tape.matmul(z, g.params[lp + "W_f"]), g.params[lp + "b_f"]));
      const Id gate_g = tape.tanh(tape.add(tape.matmul(z, g.params[lp + "W_g"]), g.params[lp + "b_g"]));
      const Id gate_o = tape.sigmoid(tape.add(tape.matmul(z, g.params[lp + "W_o"]), g.params[lp + "b_o"]));
      c = tape.add(tape.multiply(gate_f, c), tape.multiply(gate_i, gate_g));
      h = tape.multiply(gate_o, tape.tanh(c));
      preds[t] = tape.add(tape.matmul(h, g.params[pp + "weight"]), g.params[pp + "bias"]);
    }
    return preds;
  };

  const std::vector<Id> p_fwd = run_direction("fwd", false);
  const std::vector<Id> p_bwd = run_direction("bwd", true);

  Id total = -1;
  auto add_term = [&](Id pred, Id neg_target) {
    const Id term = tape.sum_squares(tape.add(pred, neg_target));
    total = total < 0 ? term : tape.add(total, term);
  };
  for (int t = 1; t < steps; ++t) add_term(p_fwd[t - 1], g.neg_sem_inputs[t]);
  for (int t = 0; t + 1 < steps; ++t) add_term(p_bwd[t + 1], g.neg_sem_inputs[t]);

  const double scale = 1.0 / (2.0 * (steps - 1) * batch);
  const Id scale_id = tape.input("loss_scale", num::DenseArrayT<S>({1}, {static_cast<S>(scale)}));
  g.loss = tape.multiply(total, scale_id);
  return g;
}

template <typename S>
void bind_sequences(SyntaxGraph<S>& graph, const std::vector<const SequenceData*>& batch) {
  require(!batch.empty(), "bind_sequences: empty batch");
  const int steps = static_cast<int>(graph.mask_inputs.size());
  auto& tape = graph.tape;
  const int b = tape.value(graph.mask_inputs[0]).rows();
  require(static_cast<int>(batch.size()) == b, "bind_sequences: batch size mismatch");
  const int r2 = tape.value(graph.mask_inputs[0]).cols();
  const int classes = tape.value(graph.sem_inputs[0]).cols();

  for (int t = 0; t < steps; ++t) {
    num::DenseArrayT<S> masks({b, r2});
    num::DenseArrayT<S> sems({b, classes});
    num::DenseArrayT<S> neg({b, classes});
    for (int i = 0; i < b; ++i) {
      const SequenceData& seq = *batch[i];
      require(static_cast<int>(seq.patches.size()) == steps, "bind_sequences: sequence length mismatch");
      const LabelGrid& patch = seq.patches[t];
      require(static_cast<int>(patch.ids.size()) == r2, "bind_sequences: patch size mismatch");
      const float denom = static_cast<float>(classes - 1);
      for (int j = 0; j < r2; ++j)
        masks.data[static_cast<size_t>(i) * r2 + j] = static_cast<S>(patch.ids[j] / denom);
      for (int j = 0; j < classes; ++j) {
        sems.data[static_cast<size_t>(i) * classes + j] = static_cast<S>(seq.sems[t][j]);
        neg.data[static_cast<size_t>(i) * classes + j] = static_cast<S>(-seq.sems[t][j]);
      }
    }
    tape.set_value(graph.mask_inputs[t], masks);
    tape.set_value(graph.sem_inputs[t], sems);
    tape.set_value(graph.neg_sem_inputs[t], neg);
  }
}

LrSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "step") return LrSchedule::kStepHalfway;
  if (s == "multistep") return LrSchedule::kMultiStep;
  throw Error("unknown lr schedule '" + s + "' (expected constant|step|multistep)");
}

SyntaxTrainResult train_syntax(SyntaxModel& model, const std::vector<LabelGrid>& masks,
                               const TraversalPlan& plan, const SyntaxTrainConfig& cfg) {
  require(!masks.empty(), "train_syntax: empty dataset");
  require(cfg.batch_size >= 1, "train_syntax: batch_size must be >= 1");
  const int n = static_cast<int>(masks.size());
  const int steps = plan.steps();

  std::vector<SequenceData> sequences;
  sequences.reserve(n);
  for (const LabelGrid& m : masks) sequences.push_back(extract_sequence(model, m, plan));

  Rng rng(cfg.seed);
  num::Adam adam({cfg.lr, 0.9f, 0.999f, 1e-8f});
  auto refs = param_refs(model);
  std::map<int, SyntaxGraph<float>> graphs;  // keyed by batch size

  auto lr_at = [&](int epoch) {
    switch (cfg.schedule) {
      case LrSchedule::kConstant: return cfg.lr;
      case LrSchedule::kStepHalfway: return epoch >= cfg.epochs / 2 ? cfg.lr * 0.1f : cfg.lr;
      case LrSchedule::kMultiStep: {
        float lr = cfg.lr;
        for (int m = 5; m <= epoch; m += 5) lr *= 0.8f;
        return lr;
      }
    }
    return cfg.lr;
  };

  SyntaxTrainResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.set_lr(lr_at(epoch));
    const std::vector<int> order = rng.permutation(n);
    double epoch_loss = 0.0;
    int64_t term_batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      const int b = stop - start;
      auto it = graphs.find(b);
      if (it == graphs.end())
        it = graphs.emplace(b, build_syntax_graph<float>(model, steps, b)).first;
      SyntaxGraph<float>& graph = it->second;

      std::vector<const SequenceData*> batch;
      std::vector<SequenceData> rotated;  // five-crop circular-shift augmentation
      if (cfg.circular_shift && plan.kind == TraversalKind::kFiveCrop) {
        rotated.reserve(b);
        for (int i = start; i < stop; ++i) {
          const SequenceData& src = sequences[order[i]];
          const int shift = rng.uniform_int(steps);
          SequenceData rot;
          for (int t = 0; t < steps; ++t) {
            const int s = (t + shift) % steps;
            rot.patches.push_back(src.patches[s]);
            rot.sems.push_back(src.sems[s]);
            rot.inputs.push_back(src.inputs[s]);
          }
          rotated.push_back(std::move(rot));
        }
        for (const SequenceData& seq : rotated) batch.push_back(&seq);
      } else {
        for (int i = start; i < stop; ++i) batch.push_back(&sequences[order[i]]);
      }

      for (const auto& [name, arr] : refs) graph.tape.set_value(graph.params[name], *arr);
      bind_sequences(graph, batch);
      const auto& loss = graph.tape.forward(graph.loss);
      epoch_loss += static_cast<double>(loss.data[0]) * b;
      graph.tape.backward(graph.loss);
      for (const auto& [name, arr] : refs) adam.step(name, *arr, graph.tape.grad(graph.params[name]));
      term_batches += b;
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<double>(term_batches));
    log_info("train_syntax epoch " + std::to_string(epoch) + " loss " +
             std::to_string(res.epoch_loss.back()));
  }
  return res;
}

template struct SyntaxGraph<float>;
template struct SyntaxGraph<double>;
template SyntaxGraph<float> build_syntax_graph<float>(const SyntaxModel&, int, int);
template SyntaxGraph<double> build_syntax_graph<double>(const SyntaxModel&, int, int);
template void bind_sequences<float>(SyntaxGraph<float>&, const std::vector<const SequenceData*>&);
template void bind_sequences<double>(SyntaxGraph<double>&, const std::vector<const SequenceData*>&);

}  // namespace grammarscope::syntax
