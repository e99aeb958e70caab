#include "grammarscope/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "grammarscope/dataset.hpp"

namespace grammarscope::cli {

namespace {

struct KeySpec {
  std::string name;
  std::string type;  // int | float | bool | u64 | enum(...) | path
  std::string range;
  std::function<void(RunConfig&, const std::string&)> apply;
  std::function<std::string(const RunConfig&)> show;
};

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), "config: bad integer for " + key + ": '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), "config: bad unsigned for " + key + ": '" + v + "'");
  return out;
}

float parse_float(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const float out = std::stof(v, &pos);
    require(pos == v.size() && std::isfinite(out), "config: bad float for " + key + ": '" + v + "'");
    return out;
  } catch (const std::exception&) {
    throw Error("config: bad float for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config: bad bool for " + key + ": '" + v + "'");
}

std::vector<KeySpec> schema() {
  std::vector<KeySpec> keys;
  auto int_key = [&](const std::string& name, int RunConfig::*field, int lo, int hi) {
    keys.push_back({name, "int", "[" + std::to_string(lo) + "," + std::to_string(hi) + "]",
                    [name, field, lo, hi](RunConfig& c, const std::string& v) {
                      const int64_t x = parse_int(name, v);
                      require(x >= lo && x <= hi, "config: " + name + "=" + v + " outside [" +
                                                      std::to_string(lo) + "," + std::to_string(hi) + "]");
                      c.*field = static_cast<int>(x);
                    },
                    [field](const RunConfig& c) { return std::to_string(c.*field); }});
  };
  auto float_key = [&](const std::string& name, float RunConfig::*field, double lo, double hi) {
    std::ostringstream r;
    r << "[" << lo << "," << hi << "]";
    keys.push_back({name, "float", r.str(),
                    [name, field, lo, hi](RunConfig& c, const std::string& v) {
                      const float x = parse_float(name, v);
                      require(x >= lo && x <= hi, "config: " + name + "=" + v + " out of range");
                      c.*field = x;
                    },
                    [field](const RunConfig& c) {
                      std::ostringstream os;
                      os << c.*field;
                      return os.str();
                    }});
  };
  auto bool_key = [&](const std::string& name, bool RunConfig::*field) {
    keys.push_back({name, "bool", "true|false",
                    [name, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
                    [field](const RunConfig& c) { return c.*field ? "true" : "false"; }});
  };
  auto enum_key = [&](const std::string& name, std::string RunConfig::*field,
                      std::vector<std::string> choices, bool allow_empty = false) {
    std::string range;
    for (size_t i = 0; i < choices.size(); ++i) range += (i ? "|" : "") + choices[i];
    keys.push_back({name, "enum", range,
                    [name, field, choices, allow_empty](RunConfig& c, const std::string& v) {
                      if (allow_empty && v.empty()) {
                        c.*field = v;
                        return;
                      }
                      for (const std::string& ch : choices)
                        if (v == ch) {
                          c.*field = v;
                          return;
                        }
                      throw Error("config: " + name + "=" + v + " not one of the allowed values");
                    },
                    [field](const RunConfig& c) { return c.*field; }});
  };

  keys.push_back({"seed", "u64", "required",
                  [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }});

  enum_key("layout", &RunConfig::layout, {"face", "room"});
  int_key("classes", &RunConfig::classes, 0, 256);
  int_key("image_h", &RunConfig::image_h, 16, 1024);
  int_key("image_w", &RunConfig::image_w, 16, 1024);
  int_key("n", &RunConfig::n, 1, 1000000);
  int_key("split_train", &RunConfig::split_train, 0, 1000000);
  int_key("split_val", &RunConfig::split_val, 0, 1000000);
  int_key("split_test", &RunConfig::split_test, 0, 1000000);
  int_key("jitter_pos", &RunConfig::jitter_pos, 0, 64);
  float_key("color_jitter", &RunConfig::color_jitter, 0.0, 0.5);
  float_key("photo_gain", &RunConfig::photo_gain, 0.0, 0.9);
  float_key("photo_bias", &RunConfig::photo_bias, 0.0, 0.5);

  int_key("feat_dim", &RunConfig::feat_dim, 4, 256);
  int_key("k", &RunConfig::k, 1, 256);
  int_key("km_init", &RunConfig::km_init, 1, 10000);
  int_key("km_num", &RunConfig::km_num, 1, 10000);
  int_key("km_iter", &RunConfig::km_iter, 1, 10000);
  enum_key("cluster_stage", &RunConfig::cluster_stage, {"prior", "picie", "prior+picie", "patch"});
  int_key("prior_n", &RunConfig::prior_n, 1, 1000000);
  int_key("prior_epochs", &RunConfig::prior_epochs, 1, 10000);
  float_key("prior_lr", &RunConfig::prior_lr, 1e-8, 1.0);
  int_key("prior_batch", &RunConfig::prior_batch, 1, 4096);
  int_key("picie_epochs", &RunConfig::picie_epochs, 0, 10000);
  float_key("picie_lr", &RunConfig::picie_lr, 1e-8, 1.0);
  int_key("picie_batch", &RunConfig::picie_batch, 1, 4096);
  enum_key("seg_source", &RunConfig::seg_source, {"classifier", "centroids"});
  keys.push_back({"merge_map", "path", "optional file path",
                  [](RunConfig& c, const std::string& v) { c.merge_map = v; },
                  [](const RunConfig& c) { return c.merge_map; }});
  int_key("pd_epochs", &RunConfig::pd_epochs, 1, 10000);
  float_key("pd_lr", &RunConfig::pd_lr, 1e-8, 1.0);

  enum_key("traversal", &RunConfig::traversal, {"five-crop", "zig-zag"}, /*allow_empty=*/true);
  int_key("ps", &RunConfig::ps, 2, 1024);
  int_key("mask_res", &RunConfig::mask_res, 2, 256);
  int_key("hidden", &RunConfig::hidden, 0, 4096);
  int_key("syn_epochs", &RunConfig::syn_epochs, 0, 10000);
  float_key("syn_lr", &RunConfig::syn_lr, 1e-8, 1.0);
  int_key("syn_batch", &RunConfig::syn_batch, 1, 4096);
  enum_key("syn_schedule", &RunConfig::syn_schedule, {"constant", "step", "multistep"});
  bool_key("circular_shift", &RunConfig::circular_shift);

  enum_key("corrupt_kind", &RunConfig::corrupt_kind, {"shuffle", "blackout", "blur", "puzzle"});
  enum_key("corrupt_mode", &RunConfig::corrupt_mode, {"tiling", "landmarks"});
  int_key("num_patch", &RunConfig::num_patch, 1, 100000);
  int_key("corrupt_ps", &RunConfig::corrupt_ps, 1, 1024);
  int_key("kernel_size", &RunConfig::kernel_size, 1, 99);
  float_key("sigma", &RunConfig::sigma, 1e-3, 100.0);
  int_key("num_perm", &RunConfig::num_perm, 0, 100000);

  enum_key("method", &RunConfig::method, {"baseline", "avg", "miou"});
  int_key("puzzle_count", &RunConfig::puzzle_count, 0, 1000000);
  int_key("jobs", &RunConfig::jobs, 1, 256);
  return keys;
}

void validate_config(const RunConfig& c, bool seed_seen) {
  require(seed_seen, "config: 'seed' is mandatory (wall-clock seeding is not supported)");
  require(c.image_h % 4 == 0 && c.image_w % 4 == 0, "config: image dims must be multiples of 4");
  require(c.split_train + c.split_val + c.split_test <= c.n,
          "config: splits sum to " + std::to_string(c.split_train + c.split_val + c.split_test) +
              " > n=" + std::to_string(c.n));
  const int derived = data::layout_class_count(data::parse_layout(c.layout));
  require(c.classes == 0 || c.classes == derived,
          "config: classes=" + std::to_string(c.classes) + " conflicts with layout '" + c.layout +
              "' (expected " + std::to_string(derived) + ")");
  require(c.kernel_size % 2 == 1, "config: kernel_size must be odd");
}

}  // namespace

int RunConfig::resolved_classes() const {
  return classes > 0 ? classes : data::layout_class_count(data::parse_layout(layout));
}

std::string RunConfig::resolved_traversal() const {
  if (!traversal.empty()) return traversal;
  return layout == "face" ? "five-crop" : "zig-zag";
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  const std::vector<KeySpec> keys = schema();
  RunConfig cfg;
  bool seed_seen = false;

  auto apply = [&](const std::string& key, const std::string& value, const std::string& where) {
    for (const KeySpec& spec : keys) {
      if (spec.name == key) {
        spec.apply(cfg, value);
        if (key == "seed") seed_seen = true;
        return;
      }
    }
    throw Error("config: unknown key '" + key + "' " + where);
  };

  auto apply_line = [&](std::string line, const std::string& where) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const size_t e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) return;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, "config: expected key=value, got '" + line + "' " + where);
    apply(strip(line.substr(0, eq)), strip(line.substr(eq + 1)), where);
  };

  if (!path.empty()) {
    std::ifstream is(path);
    require(is.good(), "config: cannot open " + path);
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
      ln += 1;
      apply_line(line, "(" + path + ":" + std::to_string(ln) + ")");
    }
  }
  for (const std::string& ov : overrides) apply_line(ov, "(--set)");

  validate_config(cfg, seed_seen);
  return cfg;
}

std::string config_help() {
  RunConfig defaults;
  defaults.seed = 0;
  std::string out = "Config keys (key=value; '#' comments allowed):\n";
  for (const KeySpec& spec : schema()) {
    out += "  " + spec.name + " (" + spec.type + ", default=" + spec.show(defaults) + ") " +
           spec.range + "\n";
  }
  return out;
}

}  // namespace grammarscope::cli
