#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "grammarscope/commands.hpp"
#include "grammarscope/corrupt.hpp"
#include "json.hpp"
#include "testutil.hpp"

using namespace grammarscope;
using namespace grammarscope::cli;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n' ? 1 : 0;
  return n;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path);
  os << contents;
}

RunConfig tiny_config(uint64_t seed) {
  return load_config("", {"seed=" + std::to_string(seed), "n=24", "split_train=12", "split_val=6",
                          "split_test=6", "prior_n=8", "prior_epochs=4", "prior_lr=0.01",
                          "prior_batch=4", "ps=16", "mask_res=16", "hidden=24", "syn_epochs=6",
                          "syn_lr=0.003", "syn_batch=4", "num_patch=3", "corrupt_ps=16"});
}

// Runs a binary via the shell, capturing combined output and the exit code.
struct RunResult {
  int code;
  std::string output;
};
RunResult run_process(const std::string& cmd) {
  std::array<char, 512> buf;
  std::string output;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) output += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

std::string tool_path() {
  const char* env = std::getenv("GRAMMARSCOPE_BIN");
  return env != nullptr ? env : "../tools/grammarscope";
}

}  // namespace

TEST_CASE("config: unknown keys are rejected, values are range-checked, seed is mandatory") {
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "nonsense=3"}), doctest::Contains("unknown key"),
                       Error);
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "jitter_pos=-1"}), doctest::Contains("jitter_pos"),
                       Error);
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "sigma=abc"}), doctest::Contains("sigma"), Error);
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "method=magic"}), doctest::Contains("method"),
                       Error);
  CHECK_THROWS_WITH_AS(load_config("", {"n=5"}), doctest::Contains("seed"), Error);
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "kernel_size=4"}), doctest::Contains("odd"), Error);
  CHECK_THROWS_WITH_AS(load_config("", {"seed=1", "layout=face", "classes=13"}),
                       doctest::Contains("layout"), Error);

  const RunConfig cfg = load_config("", {"seed=9", "layout=room"});
  CHECK(cfg.resolved_classes() == 13);
  CHECK(cfg.resolved_traversal() == "zig-zag");
  CHECK(load_config("", {"seed=9"}).resolved_traversal() == "five-crop");
}

TEST_CASE("config: file parsing with comments plus --set overrides") {
  testutil::TempDir tmp("config");
  write_file(tmp.sub("run.cfg"),
             "# comment line\n"
             "seed = 42\n"
             "n=50   # trailing comment\n"
             "split_train=40\nsplit_val=5\nsplit_test=5\n"
             "jitter_pos=3\n");
  const RunConfig cfg = load_config(tmp.sub("run.cfg"), {"jitter_pos=1"});
  CHECK(cfg.seed == 42);
  CHECK(cfg.n == 50);
  CHECK(cfg.jitter_pos == 1);  // override wins
}

TEST_CASE("config help lists every accepted key with its default") {
  const std::string help = config_help();
  for (const char* key : {"seed", "layout", "image_h", "k", "km_init", "km_num", "km_iter", "ps",
                          "mask_res", "syn_epochs", "corrupt_kind", "num_patch", "method", "jobs"})
    CHECK(help.find(std::string("  ") + key + " (") != std::string::npos);
  CHECK(help.find("default=") != std::string::npos);
}

TEST_CASE("gen-data writes split manifests with the configured sizes") {
  testutil::TempDir tmp("gendata");
  const RunConfig cfg = load_config("", {"seed=5", "n=10", "split_train=8", "split_val=1",
                                         "split_test=1"});
  cmd_gen_data(cfg, tmp.sub("out"), false);
  CHECK(line_count(slurp(tmp.sub("out") + "/train.txt")) == 8);
  CHECK(line_count(slurp(tmp.sub("out") + "/val.txt")) == 1);
  CHECK(line_count(slurp(tmp.sub("out") + "/test.txt")) == 1);
  const data::DatasetManifest train = data::load_manifest(tmp.sub("out") + "/train.txt");
  CHECK(data::load_image(train.image_path(0)).h == 64);
  CHECK(data::load_mask(train.mask_path(0)).classes == 7);

  SUBCASE("existing non-empty out dir without force is an error") {
    CHECK_THROWS_WITH_AS(cmd_gen_data(cfg, tmp.sub("out"), false), doctest::Contains("--force"),
                         Error);
    cmd_gen_data(cfg, tmp.sub("out"), true);  // force overwrites
  }
  SUBCASE("rerun with the same config and seed is bit-identical") {
    cmd_gen_data(cfg, tmp.sub("again"), false);
    CHECK(slurp(tmp.sub("out") + "/data/sample_00003.ppm") ==
          slurp(tmp.sub("again") + "/data/sample_00003.ppm"));
    CHECK(slurp(tmp.sub("out") + "/train.txt") == slurp(tmp.sub("again") + "/train.txt"));
  }
}

TEST_CASE("splits summing beyond n are rejected at config load") {
  CHECK_THROWS_WITH_AS(
      load_config("", {"seed=1", "n=10", "split_train=9", "split_val=1", "split_test=1"}),
      doctest::Contains("splits"), Error);
}

TEST_CASE("corrupt: exactly half the manifest corrupted, records replay identically") {
  testutil::TempDir tmp("corrupt");
  const RunConfig cfg = load_config("", {"seed=11", "n=10", "split_train=0", "split_val=0",
                                         "split_test=10", "num_patch=3", "corrupt_ps=16"});
  cmd_gen_data(cfg, tmp.sub("ds"), false);
  cmd_corrupt(cfg, tmp.sub("ds") + "/test.txt", tmp.sub("bad"));

  const std::string records = slurp(tmp.sub("bad") + "/records.jsonl");
  CHECK(line_count(records) == 5);  // ceil(10/2) one line per corrupted image

  // replaying each record on the source image reproduces the corrupted copy
  const data::DatasetManifest src = data::load_manifest(tmp.sub("ds") + "/test.txt");
  std::istringstream rs(records);
  std::string line;
  int replayed = 0;
  while (std::getline(rs, line)) {
    const auto j = nlohmann::json::parse(line);
    const std::string name = j.at("image").get<std::string>();
    const corrupt::CorruptionRecord rec = corrupt::record_from_json(line);
    for (size_t i = 0; i < src.size(); ++i) {
      if (src.entries[i].image.find(name) == std::string::npos) continue;
      data::ImageGrid img = data::load_image(src.image_path(i));
      corrupt::apply_corruption(img, rec);
      const data::ImageGrid saved = data::load_image(tmp.sub("bad") + "/" + name);
      CHECK(img.px == saved.px);
      replayed += 1;
    }
  }
  CHECK(replayed == 5);

  SUBCASE("corrupting twice with the same seed picks the same images") {
    cmd_corrupt(cfg, tmp.sub("ds") + "/test.txt", tmp.sub("bad2"));
    CHECK(slurp(tmp.sub("bad2") + "/records.jsonl") == records);
  }
}

TEST_CASE("full in-process pipeline: residual and miou methods produce reports") {
  testutil::TempDir tmp("pipeline");
  const RunConfig cfg = tiny_config(31);

  cmd_gen_data(cfg, tmp.sub("ds"), false);
  cmd_train_cluster(cfg, tmp.sub("ds") + "/train.txt", tmp.sub("stage1"));
  cmd_segment(cfg, tmp.sub("stage1") + "/weights.igwt", tmp.sub("ds") + "/train.txt",
              tmp.sub("seg_train"));
  cmd_train_syntax(cfg, tmp.sub("seg_train") + "/manifest.txt", tmp.sub("syntax"));

  cmd_corrupt(cfg, tmp.sub("ds") + "/val.txt", tmp.sub("val_bad"));
  cmd_corrupt(cfg, tmp.sub("ds") + "/test.txt", tmp.sub("test_bad"));
  cmd_segment(cfg, tmp.sub("stage1") + "/weights.igwt", tmp.sub("val_bad") + "/manifest.txt",
              tmp.sub("seg_val"));
  cmd_segment(cfg, tmp.sub("stage1") + "/weights.igwt", tmp.sub("test_bad") + "/manifest.txt",
              tmp.sub("seg_test"));

  cmd_calibrate(cfg, tmp.sub("seg_val") + "/manifest.txt", tmp.sub("val_bad") + "/records.jsonl",
                tmp.sub("syntax") + "/model.igwt", "", tmp.sub("syntax") + "/plan.json",
                tmp.sub("cal"));
  cmd_evaluate(cfg, tmp.sub("seg_test") + "/manifest.txt", tmp.sub("test_bad") + "/records.jsonl",
               tmp.sub("syntax") + "/model.igwt", "", tmp.sub("syntax") + "/plan.json",
               tmp.sub("cal") + "/threshold.json", tmp.sub("eval"));

  const std::string report = slurp(tmp.sub("eval") + "/report.csv");
  CHECK(report.find("method,corruption,num_patch,ps,accuracy,recall,puzzle_rate") == 0);
  CHECK(line_count(report) == 2);
  CHECK(line_count(slurp(tmp.sub("eval") + "/scores.csv")) == 7);  // header + 6 test images

  SUBCASE("miou method needs no syntax model artifact") {
    RunConfig miou_cfg = cfg;
    miou_cfg.method = "miou";
    cmd_calibrate(miou_cfg, tmp.sub("seg_val") + "/manifest.txt",
                  tmp.sub("val_bad") + "/records.jsonl", /*model=*/"",
                  tmp.sub("seg_train") + "/manifest.txt", tmp.sub("syntax") + "/plan.json",
                  tmp.sub("cal_miou"));
    cmd_evaluate(miou_cfg, tmp.sub("seg_test") + "/manifest.txt",
                 tmp.sub("test_bad") + "/records.jsonl", "", tmp.sub("seg_train") + "/manifest.txt",
                 tmp.sub("syntax") + "/plan.json", tmp.sub("cal_miou") + "/threshold.json",
                 tmp.sub("eval_miou"));
    const std::string miou_report = slurp(tmp.sub("eval_miou") + "/report.csv");
    CHECK(miou_report.find("miou,") != std::string::npos);
  }

  SUBCASE("avg method consumes train masks") {
    RunConfig avg_cfg = cfg;
    avg_cfg.method = "avg";
    cmd_calibrate(avg_cfg, tmp.sub("seg_val") + "/manifest.txt",
                  tmp.sub("val_bad") + "/records.jsonl", tmp.sub("syntax") + "/model.igwt",
                  tmp.sub("seg_train") + "/manifest.txt", tmp.sub("syntax") + "/plan.json",
                  tmp.sub("cal_avg"));
    CHECK(std::filesystem::exists(tmp.sub("cal_avg") + "/threshold.json"));
  }

  SUBCASE("puzzle command reports one row per method") {
    RunConfig pz_cfg = cfg;
    pz_cfg.num_perm = 2;
    pz_cfg.puzzle_count = 4;
    cmd_puzzle(pz_cfg, tmp.sub("ds") + "/test.txt", tmp.sub("stage1") + "/weights.igwt",
               tmp.sub("syntax") + "/model.igwt", tmp.sub("seg_train") + "/manifest.txt",
               tmp.sub("syntax") + "/plan.json", tmp.sub("puzzle"));
    const std::string pz = slurp(tmp.sub("puzzle") + "/report.csv");
    CHECK(line_count(pz) == 4);  // header + 3 methods
    CHECK(pz.find("baseline,puzzle") != std::string::npos);
    CHECK(pz.find("miou,puzzle") != std::string::npos);
  }

  SUBCASE("report merges scenario CSVs into one") {
    cmd_report({tmp.sub("eval") + "/report.csv", tmp.sub("eval") + "/report.csv"},
               tmp.sub("merged.csv"));
    CHECK(line_count(slurp(tmp.sub("merged.csv"))) == 3);  // header + 2 rows
  }

  SUBCASE("evaluate before calibrate raises a dependency error") {
    CHECK_THROWS_WITH_AS(
        cmd_evaluate(cfg, tmp.sub("seg_test") + "/manifest.txt",
                     tmp.sub("test_bad") + "/records.jsonl", tmp.sub("syntax") + "/model.igwt", "",
                     tmp.sub("syntax") + "/plan.json", tmp.sub("nope") + "/threshold.json",
                     tmp.sub("eval2")),
        doctest::Contains("calibrate"), Error);
  }

  SUBCASE("baseline calibrate without a model raises a dependency error") {
    CHECK_THROWS_WITH_AS(cmd_calibrate(cfg, tmp.sub("seg_val") + "/manifest.txt",
                                       tmp.sub("val_bad") + "/records.jsonl", "", "",
                                       tmp.sub("syntax") + "/plan.json", tmp.sub("cal2")),
                         doctest::Contains("train-syntax"), Error);
  }
}

TEST_CASE("cli binary: gen-data runs, exit codes and error lines behave") {
  testutil::TempDir tmp("clibin");
  const std::string tool = tool_path();
  if (!std::filesystem::exists(tool)) {
    MESSAGE("grammarscope binary not found at ", tool, "; skipping process-level checks");
    return;
  }
  const RunResult ok = run_process(tool + " gen-data --set seed=3 --set n=4 --set split_train=2" +
                                   " --set split_val=1 --set split_test=1 --out " + tmp.sub("d"));
  CHECK(ok.code == 0);
  CHECK(std::filesystem::exists(tmp.sub("d") + "/train.txt"));

  const RunResult bad = run_process(tool + " gen-data --set seed=3 --set bogus=1 --out " +
                                    tmp.sub("e"));
  CHECK(bad.code == 1);
  CHECK(bad.output.find("error:") != std::string::npos);

  const RunResult help = run_process(tool + " train-syntax --help");
  CHECK(help.code == 0);
  CHECK(help.output.find("syn_epochs") != std::string::npos);  // config keys listed per subcommand
}
