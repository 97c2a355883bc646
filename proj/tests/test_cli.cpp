#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "vscreen/config.hpp"
#include "vscreen/io_util.hpp"
#include "vscreen/manifest.hpp"
#include "vscreen/phantom.hpp"
#include "vscreen/trainer.hpp"
#include "vscreen/v3d.hpp"
#include "vscreen/vesselnet.hpp"

using namespace vscreen;
namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* p = std::getenv("VESSELSCREEN_BIN");
  REQUIRE(p != nullptr);
  return p;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  const fs::path log = fs::temp_directory_path() / "vscreen_cli_out.txt";
  const std::string cmd = env_prefix + cli_bin() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(log);
  r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vscreen_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("phantom command generates the requested cohort", "[cli]") {
  const auto dir = fresh_dir("ph");
  const auto r = run_cli("phantom --n 20 --abnormal-frac 0.5 --dims 9x9x16 --seed 7 --out " +
                         dir.string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("10 abnormal subjects") != std::string::npos);
  const auto m = load_manifest(dir / "manifest.json");
  CHECK(m.subject_ids().size() == 20);
}

TEST_CASE("phantom reruns are byte-identical", "[cli]") {
  const auto a = fresh_dir("ph_a"), b = fresh_dir("ph_b");
  const std::string args = "phantom --n 12 --abnormal-frac 0.5 --dims 9x9x16 --seed 9 --out ";
  REQUIRE(run_cli(args + a.string()).exit_code == 0);
  REQUIRE(run_cli(args + b.string()).exit_code == 0);
  CHECK(read_file_bytes(a / "manifest.json") == read_file_bytes(b / "manifest.json"));
  const auto m = load_manifest(a / "manifest.json");
  for (const auto& e : m.entries)
    CHECK(read_file_bytes(a / e.volume_path) == read_file_bytes(b / e.volume_path));
}

TEST_CASE("phantom rejects an out-of-range abnormal fraction", "[cli]") {
  const auto dir = fresh_dir("ph_bad");
  const auto r = run_cli("phantom --n 20 --abnormal-frac 1.5 --out " + dir.string());
  CHECK(r.exit_code == 2);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("VESSELSCREEN_SEED overrides the seed flag", "[cli]") {
  const auto a = fresh_dir("ph_env_a"), b = fresh_dir("ph_env_b"), c = fresh_dir("ph_env_c");
  const std::string args = "phantom --n 10 --abnormal-frac 0.5 --dims 9x9x16 ";
  REQUIRE(run_cli(args + "--seed 1 --out " + a.string(), "VESSELSCREEN_SEED=42 ").exit_code == 0);
  REQUIRE(run_cli(args + "--seed 42 --out " + b.string()).exit_code == 0);
  REQUIRE(run_cli(args + "--seed 1 --out " + c.string()).exit_code == 0);
  CHECK(read_file_bytes(a / "manifest.json") == read_file_bytes(b / "manifest.json"));
  CHECK(read_file_bytes(a / "manifest.json") != read_file_bytes(c / "manifest.json"));
}

TEST_CASE("train rejects a missing manifest without partial outputs", "[cli]") {
  const auto out = fresh_dir("tr_missing");
  const auto r = run_cli("train --manifest /nonexistent/manifest.json --out " + out.string());
  CHECK(r.exit_code == 2);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("train rejects a patience/epoch-cap conflict", "[cli]") {
  const auto ds = fresh_dir("tr_conf_ds");
  REQUIRE(run_cli("phantom --n 10 --abnormal-frac 0.5 --dims 17x17x24 --seed 5 --out " +
                  ds.string())
              .exit_code == 0);
  const auto out = fresh_dir("tr_conf_out");
  // default patience 20 >= max_epochs 3
  const auto r = run_cli("train --manifest " + (ds / "manifest.json").string() +
                         " --max-epochs 3 --out " + out.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("patience") != std::string::npos);
}

TEST_CASE("train honours the epoch cap override", "[cli]") {
  const auto ds = fresh_dir("tr_ds");
  REQUIRE(run_cli("phantom --n 10 --abnormal-frac 0.5 --dims 17x17x24 --seed 5 --out " +
                  ds.string())
              .exit_code == 0);
  const auto out = fresh_dir("tr_out");
  const auto r = run_cli("train --manifest " + (ds / "manifest.json").string() +
                         " --max-epochs 3 --patience 2 --batch-size 4 --fc-hidden 8 "
                         "--dims 17x17x24 --lr 1e-3 --seed 77 --out " +
                         out.string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(out / "run_config.txt"));
  for (int f = 0; f < 5; ++f) {
    const auto tag = std::to_string(f);
    CHECK(fs::exists(out / ("checkpoint_fold" + tag + ".vnck")));
    const auto log = read_csv(out / ("trainlog_fold" + tag + ".csv"));
    CHECK(log.rows.size() <= 3);
  }
  // resolved config echoes the overrides
  const auto echoed = load_train_config(out / "run_config.txt");
  CHECK(echoed.max_epochs == 3);
  CHECK(echoed.lr == 1e-3);
}

TEST_CASE("train reads the flat key-value config file", "[cli]") {
  const auto dir = fresh_dir("cfg");
  fs::create_directories(dir);
  atomic_write_text(dir / "run.cfg",
                    "# run configuration\n"
                    "processing_dims = 17x17x24\n"
                    "learning_rate = 1e-3\n"
                    "batch_size = 4\n"
                    "max_epochs = 2\n"
                    "patience = 1\n"
                    "fc_hidden = 8\n"
                    "seed = 123\n");
  const auto cfg = load_train_config(dir / "run.cfg");
  CHECK(cfg.dims == std::array<std::uint32_t, 3>{17, 17, 24});
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.seed == 123);
  // unchanged defaults
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.lambda_l2 == 1e-3);

  atomic_write_text(dir / "bad.cfg", "learning_rate = 1e-3\nmystery_knob = 5\n");
  CHECK_THROWS_AS(load_train_config(dir / "bad.cfg"), ConfigError);
}

TEST_CASE("eval demands a manifest when localizing", "[cli]") {
  const auto run = fresh_dir("ev_run");
  fs::create_directories(run);
  write_predictions_csv(run / "predictions_fold0.csv",
                        {{"v1", "s1", 1, 0.9}, {"v2", "s2", 0, 0.1}});
  const auto rep = fresh_dir("ev_rep");
  const auto r = run_cli("eval --run " + run.string() + " --reports " + rep.string() +
                         " --localize");
  CHECK(r.exit_code == 2);
  const auto ok = run_cli("eval --run " + run.string() + " --reports " + rep.string());
  REQUIRE(ok.exit_code == 0);
  CHECK(fs::exists(rep / "metrics.csv"));
  const auto metrics = read_csv(rep / "metrics.csv");
  CHECK(metrics.rows.size() == 9);  // thresholds 0.1 .. 0.9
}

TEST_CASE("eval reports AUC 1.0 for perfectly separated predictions", "[cli]") {
  const auto run = fresh_dir("ev_perfect");
  fs::create_directories(run);
  write_predictions_csv(run / "predictions_fold0.csv",
                        {{"v1", "s1", 1, 0.95},
                         {"v2", "s2", 1, 0.85},
                         {"v3", "s3", 0, 0.15},
                         {"v4", "s4", 0, 0.05}});
  const auto rep = fresh_dir("ev_perfect_rep");
  REQUIRE(run_cli("eval --run " + run.string() + " --reports " + rep.string()).exit_code == 0);
  const auto auc = read_csv(rep / "auc.csv");
  REQUIRE(auc.rows.size() == 3);  // fold 0 + mean + sd
  CHECK(auc.rows[0][1] == "1");
  CHECK(auc.rows[1][0] == "mean");
  CHECK(auc.rows[1][1] == "1");
  // roc.csv ends on (1,1)
  const auto roc = read_csv(rep / "roc.csv");
  CHECK(roc.rows.back()[0] == "1");
  CHECK(roc.rows.back()[1] == "1");
}

TEST_CASE("eval honours a custom threshold list", "[cli]") {
  const auto run = fresh_dir("ev_grid");
  fs::create_directories(run);
  write_predictions_csv(run / "predictions_fold0.csv",
                        {{"v1", "s1", 1, 0.9}, {"v2", "s2", 0, 0.1}});
  const auto rep = fresh_dir("ev_grid_rep");
  REQUIRE(run_cli("eval --run " + run.string() + " --reports " + rep.string() +
                  " --thresholds 0.25,0.5,0.75")
              .exit_code == 0);
  const auto metrics = read_csv(rep / "metrics.csv");
  REQUIRE(metrics.rows.size() == 3);
  CHECK(metrics.rows[0][0] == "0.25");
  const auto bad = run_cli("eval --run " + run.string() + " --reports " + rep.string() +
                           " --thresholds 0.5,zebra");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("eval reports metrics even when AUC is undefined", "[cli]") {
  const auto run = fresh_dir("ev_single");
  fs::create_directories(run);
  write_predictions_csv(run / "predictions_fold0.csv",
                        {{"v1", "s1", 1, 0.9}, {"v2", "s2", 1, 0.8}});
  const auto rep = fresh_dir("ev_single_rep");
  const auto r = run_cli("eval --run " + run.string() + " --reports " + rep.string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("AUC unavailable") != std::string::npos);
  CHECK(fs::exists(rep / "metrics.csv"));
}

TEST_CASE("saliency reports dim mismatches with both shapes and exit 2", "[cli]") {
  const auto dir = fresh_dir("sa");
  fs::create_directories(dir);
  VesselNetConfig cfg;
  cfg.input_dims = {17, 17, 24};
  cfg.conv_filters = {2, 3, 4, 5};
  cfg.fc_hidden = 8;
  save_checkpoint(build<float>(cfg, 3), dir / "model.vnck");
  std::vector<std::uint16_t> vox(21 * 21 * 24, 1000);
  write_v3d_u16(dir / "wrong.v3d", 21, 21, 24, vox);
  const auto r = run_cli("saliency --model " + (dir / "model.vnck").string() + " --volume " +
                         (dir / "wrong.v3d").string() + " --out " + (dir / "sal").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("21x21x24") != std::string::npos);
  CHECK(r.output.find("17x17x24") != std::string::npos);
}

TEST_CASE("saliency on a dead model warns and writes an empty mask", "[cli]") {
  const auto dir = fresh_dir("sa_zero");
  fs::create_directories(dir);
  VesselNetConfig cfg;
  cfg.input_dims = {17, 17, 24};
  cfg.conv_filters = {2, 3, 4, 5};
  cfg.fc_hidden = 8;
  auto params = build<float>(cfg, 4);
  std::fill(params.fc2_weight.values.begin(), params.fc2_weight.values.end(), 0.0f);
  save_checkpoint(params, dir / "dead.vnck");
  std::vector<std::uint16_t> vox(17 * 17 * 24, 1400);
  write_v3d_u16(dir / "vol.v3d", 17, 17, 24, vox);
  const auto r = run_cli("saliency --model " + (dir / "dead.vnck").string() + " --volume " +
                         (dir / "vol.v3d").string() + " --tau 0.5 --out " +
                         (dir / "sal").string());
  CAPTURE(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("identically zero") != std::string::npos);
  const auto mask = read_v3d(dir / "sal.mask.v3d");
  for (auto m : mask.mask) CHECK(m == 0);
  CHECK(fs::exists(dir / "sal.cam.v3d"));
  CHECK(fs::exists(dir / "sal.central.pgm"));
}

TEST_CASE("saliency output dims equal the input volume dims", "[cli]") {
  const auto dir = fresh_dir("sa_dims");
  fs::create_directories(dir);
  VesselNetConfig cfg;
  cfg.input_dims = {17, 17, 24};
  cfg.conv_filters = {2, 3, 4, 5};
  cfg.fc_hidden = 8;
  save_checkpoint(build<float>(cfg, 5), dir / "model.vnck");
  // shorter raw volume: padded to the model length before mapping
  std::vector<std::uint16_t> vox(17 * 17 * 20, 1400);
  write_v3d_u16(dir / "vol.v3d", 17, 17, 20, vox);
  const auto r = run_cli("saliency --model " + (dir / "model.vnck").string() + " --volume " +
                         (dir / "vol.v3d").string() + " --out " + (dir / "sal").string());
  REQUIRE(r.exit_code == 0);
  const auto cam = read_v3d(dir / "sal.cam.v3d");
  CHECK(cam.width == 17);
  CHECK(cam.height == 17);
  CHECK(cam.length == 24);  // the model's processing length
}
