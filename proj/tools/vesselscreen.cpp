// vesselscreen: phantom-data generation, training, evaluation, and saliency
// for straightened coronary MPR volumes.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vscreen/config.hpp"
#include "vscreen/errors.hpp"
#include "vscreen/manifest.hpp"
#include "vscreen/phantom.hpp"
#include "vscreen/pipeline.hpp"
#include "vscreen/reports.hpp"
#include "vscreen/saliency.hpp"
#include "vscreen/trainer.hpp"
#include "vscreen/v3d.hpp"
#include "vscreen/vesselnet.hpp"

namespace fs = std::filesystem;
using namespace vscreen;

namespace {

std::uint64_t apply_seed_env(std::uint64_t seed) {
  if (const char* env = std::getenv("VESSELSCREEN_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("VESSELSCREEN_SEED is not an integer: " + std::string(env));
    }
  }
  return seed;
}

int cmd_phantom(std::size_t n, double abnormal_frac, const std::string& dims_str,
                std::uint64_t seed, const std::string& out_dir) {
  const auto dims = parse_dims(dims_str);
  const Manifest m = generate_dataset(n, abnormal_frac, dims, apply_seed_env(seed), out_dir);
  std::size_t abnormal_vessels = m.count_label(VesselLabel::abnormal);
  std::map<std::string, bool> subj;
  for (const auto& e : m.entries) subj[e.subject_id] |= e.label == VesselLabel::abnormal;
  std::size_t abnormal_subjects = 0;
  for (const auto& [id, ab] : subj) abnormal_subjects += ab ? 1 : 0;
  std::printf("wrote %zu vessels from %zu subjects (%zu abnormal subjects, %zu abnormal "
              "vessels) to %s\n",
              m.entries.size(), subj.size(), abnormal_subjects, abnormal_vessels,
              out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& config_path,
              const std::string& out_dir, std::size_t jobs, const TrainConfig& overrides,
              const std::vector<std::string>& set_flags) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_train_config(config_path);
  auto flag_set = [&](const std::string& name) {
    return std::find(set_flags.begin(), set_flags.end(), name) != set_flags.end();
  };
  if (flag_set("lr")) cfg.lr = overrides.lr;
  if (flag_set("max-epochs")) cfg.max_epochs = overrides.max_epochs;
  if (flag_set("patience")) cfg.patience = overrides.patience;
  if (flag_set("batch-size")) cfg.batch_size = overrides.batch_size;
  if (flag_set("folds")) cfg.folds = overrides.folds;
  if (flag_set("fc-hidden")) cfg.fc_hidden = overrides.fc_hidden;
  if (flag_set("dims")) cfg.dims = overrides.dims;
  if (flag_set("seed")) cfg.seed = overrides.seed;
  cfg.seed = apply_seed_env(cfg.seed);
  cfg.validate();

  const Manifest manifest = load_manifest(manifest_path);
  fs::create_directories(out_dir);
  atomic_write_text(fs::path(out_dir) / "run_config.txt", format_train_config(cfg));

  const CvResult r = run_cv(manifest, cfg, out_dir, jobs, [](std::size_t f, const TrainLog& log) {
    std::printf("fold %zu done: %zu epochs, stop=%s, best_epoch=%zu\n", f, log.epochs.size(),
                to_string(log.stop_reason), log.best_epoch);
    std::fflush(stdout);
  });
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    const auto& log = r.logs[f];
    std::printf("fold %zu: %zu epochs, stop=%s, best_epoch=%zu, auc=%.4f\n", f,
                log.epochs.size(), to_string(log.stop_reason), log.best_epoch, r.fold_auc[f]);
  }
  std::printf("mean auc %.4f (sd %.4f)\n", r.mean_auc, r.sd_auc);
  return 0;
}

std::vector<double> parse_threshold_list(const std::string& spec) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = std::min(spec.find(',', pos), spec.size());
    const std::string tok = spec.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size() || v <= 0.0 || v >= 1.0) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad threshold '" + tok + "', expected values in (0,1)");
    }
    pos = comma + 1;
    if (comma == spec.size()) break;
  }
  if (out.empty()) throw ConfigError("empty threshold list");
  return out;
}

int cmd_eval(const std::string& run_dir, const std::string& manifest_path,
             const std::string& reports_dir, bool localize, double tau,
             const std::vector<double>& thresholds) {
  fs::create_directories(reports_dir);

  std::vector<std::vector<Prediction>> folds;
  for (std::size_t f = 0;; ++f) {
    const fs::path p = fs::path(run_dir) / ("predictions_fold" + std::to_string(f) + ".csv");
    if (!fs::exists(p)) break;
    folds.push_back(read_predictions_csv(p));
  }
  if (folds.empty())
    throw DataError("no predictions_fold*.csv files under " + run_dir);

  std::vector<Prediction> pooled;
  for (const auto& f : folds) pooled.insert(pooled.end(), f.begin(), f.end());

  write_metrics_csv(fs::path(reports_dir) / "metrics.csv", pooled, thresholds);

  std::vector<double> fold_auc;
  double sum = 0.0, sq = 0.0;
  std::size_t n_auc = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    double auc = std::numeric_limits<double>::quiet_NaN();
    try {
      auc = roc_auc(folds[f]).auc;
      sum += auc;
      sq += auc * auc;
      ++n_auc;
    } catch (const DataError& e) {
      std::fprintf(stderr, "warning: fold %zu AUC unavailable: %s\n", f, e.what());
    }
    fold_auc.push_back(auc);
  }
  const double mean = n_auc ? sum / static_cast<double>(n_auc) : 0.0;
  const double sd =
      n_auc ? std::sqrt(std::max(0.0, sq / static_cast<double>(n_auc) - mean * mean)) : 0.0;
  write_auc_csv(fs::path(reports_dir) / "auc.csv", fold_auc, mean, sd);
  try {
    write_roc_csv(fs::path(reports_dir) / "roc.csv", roc_auc(pooled));
  } catch (const DataError& e) {
    std::fprintf(stderr, "warning: pooled ROC unavailable: %s\n", e.what());
  }
  std::printf("evaluated %zu predictions over %zu folds; mean auc %.4f (sd %.4f)\n",
              pooled.size(), folds.size(), mean, sd);

  if (localize) {
    const Manifest manifest = load_manifest(manifest_path);
    std::vector<LocalizationRow> rows;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const fs::path ckpt =
          fs::path(run_dir) / ("checkpoint_fold" + std::to_string(f) + ".vnck");
      auto params = load_checkpoint(ckpt);
      const auto fold_rows = localization_rows_for_fold(params, manifest, folds[f], tau);
      rows.insert(rows.end(), fold_rows.begin(), fold_rows.end());
    }
    write_localization_csv(fs::path(reports_dir) / "localization.csv", rows);
    ConfusionCounts pixel_total, region_total;
    for (const auto& r : rows) (r.level == "pixel" ? pixel_total : region_total) += r.counts;
    if (2 * pixel_total.tp + pixel_total.fp + pixel_total.fn > 0)
      std::printf("localization: %zu vessels, pixel dice %.3f, region dice %.3f\n",
                  rows.size() / 2, dice(pixel_total),
                  (2 * region_total.tp + region_total.fp + region_total.fn)
                      ? dice(region_total)
                      : 0.0);
    else
      std::printf("localization: no correctly classified abnormal vessels to score\n");
  }
  return 0;
}

int cmd_saliency(const std::string& model_path, const std::string& volume_path, double tau,
                 bool tau_given, int class_index, const std::string& out_prefix) {
  auto params = load_checkpoint(model_path);
  const auto dims = params.config.input_dims;
  const V3dData vd = read_v3d(volume_path);

  PreprocessedVolume vol;
  if (vd.dtype == V3dType::raw_u16) {
    RawVesselVolume raw;
    raw.width = vd.width;
    raw.height = vd.height;
    raw.length = vd.length;
    raw.intensities = vd.raw;
    raw.vessel_id = fs::path(volume_path).stem().string();
    if (raw.width != dims[0] || raw.height != dims[1] || raw.length > dims[2]) {
      std::fprintf(stderr,
                   "error: volume dims %ux%ux%u are incompatible with model dims %ux%ux%u\n",
                   vd.width, vd.height, vd.length, dims[0], dims[1], dims[2]);
      return 2;
    }
    raw.validate();
    vol = preprocess(raw, dims[2]);
  } else if (vd.dtype == V3dType::real_f32) {
    if (vd.width != dims[0] || vd.height != dims[1] || vd.length != dims[2]) {
      std::fprintf(stderr,
                   "error: volume dims %ux%ux%u do not match model dims %ux%ux%u\n", vd.width,
                   vd.height, vd.length, dims[0], dims[1], dims[2]);
      return 2;
    }
    vol.width = vd.width;
    vol.height = vd.height;
    vol.length = vd.length;
    vol.values = vd.real;
    vol.vessel_id = fs::path(volume_path).stem().string();
  } else {
    std::fprintf(stderr, "error: %s holds a mask, not a vessel volume\n", volume_path.c_str());
    return 2;
  }

  const SaliencyMap map = grad_cam(params, vol, class_index);
  write_v3d_f32(out_prefix + ".cam.v3d", map.width, map.height, map.length, map.values);
  write_central_slice_pgm(out_prefix + ".central.pgm", map.values, map.width, map.height,
                          map.length);
  const float mx = *std::max_element(map.values.begin(), map.values.end());
  if (mx <= 0.0f)
    std::fprintf(stderr, "warning: saliency map is identically zero; the mask will be empty\n");
  if (tau_given) {
    const auto mask = binarize(map, tau);
    write_v3d_u8(out_prefix + ".mask.v3d", map.width, map.height, map.length, mask);
  }
  std::printf("wrote %s.cam.v3d and %s.central.pgm\n", out_prefix.c_str(), out_prefix.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vessel-screening toolkit: 3D-CNN classification and weak localization of "
               "atherosclerosis on straightened MPR vessel volumes"};
  app.require_subcommand(1);

  // phantom
  auto* ph = app.add_subcommand("phantom", "generate a synthetic vessel dataset");
  std::size_t ph_n = 60;
  double ph_frac = 0.5;
  std::string ph_dims = "21x21x96";
  std::uint64_t ph_seed = 7;
  std::string ph_out;
  ph->add_option("--n", ph_n, "number of subjects")->check(CLI::Range(std::size_t{10}, std::size_t{100000}));
  ph->add_option("--abnormal-frac", ph_frac, "fraction of abnormal subjects")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  ph->add_option("--dims", ph_dims, "volume dims WxHxL (default 21x21x96)");
  ph->add_option("--seed", ph_seed, "generator seed");
  ph->add_option("--out", ph_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "run subject-level cross-validated training");
  std::string tr_manifest, tr_config, tr_out;
  std::size_t tr_jobs = 1;
  TrainConfig tr_over;
  std::string tr_dims;
  tr->add_option("--manifest", tr_manifest, "dataset manifest.json")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--config", tr_config, "key = value run configuration")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--jobs", tr_jobs, "fold-level parallelism (default 1, deterministic)")
      ->check(CLI::Range(std::size_t{1}, std::size_t{64}));
  auto* f_lr = tr->add_option("--lr", tr_over.lr, "learning rate override");
  auto* f_me = tr->add_option("--max-epochs", tr_over.max_epochs, "epoch cap override");
  auto* f_pa = tr->add_option("--patience", tr_over.patience, "patience override");
  auto* f_bs = tr->add_option("--batch-size", tr_over.batch_size, "batch size override");
  auto* f_fo = tr->add_option("--folds", tr_over.folds, "fold count override");
  auto* f_fh = tr->add_option("--fc-hidden", tr_over.fc_hidden, "FC hidden width override");
  auto* f_di = tr->add_option("--dims", tr_dims, "processing dims override, WxHxL");
  auto* f_se = tr->add_option("--seed", tr_over.seed, "run seed override");

  // eval
  auto* ev = app.add_subcommand("eval", "classification metrics, ROC/AUC, localization");
  std::string ev_run, ev_manifest, ev_reports, ev_thresholds;
  bool ev_localize = false;
  double ev_tau = 0.5;
  ev->add_option("--run", ev_run, "training output directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--manifest", ev_manifest, "dataset manifest.json (needed for --localize)")
      ->check(CLI::ExistingFile);
  ev->add_option("--reports", ev_reports, "reports output directory")->required();
  ev->add_flag("--localize", ev_localize, "score Grad-CAM overlap on correctly classified "
                                          "abnormal vessels");
  ev->add_option("--tau", ev_tau, "saliency binarization threshold (fraction of max)")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  ev->add_option("--thresholds", ev_thresholds,
                 "comma-separated decision thresholds (default 0.1,...,0.9)");

  // saliency
  auto* sa = app.add_subcommand("saliency", "Grad-CAM heat map for one vessel volume");
  std::string sa_model, sa_volume, sa_out;
  double sa_tau = 0.5;
  int sa_class = 1;
  sa->add_option("--model", sa_model, "VNCK checkpoint")->required()->check(CLI::ExistingFile);
  sa->add_option("--volume", sa_volume, "V3D vessel volume (raw u16 or preprocessed f32)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* f_tau = sa->add_option("--tau", sa_tau, "also write a binarized mask at this threshold")
                    ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  sa->add_option("--class-index", sa_class, "class to explain (0 normal, 1 abnormal)")
      ->check(CLI::Range(0, 1));
  sa->add_option("--out", sa_out, "output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (ph->parsed()) return cmd_phantom(ph_n, ph_frac, ph_dims, ph_seed, ph_out);
    if (tr->parsed()) {
      std::vector<std::string> set_flags;
      if (*f_lr) set_flags.push_back("lr");
      if (*f_me) set_flags.push_back("max-epochs");
      if (*f_pa) set_flags.push_back("patience");
      if (*f_bs) set_flags.push_back("batch-size");
      if (*f_fo) set_flags.push_back("folds");
      if (*f_fh) set_flags.push_back("fc-hidden");
      if (*f_se) set_flags.push_back("seed");
      if (*f_di) {
        tr_over.dims = parse_dims(tr_dims);
        set_flags.push_back("dims");
      }
      return cmd_train(tr_manifest, tr_config, tr_out, tr_jobs, tr_over, set_flags);
    }
    if (ev->parsed()) {
      if (ev_localize && ev_manifest.empty()) {
        std::fprintf(stderr, "error: --localize requires --manifest\n");
        return 2;
      }
      const auto grid = ev_thresholds.empty() ? default_threshold_grid()
                                               : parse_threshold_list(ev_thresholds);
      return cmd_eval(ev_run, ev_manifest, ev_reports, ev_localize, ev_tau, grid);
    }
    if (sa->parsed())
      return cmd_saliency(sa_model, sa_volume, sa_tau, f_tau->count() > 0, sa_class, sa_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
