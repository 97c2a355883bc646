#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vscreen/csv.hpp"
#include "vscreen/evalkit.hpp"
#include "vscreen/manifest.hpp"
#include "vscreen/pipeline.hpp"
#include "vscreen/saliency.hpp"
#include "vscreen/trainer.hpp"

namespace vscreen {

inline std::string metric_cell(const std::optional<double>& v) {
  return v ? fmt_double(*v, 3) : std::string{};
}

// metrics.csv: one row per decision threshold with pooled counts and the
// five derived metrics (3-decimal display; blank = undefined).
inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<Prediction>& pooled,
                              const std::vector<double>& thresholds) {
  CsvTable t;
  t.header = {"threshold", "tp",          "fp",          "fn",  "tn",
              "accuracy",  "ppv",         "sensitivity", "specificity", "npv"};
  for (double th : thresholds) {
    const auto c = confusion_at(pooled, th);
    const auto m = metrics_from(c, th);
    t.rows.push_back({fmt_double(th, 2), std::to_string(c.tp), std::to_string(c.fp),
                      std::to_string(c.fn), std::to_string(c.tn), metric_cell(m.accuracy),
                      metric_cell(m.ppv), metric_cell(m.sensitivity),
                      metric_cell(m.specificity), metric_cell(m.npv)});
  }
  write_csv(path, t);
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 9; ++i) g.push_back(0.1 * i);
  return g;
}

inline void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  CsvTable t;
  t.header = {"fpr", "tpr", "threshold"};
  for (const auto& p : curve.points)
    t.rows.push_back({fmt_g17(p.fpr), fmt_g17(p.tpr), fmt_g17(p.threshold)});
  write_csv(path, t);
}

// auc.csv: one row per fold (nan for single-class folds) plus mean/sd rows.
inline void write_auc_csv(const std::filesystem::path& path, const std::vector<double>& fold_auc,
                          double mean, double sd) {
  CsvTable t;
  t.header = {"fold", "auc"};
  for (std::size_t f = 0; f < fold_auc.size(); ++f)
    t.rows.push_back({std::to_string(f), fmt_g17(fold_auc[f])});
  t.rows.push_back({"mean", fmt_g17(mean)});
  t.rows.push_back({"sd", fmt_g17(sd)});
  write_csv(path, t);
}

struct LocalizationRow {
  std::string vessel_id;
  std::string level;  // "pixel" or "region"
  ConfusionCounts counts;
};

// Grad-CAM overlap scoring for the correctly-classified abnormal vessels of
// one fold (true label abnormal and p >= 0.5, the selection rule for
// localization assessment).
inline std::vector<LocalizationRow> localization_rows_for_fold(
    VesselNetParams<float>& params, const Manifest& manifest,
    const std::vector<Prediction>& fold_preds, double tau) {
  std::vector<LocalizationRow> rows;
  std::vector<Prediction> selected;
  for (const auto& p : fold_preds)
    if (p.true_label == 1 && p.p_abnormal >= 0.5) selected.push_back(p);
  std::sort(selected.begin(), selected.end(),
            [](const Prediction& a, const Prediction& b) { return a.vessel_id < b.vessel_id; });

  for (const auto& sel : selected) {
    const ManifestEntry* entry = nullptr;
    for (const auto& e : manifest.entries)
      if (e.vessel_id == sel.vessel_id) entry = &e;
    if (!entry || entry->mask_path.empty()) continue;

    const RawVesselVolume raw = load_raw_volume(manifest, *entry);
    const PreprocessedVolume vol = preprocess(raw, params.config.input_dims[2]);
    const SaliencyMap map = grad_cam(params, vol, 1);
    const auto sal_mask = binarize(map, tau);
    std::vector<std::uint8_t> ann(vol.mask.size());
    for (std::size_t i = 0; i < ann.size(); ++i) ann[i] = vol.mask[i] != 0 ? 1 : 0;

    rows.push_back({sel.vessel_id, "pixel", pixel_overlap(sal_mask, ann)});
    rows.push_back({sel.vessel_id, "region",
                    region_overlap(sal_mask, ann, {vol.width, vol.height, vol.length})});
  }
  return rows;
}

// localization.csv: per-vessel pixel and region rows plus ALL aggregates.
inline void write_localization_csv(const std::filesystem::path& path,
                                   const std::vector<LocalizationRow>& rows) {
  CsvTable t;
  t.header = {"vessel_id", "level", "tp", "fp", "fn", "tn", "dice", "sensitivity"};
  auto emit = [&](const LocalizationRow& r) {
    const std::uint64_t dice_den = 2 * r.counts.tp + r.counts.fp + r.counts.fn;
    const auto sens = ratio(r.counts.tp, r.counts.tp + r.counts.fn);
    t.rows.push_back({r.vessel_id, r.level, std::to_string(r.counts.tp),
                      std::to_string(r.counts.fp), std::to_string(r.counts.fn),
                      std::to_string(r.counts.tn),
                      dice_den ? fmt_double(dice(r.counts), 3) : std::string{},
                      sens ? fmt_double(*sens, 3) : std::string{}});
  };
  ConfusionCounts pixel_total, region_total;
  for (const auto& r : rows) {
    emit(r);
    (r.level == "pixel" ? pixel_total : region_total) += r.counts;
  }
  if (!rows.empty()) {
    emit({"ALL", "pixel", pixel_total});
    emit({"ALL", "region", region_total});
  }
  write_csv(path, t);
}

}  // namespace vscreen
