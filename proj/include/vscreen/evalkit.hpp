#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"

namespace vscreen {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

// The five derived metrics; a zero denominator leaves the metric undefined
// rather than coercing 0/0.
struct MetricsRow {
  double threshold = 0.0;
  std::optional<double> accuracy, ppv, sensitivity, specificity, npv;
};

struct Prediction {
  std::string vessel_id;
  std::string subject_id;
  int true_label = 0;  // 0 normal, 1 abnormal
  double p_abnormal = 0.0;
};

struct RocPoint {
  double fpr = 0.0, tpr = 0.0, threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Decision rule: predicted abnormal iff p >= threshold (closed comparison).
inline ConfusionCounts confusion_at(const std::vector<Prediction>& preds, double threshold) {
  if (preds.empty()) throw DataError("confusion_at: empty prediction list");
  ConfusionCounts c;
  for (const auto& p : preds) {
    if (p.p_abnormal < 0.0 || p.p_abnormal > 1.0)
      throw ValueError("confusion_at: probability outside [0,1]");
    const bool pred_pos = p.p_abnormal >= threshold;
    if (pred_pos)
      (p.true_label == 1 ? c.tp : c.fp) += 1;
    else
      (p.true_label == 1 ? c.fn : c.tn) += 1;
  }
  return c;
}

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline MetricsRow metrics_from(const ConfusionCounts& c, double threshold) {
  if (c.total() == 0) throw DataError("metrics_from: all-zero confusion counts");
  MetricsRow m;
  m.threshold = threshold;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.ppv = ratio(c.tp, c.tp + c.fp);
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.fp + c.tn);
  m.npv = ratio(c.tn, c.fn + c.tn);
  return m;
}

inline double dice(const ConfusionCounts& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) throw DataError("dice: 2TP+FP+FN is zero");
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

// Rounding used when comparing against published two-decimal tables: round
// to three decimals first, then half-up to two. The published values behave
// exactly like this double rounding (e.g. 0.7549 -> 0.755 -> 0.76).
inline double paper_round2(double v) {
  const long long m3 = std::llround(v * 1000.0);
  const long long m2 = (m3 + 5) / 10;
  return static_cast<double>(m2) / 100.0;
}

// Threshold sweep over the distinct scores, trapezoidal integration. Tied
// scores move the curve point jointly, matching the Mann-Whitney half-tie
// convention.
inline RocCurve roc_auc(const std::vector<Prediction>& preds) {
  std::uint64_t pos = 0, neg = 0;
  for (const auto& p : preds) (p.true_label == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw DataError("roc_auc: need both classes, got " + std::to_string(pos) + " positive / " +
                    std::to_string(neg) + " negative");

  std::vector<std::pair<double, int>> sp;
  sp.reserve(preds.size());
  for (const auto& p : preds) sp.emplace_back(p.p_abnormal, p.true_label);
  std::sort(sp.begin(), sp.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::nextafter(1.0, 2.0)});
  std::uint64_t tp = 0, fp = 0;
  double auc = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < sp.size()) {
    const double score = sp[i].first;
    while (i < sp.size() && sp[i].first == score) {
      (sp[i].second == 1 ? tp : fp) += 1;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    curve.points.push_back({fpr, tpr, score});
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  curve.auc = auc;
  return curve;
}

// --------------------------- voxel mask scoring ---------------------------

// Per-voxel overlap over the full volume universe: every voxel lands in
// exactly one of TP/FP/FN/TN.
inline ConfusionCounts pixel_overlap(const std::vector<std::uint8_t>& saliency,
                                     const std::vector<std::uint8_t>& annotation) {
  if (saliency.size() != annotation.size())
    throw ShapeError("pixel_overlap: mask sizes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < saliency.size(); ++i) {
    const bool s = saliency[i] != 0, a = annotation[i] != 0;
    if (s && a)
      ++c.tp;
    else if (s && !a)
      ++c.fp;
    else if (!s && a)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct Components {
  std::vector<std::uint32_t> labels;  // 0 = background, labels dense from 1
  std::uint32_t count = 0;
};

// 26-connected component labeling via union-find over the half-neighborhood,
// relabeled so component ids follow first appearance in scan order (lowest
// linear index first).
inline Components connected_components(const std::vector<std::uint8_t>& mask,
                                       std::array<std::uint32_t, 3> dims) {
  const std::size_t w = dims[0], h = dims[1], l = dims[2];
  if (mask.size() != w * h * l)
    throw ShapeError("connected_components: mask size does not match dims");
  Components out;
  out.labels.assign(mask.size(), 0);

  std::vector<std::uint32_t> parent(1, 0);  // parent[0] unused
  auto find = [&](std::uint32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  // Half neighborhood: neighbors with strictly smaller linear index.
  std::vector<std::array<int, 3>> prev;
  for (int dt = -1; dt <= 0; ++dt)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dt == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        prev.push_back({dx, dy, dt});
      }

  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t idx = (t * h + y) * w + x;
        if (mask[idx] == 0) continue;
        std::uint32_t lab = 0;
        for (const auto& d : prev) {
          const long xx = static_cast<long>(x) + d[0];
          const long yy = static_cast<long>(y) + d[1];
          const long tt = static_cast<long>(t) + d[2];
          if (xx < 0 || yy < 0 || tt < 0 || xx >= static_cast<long>(w) ||
              yy >= static_cast<long>(h) || tt >= static_cast<long>(l))
            continue;
          const std::uint32_t nl =
              out.labels[(static_cast<std::size_t>(tt) * h + static_cast<std::size_t>(yy)) * w +
                         static_cast<std::size_t>(xx)];
          if (nl == 0) continue;
          if (lab == 0)
            lab = nl;
          else
            unite(lab, nl);
        }
        if (lab == 0) {
          lab = static_cast<std::uint32_t>(parent.size());
          parent.push_back(lab);
        }
        out.labels[idx] = lab;
      }

  // Resolve and renumber by first occurrence in scan order.
  std::vector<std::uint32_t> remap(parent.size(), 0);
  std::uint32_t next = 0;
  for (auto& lab : out.labels) {
    if (lab == 0) continue;
    const std::uint32_t root = find(lab);
    if (remap[root] == 0) remap[root] = ++next;
    lab = remap[root];
  }
  out.count = next;
  return out;
}

// Region-level overlap (26-connected components on both masks): an
// annotation component touched by any saliency component is one TP,
// otherwise one FN; a saliency component touching no annotation is one FP.
// TN is not defined by masks alone and is taken from the caller.
inline ConfusionCounts region_overlap(const std::vector<std::uint8_t>& saliency,
                                      const std::vector<std::uint8_t>& annotation,
                                      std::array<std::uint32_t, 3> dims,
                                      std::uint64_t external_tn = 0) {
  if (saliency.size() != annotation.size())
    throw ShapeError("region_overlap: mask sizes differ");
  const Components sc = connected_components(saliency, dims);
  const Components ac = connected_components(annotation, dims);

  std::vector<std::uint8_t> ann_hit(ac.count + 1, 0);
  std::vector<std::uint8_t> sal_hit(sc.count + 1, 0);
  for (std::size_t i = 0; i < saliency.size(); ++i) {
    if (sc.labels[i] != 0 && ac.labels[i] != 0) {
      ann_hit[ac.labels[i]] = 1;
      sal_hit[sc.labels[i]] = 1;
    }
  }
  ConfusionCounts c;
  c.tn = external_tn;
  for (std::uint32_t a = 1; a <= ac.count; ++a) (ann_hit[a] ? c.tp : c.fn) += 1;
  for (std::uint32_t s = 1; s <= sc.count; ++s)
    if (!sal_hit[s]) ++c.fp;
  return c;
}

// Euclidean-ball dilation (voxel units), used to score whether a saliency
// peak lands on or next to a lesion.
inline std::vector<std::uint8_t> dilate_mask(const std::vector<std::uint8_t>& mask,
                                             std::array<std::uint32_t, 3> dims, double radius) {
  const long w = dims[0], h = dims[1], l = dims[2];
  if (mask.size() != static_cast<std::size_t>(w) * h * l)
    throw ShapeError("dilate_mask: mask size does not match dims");
  std::vector<std::array<int, 3>> offsets;
  const int r = static_cast<int>(std::floor(radius));
  for (int dt = -r; dt <= r; ++dt)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy + dt * dt <= radius * radius) offsets.push_back({dx, dy, dt});
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (long t = 0; t < l; ++t)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        if (mask[static_cast<std::size_t>((t * h + y) * w + x)] == 0) continue;
        for (const auto& d : offsets) {
          const long xx = x + d[0], yy = y + d[1], tt = t + d[2];
          if (xx < 0 || yy < 0 || tt < 0 || xx >= w || yy >= h || tt >= l) continue;
          out[static_cast<std::size_t>((tt * h + yy) * w + xx)] = 1;
        }
      }
  return out;
}

}  // namespace vscreen
