#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "support/oracles.hpp"
#include "vscreen/evalkit.hpp"
#include "vscreen/rng.hpp"

using namespace vscreen;

namespace {

std::vector<Prediction> random_predictions(Rng& rng, std::size_t n, bool ties = false) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    Prediction p;
    p.vessel_id = "v" + std::to_string(i);
    p.true_label = static_cast<int>(rng.index(2));
    p.p_abnormal = ties ? static_cast<double>(rng.index(10)) / 9.0 : rng.real64();
    out.push_back(p);
  }
  return out;
}

// Seed-scan flood fill, deliberately different from the union-find pass in
// the library.
Components flood_fill_oracle(const std::vector<std::uint8_t>& mask,
                             std::array<std::uint32_t, 3> dims) {
  const long w = dims[0], h = dims[1], l = dims[2];
  Components out;
  out.labels.assign(mask.size(), 0);
  std::uint32_t next = 0;
  for (long t = 0; t < l; ++t)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        const std::size_t idx = static_cast<std::size_t>((t * h + y) * w + x);
        if (mask[idx] == 0 || out.labels[idx] != 0) continue;
        ++next;
        std::deque<std::array<long, 3>> queue{{x, y, t}};
        out.labels[idx] = next;
        while (!queue.empty()) {
          const auto [cx, cy, ct] = queue.front();
          queue.pop_front();
          for (int dt = -1; dt <= 1; ++dt)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dt == 0) continue;
                const long nx = cx + dx, ny = cy + dy, nt = ct + dt;
                if (nx < 0 || ny < 0 || nt < 0 || nx >= w || ny >= h || nt >= l) continue;
                const std::size_t nidx = static_cast<std::size_t>((nt * h + ny) * w + nx);
                if (mask[nidx] != 0 && out.labels[nidx] == 0) {
                  out.labels[nidx] = next;
                  queue.push_back({nx, ny, nt});
                }
              }
        }
      }
  out.count = next;
  return out;
}

}  // namespace

TEST_CASE("confusion_at boundary behaviour", "[evalkit]") {
  std::vector<Prediction> perfect;
  for (int i = 0; i < 10; ++i) {
    Prediction p;
    p.true_label = i < 5 ? 1 : 0;
    p.p_abnormal = i < 5 ? 0.9 : 0.1;
    perfect.push_back(p);
  }
  for (double t : {0.2, 0.5, 0.8}) {
    const auto c = confusion_at(perfect, t);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
  }
  const auto all_pos = confusion_at(perfect, 0.0);
  CHECK(all_pos.fn == 0);
  CHECK(all_pos.tn == 0);
  CHECK(all_pos.tp + all_pos.fp == 10);
}

TEST_CASE("confusion_at matches an independent re-count", "[evalkit]") {
  Rng rng(3);
  const auto preds = random_predictions(rng, 200);
  for (double t : {0.1, 0.35, 0.5, 0.75, 0.9}) {
    const auto c = confusion_at(preds, t);
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& p : preds) {
      const bool pos = p.p_abnormal >= t;
      const bool truth = p.true_label == 1;
      tp += pos && truth;
      fp += pos && !truth;
      fn += !pos && truth;
      tn += !pos && !truth;
    }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.fn == fn);
    CHECK(c.tn == tn);
  }
}

TEST_CASE("confusion_at rejects empty input", "[evalkit]") {
  CHECK_THROWS_AS(confusion_at({}, 0.5), DataError);
}

TEST_CASE("published pixel-level table reproduces from its counts", "[evalkit]") {
  const ConfusionCounts c{19629, 22416, 5778, 28477};
  CHECK(paper_round2(dice(c)) == Catch::Approx(0.58));
  const auto m = metrics_from(c, 0.5);
  CHECK(paper_round2(*m.accuracy) == Catch::Approx(0.63));
  CHECK(paper_round2(*m.sensitivity) == Catch::Approx(0.77));
}

TEST_CASE("published region-level table reproduces from its counts", "[evalkit]") {
  const ConfusionCounts c{191, 105, 62, 105};
  CHECK(paper_round2(dice(c)) == Catch::Approx(0.70));
  const auto m = metrics_from(c, 0.5);
  CHECK(paper_round2(*m.sensitivity) == Catch::Approx(0.76));
  CHECK(paper_round2(*m.accuracy) == Catch::Approx(0.64));
}

TEST_CASE("perfect counts give all five metrics equal to one", "[evalkit]") {
  const auto m = metrics_from(ConfusionCounts{10, 0, 0, 10}, 0.5);
  CHECK(*m.accuracy == 1.0);
  CHECK(*m.ppv == 1.0);
  CHECK(*m.sensitivity == 1.0);
  CHECK(*m.specificity == 1.0);
  CHECK(*m.npv == 1.0);
}

TEST_CASE("zero denominators surface as undefined metrics", "[evalkit]") {
  const auto m = metrics_from(ConfusionCounts{0, 0, 5, 5}, 0.5);
  CHECK_FALSE(m.ppv.has_value());   // tp + fp == 0
  CHECK(m.npv.has_value());
  CHECK_THROWS_AS(metrics_from(ConfusionCounts{}, 0.5), DataError);
}

TEST_CASE("dice examples", "[evalkit]") {
  CHECK(dice(ConfusionCounts{5, 0, 0, 0}) == 1.0);
  CHECK_THROWS_AS(dice(ConfusionCounts{0, 0, 0, 9}), DataError);
}

TEST_CASE("roc endpoints and degenerate cases", "[evalkit]") {
  std::vector<Prediction> preds;
  for (int i = 0; i < 6; ++i) {
    Prediction p;
    p.true_label = i < 3 ? 1 : 0;
    p.p_abnormal = i < 3 ? 0.8 + 0.05 * i : 0.2 - 0.05 * i;
    preds.push_back(p);
  }
  const auto curve = roc_auc(preds);
  CHECK(curve.auc == 1.0);
  CHECK(curve.points.front().fpr == 0.0);
  CHECK(curve.points.front().tpr == 0.0);
  CHECK(curve.points.back().fpr == 1.0);
  CHECK(curve.points.back().tpr == 1.0);

  for (auto& p : preds) p.true_label = 1 - p.true_label;
  CHECK(roc_auc(preds).auc == 0.0);

  for (auto& p : preds) p.true_label = 1;
  CHECK_THROWS_AS(roc_auc(preds), DataError);
}

TEST_CASE("trapezoidal auc equals the pair-counting oracle", "[evalkit]") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto preds = random_predictions(rng, 50, trial % 2 == 0);
    std::size_t pos = 0;
    for (const auto& p : preds) pos += p.true_label;
    if (pos == 0 || pos == preds.size()) continue;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : preds) {
      scores.push_back(p.p_abnormal);
      labels.push_back(p.true_label);
    }
    const double ref = oracle::auc_pair_count(scores, labels);
    REQUIRE(std::abs(roc_auc(preds).auc - ref) <= 1e-12);
  }
}

TEST_CASE("auc is invariant under strictly monotone score transforms", "[evalkit]") {
  Rng rng(11);
  auto preds = random_predictions(rng, 80);
  const double base = roc_auc(preds).auc;
  auto cubed = preds;
  for (auto& p : cubed) p.p_abnormal = p.p_abnormal * p.p_abnormal * p.p_abnormal;
  CHECK(roc_auc(cubed).auc == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("threshold sweep keeps sensitivity and specificity monotone", "[evalkit]") {
  Rng rng(13);
  const auto preds = random_predictions(rng, 120);
  double prev_sens = 2.0, prev_spec = -1.0;
  for (int i = 1; i <= 9; ++i) {
    const auto m = metrics_from(confusion_at(preds, 0.1 * i), 0.1 * i);
    if (m.sensitivity) {
      CHECK(*m.sensitivity <= prev_sens + 1e-12);
      prev_sens = *m.sensitivity;
    }
    if (m.specificity) {
      CHECK(*m.specificity >= prev_spec - 1e-12);
      prev_spec = *m.specificity;
    }
  }
}

TEST_CASE("pixel overlap identical and disjoint masks", "[evalkit]") {
  std::vector<std::uint8_t> a(100, 0), b(100, 0);
  for (int i = 10; i < 30; ++i) a[i] = b[i] = 1;
  auto c = pixel_overlap(a, b);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);
  CHECK(dice(c) == 1.0);

  std::fill(b.begin(), b.end(), 0);
  for (int i = 50; i < 60; ++i) b[i] = 1;
  c = pixel_overlap(a, b);
  CHECK(c.tp == 0);
  CHECK(dice(c) == 0.0);
}

TEST_CASE("pixel overlap counts match a set-arithmetic oracle", "[evalkit]") {
  Rng rng(17);
  std::vector<std::uint8_t> a(500), b(500);
  for (auto& v : a) v = rng.real64() < 0.3 ? 1 : 0;
  for (auto& v : b) v = rng.real64() < 0.3 ? 1 : 0;
  const auto c = pixel_overlap(a, b);
  std::set<std::size_t> sa, sb;
  for (std::size_t i = 0; i < 500; ++i) {
    if (a[i]) sa.insert(i);
    if (b[i]) sb.insert(i);
  }
  std::vector<std::size_t> inter;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  CHECK(c.tp == inter.size());
  CHECK(c.fp == sa.size() - inter.size());
  CHECK(c.fn == sb.size() - inter.size());
  CHECK(c.total() == 500);
}

TEST_CASE("connected components on empty and corner-touching masks", "[evalkit]") {
  std::array<std::uint32_t, 3> dims{4, 4, 4};
  std::vector<std::uint8_t> mask(64, 0);
  CHECK(connected_components(mask, dims).count == 0);

  // voxels touching only at a corner: (0,0,0) and (1,1,1)
  mask[0] = 1;
  mask[(1 * 4 + 1) * 4 + 1] = 1;
  CHECK(connected_components(mask, dims).count == 1);
}

TEST_CASE("connected components match the flood-fill oracle", "[evalkit]") {
  Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    std::array<std::uint32_t, 3> dims{5 + static_cast<std::uint32_t>(rng.index(4)),
                                      5 + static_cast<std::uint32_t>(rng.index(4)),
                                      5 + static_cast<std::uint32_t>(rng.index(4))};
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    for (auto& v : mask) v = rng.real64() < 0.18 ? 1 : 0;
    const auto got = connected_components(mask, dims);
    const auto ref = flood_fill_oracle(mask, dims);
    REQUIRE(got.count == ref.count);
    REQUIRE(got.labels == ref.labels);
  }
}

TEST_CASE("region overlap reproduces the schematic cases", "[evalkit]") {
  std::array<std::uint32_t, 3> dims{10, 10, 10};
  std::vector<std::uint8_t> ann(1000, 0), sal(1000, 0);
  // annotation blob fully containing a smaller saliency blob
  for (std::uint32_t t = 2; t < 6; ++t)
    for (std::uint32_t y = 2; y < 6; ++y)
      for (std::uint32_t x = 2; x < 6; ++x) ann[(t * 10 + y) * 10 + x] = 1;
  sal[(3 * 10 + 3) * 10 + 3] = 1;
  auto c = region_overlap(sal, ann, dims);
  CHECK(c.tp == 1);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);

  // distant saliency blob instead
  std::fill(sal.begin(), sal.end(), 0);
  sal[(8 * 10 + 8) * 10 + 8] = 1;
  c = region_overlap(sal, ann, dims);
  CHECK(c.tp == 0);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
}

TEST_CASE("region overlap carries the caller-supplied TN through", "[evalkit]") {
  std::array<std::uint32_t, 3> dims{4, 4, 4};
  std::vector<std::uint8_t> ann(64, 0), sal(64, 0);
  ann[0] = sal[0] = 1;
  const auto c = region_overlap(sal, ann, dims, 105);
  CHECK(c.tn == 105);
  CHECK(c.tp == 1);
}

TEST_CASE("euclidean dilation of a single voxel", "[evalkit]") {
  std::array<std::uint32_t, 3> dims{7, 7, 7};
  std::vector<std::uint8_t> mask(343, 0);
  mask[(3 * 7 + 3) * 7 + 3] = 1;
  const auto d = dilate_mask(mask, dims, 2.0);
  std::size_t on = 0;
  for (auto v : d) on += v;
  CHECK(on == 33);  // |{offsets : dx^2+dy^2+dt^2 <= 4}|
}

TEST_CASE("paper rounding helper matches the published cells", "[evalkit]") {
  CHECK(paper_round2(0.754941) == Catch::Approx(0.76));
  CHECK(paper_round2(0.695811) == Catch::Approx(0.70));
  CHECK(paper_round2(0.582093) == Catch::Approx(0.58));
  CHECK(paper_round2(0.630485) == Catch::Approx(0.63));
  CHECK(paper_round2(0.772582) == Catch::Approx(0.77));
  CHECK(paper_round2(0.639309) == Catch::Approx(0.64));
}
