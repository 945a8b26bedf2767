#include <doctest.h>

#include <numeric>

#include "fishgrade/evaluation.hpp"
#include "fishgrade/report.hpp"
#include "fishgrade/rng.hpp"
#include "oracles.hpp"

using namespace fishgrade;

namespace {

SignalBox pred(double x0, double x1, double score) { return {SignalClass::Her2, {x0, 0, x1, 10}, score}; }

MatchResult ranked(const std::vector<bool>& tps, int n_gt) {
  MatchResult m;
  m.n_gt = n_gt;
  int tp = 0;
  for (std::size_t i = 0; i < tps.size(); ++i) {
    m.ranked.push_back({i, 1.0 - 0.001 * i, tps[i], tps[i] ? tp : -1, 0});
    tp += tps[i];
  }
  m.fn = n_gt - tp;
  return m;
}

// Report whose records are the ground truth itself.
SlideReport report_from_truth(const GroundTruth& gt) {
  SlideReport r;
  r.slide = {gt.width, gt.height, ""};
  for (std::size_t i = 0; i < gt.nuclei.size(); ++i) {
    NucleusRecord rec;
    rec.id = static_cast<int>(i);
    rec.polygon = gt.nuclei[i].polygon;
    rec.classifier.cls = gt.nuclei[i].cls;
    rec.classifier.source = "logits";
    for (const auto& s : gt.nuclei[i].signals) rec.signals.push_back({s.cls, s.box, 1.0});
    r.nuclei.push_back(rec);
  }
  // GT cluster copies are exact; score clusters the same way
  r.config.scoring.cluster.source = ClusterCopyRule::ReferenceSource::Fixed;
  regrade(r);
  return r;
}

}  // namespace

TEST_CASE("match: exact, empty, hand-enumerated greedy case") {
  const std::vector<Box> gts = {{0, 0, 10, 10}, {6, 0, 16, 10}};
  const std::vector<SignalBox> exact = {pred(0, 10, 0.5), pred(6, 16, 0.4)};
  auto m = match_boxes(exact, gts, 0.5);
  CHECK(m.tp() == 2);
  CHECK(m.fn == 0);

  m = match_boxes({}, gts, 0.5);
  CHECK(m.fn == 2);
  CHECK(m.ranked.empty());

  // p0 ties between both GTs (IoU 7/13 each) and takes the first; p1 then
  // only sees GT 1 at IoU 0.25; p2 takes GT 1.
  const std::vector<SignalBox> three = {pred(3, 13, 0.9), pred(0, 10, 0.8), pred(6, 16, 0.7)};
  m = match_boxes(three, gts, 0.5);
  REQUIRE(m.ranked.size() == 3);
  CHECK(m.ranked[0].tp);
  CHECK(m.ranked[0].gt == 0);
  CHECK_FALSE(m.ranked[1].tp);
  CHECK(m.ranked[1].iou == doctest::Approx(0.25));
  CHECK(m.ranked[2].tp);
  CHECK(m.ranked[2].gt == 1);
  CHECK(m.fn == 0);
}

TEST_CASE("match: random cases against exhaustive greedy") {
  Rng rng(14);
  for (int t = 0; t < 300; ++t) {
    std::vector<SignalBox> preds;
    std::vector<Box> gts;
    for (int i = 0, n = static_cast<int>(rng.uniform_int(0, 12)); i < n; ++i) {
      const double x = rng.uniform(0, 30), y = rng.uniform(0, 30);
      gts.push_back({x, y, x + 6, y + 6});
    }
    for (int i = 0, n = static_cast<int>(rng.uniform_int(0, 15)); i < n; ++i) {
      const double x = rng.uniform(0, 30), y = rng.uniform(0, 30);
      preds.push_back({SignalClass::Her2, {x, y, x + 6, y + 6}, std::round(rng.uniform() * 5) / 5});
    }
    const auto m = match_boxes(preds, gts, 0.3);
    // oracle: stable descending score, each pred scans all GTs
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a].score > preds[b].score; });
    std::vector<bool> used(gts.size(), false);
    REQUIRE(m.ranked.size() == preds.size());
    int tp = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      int best = -1;
      double best_iou = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double v = oracle::rect_iou(preds[order[r]].box, gts[g]);
        if (v > best_iou) best_iou = v, best = static_cast<int>(g);
      }
      const bool hit = best >= 0 && best_iou >= 0.3;
      if (hit) used[static_cast<std::size_t>(best)] = true, ++tp;
      CHECK(m.ranked[r].pred == order[r]);
      CHECK(m.ranked[r].tp == hit);
      if (hit) CHECK(m.ranked[r].gt == best);
    }
    CHECK(m.fn == static_cast<int>(gts.size()) - tp);
  }
}

TEST_CASE("precision_recall") {
  auto pr = precision_recall(ranked({true, true}, 2));
  CHECK(*pr.precision == 1.0);
  CHECK(*pr.recall == 1.0);
  pr = precision_recall(ranked({}, 5));
  CHECK_FALSE(pr.precision.has_value());
  CHECK(*pr.recall == 0.0);
  pr = precision_recall(ranked({true, false, true, true}, 5));
  CHECK(*pr.precision == 0.75);
  CHECK(*pr.recall == 0.6);
  pr = precision_recall(ranked({}, 0));
  CHECK(*pr.precision == 1.0);
  CHECK(*pr.recall == 1.0);
  pr = precision_recall(ranked({false}, 0));
  CHECK(*pr.precision == 0.0);
  CHECK_FALSE(pr.recall.has_value());
}

TEST_CASE("average_precision: hand-derived values") {
  CHECK(*average_precision(ranked({true, true, true}, 3)) == 1.0);
  CHECK(*average_precision(ranked({false, false}, 2)) == 0.0);
  // recall 0.5 at p=1, recall 1.0 at p=2/3: 0.5 + 1/3
  const double want = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
  CHECK(std::abs(oracle::average_precision({true, false, true}, 2) - want) < 1e-12);
  CHECK(std::abs(*average_precision(ranked({true, false, true}, 2)) - 0.8333333333333334) < 1e-9);
  CHECK_FALSE(average_precision(ranked({true}, 0)).has_value());
  // missing GT caps AP at recall
  CHECK(*average_precision(ranked({true}, 4)) == 0.25);
}

TEST_CASE("average_precision: random sequences against the step oracle") {
  Rng rng(77);
  for (int t = 0; t < 1000; ++t) {
    const int n = static_cast<int>(rng.uniform_int(0, 30));
    std::vector<bool> tps;
    int tp = 0;
    for (int i = 0; i < n; ++i) tp += tps.emplace_back(rng.bernoulli(0.5));
    const int n_gt = tp + static_cast<int>(rng.uniform_int(0, 5));
    if (n_gt == 0) continue;
    const double got = *average_precision(ranked(tps, n_gt));
    CHECK(got == oracle::average_precision(tps, n_gt));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("evaluate_slide: output equal to truth, and empty output") {
  SimConfig sc = SimConfig::noiseless();
  sc.mix = {0.3, 0.3, 0.4, 0.0};
  const auto slide = simulate_slide(sc, 3);
  const auto r = report_from_truth(slide.truth);
  const auto m = evaluate_slide(r, slide.truth);
  CHECK(*m.nucleus_precision == 1.0);
  CHECK(*m.nucleus_recall == 1.0);
  for (const auto& c : m.signals)
    if (c.n_gt > 0) {
      CHECK(*c.precision == 1.0);
      CHECK(*c.recall == 1.0);
      CHECK(*c.ap == 1.0);
    }
  CHECK(*m.mean_ap == 1.0);
  CHECK(m.status_agrees);
  CHECK(m.true_status == slide.truth.status);

  SlideReport empty;
  empty.slide = {slide.truth.width, slide.truth.height, ""};
  regrade(empty);
  const auto e = evaluate_slide(empty, slide.truth);
  CHECK(*e.nucleus_recall == 0.0);
  CHECK_FALSE(e.nucleus_precision.has_value());
  for (const auto& c : e.signals)
    if (c.n_gt > 0) CHECK(*c.recall == 0.0);
  CHECK(e.predicted_status == HerStatus::Indeterminate);
  CHECK_FALSE(e.status_agrees);
}

TEST_CASE("evaluate_slide: deterministic") {
  const auto slide = simulate_slide(SimConfig{}, 6);
  const auto r = report_from_truth(slide.truth);
  CHECK(evaluate_slide(r, slide.truth) == evaluate_slide(r, slide.truth));
}
