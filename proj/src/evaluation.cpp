#include "fishgrade/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "fishgrade/report.hpp"
#include "fishgrade/simulator.hpp"

namespace fishgrade {

int MatchResult::tp() const {
  return static_cast<int>(std::count_if(ranked.begin(), ranked.end(), [](const RankedMatch& r) { return r.tp; }));
}

int MatchResult::fp() const { return static_cast<int>(ranked.size()) - tp(); }

MatchResult match_detections(std::span<const double> scores, int n_gt,
                             const std::function<double(std::size_t, std::size_t)>& iou, double iou_threshold) {
  MatchResult m;
  m.n_gt = n_gt;
  m.iou_threshold = iou_threshold;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> used(static_cast<std::size_t>(std::max(n_gt, 0)), false);
  for (std::size_t p : order) {
    RankedMatch r{p, scores[p], false, -1, 0.0};
    int best = -1;
    for (int g = 0; g < n_gt; ++g) {
      if (used[g]) continue;
      const double v = iou(p, static_cast<std::size_t>(g));
      if (best < 0 || v > r.iou) {
        r.iou = v;
        best = g;
      }
    }
    if (best >= 0 && r.iou >= iou_threshold) {
      used[best] = true;
      r.tp = true;
      r.gt = best;
    }
    m.ranked.push_back(r);
  }
  m.fn = n_gt - m.tp();
  return m;
}

MatchResult match_polygons(std::span<const StarPolygon> preds, std::span<const StarPolygon> gts, double iou_threshold,
                           int supersample) {
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(p.score);
  // Rasterise each polygon once; IoU is then a span merge.
  std::vector<PolygonRaster> pr, gr;
  for (const auto& p : preds) pr.emplace_back(p, supersample);
  for (const auto& g : gts) gr.emplace_back(g, supersample);
  return match_detections(
      scores, static_cast<int>(gts.size()), [&](std::size_t p, std::size_t g) { return pr[p].iou(gr[g]); },
      iou_threshold);
}

MatchResult match_boxes(std::span<const SignalBox> preds, std::span<const Box> gts, double iou_threshold) {
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(p.score);
  return match_detections(
      scores, static_cast<int>(gts.size()), [&](std::size_t p, std::size_t g) { return box_iou(preds[p].box, gts[g]); },
      iou_threshold);
}

PrecisionRecall precision_recall(const MatchResult& m) {
  const int tp = m.tp(), fp = m.fp();
  if (m.ranked.empty() && m.n_gt == 0) return {1.0, 1.0};
  PrecisionRecall pr;
  if (tp + fp > 0) pr.precision = double(tp) / double(tp + fp);
  if (tp + m.fn > 0) pr.recall = double(tp) / double(tp + m.fn);
  return pr;
}

std::optional<double> average_precision(const MatchResult& m) {
  if (m.n_gt <= 0) return std::nullopt;
  const std::size_t n = m.ranked.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m.ranked[i].tp) ++tp;
    precision[i] = double(tp) / double(i + 1);
    recall[i] = double(tp) / double(m.n_gt);
  }
  // Backward running max gives the precision envelope.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.ranked[i].tp) continue;
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

MetricsReport evaluate_slide(const SlideReport& report, const GroundTruth& truth, const EvalConfig& config) {
  MetricsReport out;
  out.nucleus_iou = config.nucleus_iou;
  out.signal_iou = config.signal_iou;

  std::vector<StarPolygon> preds, gts;
  for (const auto& r : report.nuclei) preds.push_back(r.polygon);
  for (const auto& g : truth.nuclei) gts.push_back(g.polygon);
  const auto nm = match_polygons(preds, gts, config.nucleus_iou, config.supersample);
  const auto npr = precision_recall(nm);
  out.nucleus_gt = nm.n_gt;
  out.nucleus_pred = static_cast<int>(preds.size());
  out.nucleus_tp = nm.tp();
  out.nucleus_precision = npr.precision;
  out.nucleus_recall = npr.recall;

  double ap_sum = 0.0;
  int ap_count = 0;
  for (SignalClass c : kAllSignalClasses) {
    std::vector<SignalBox> p;
    std::vector<Box> g;
    for (const auto& r : report.nuclei)
      if (r.error.empty() && is_gradable(r.machine_class()))
        for (const auto& s : r.signals)
          if (s.cls == c) p.push_back(s);
    for (const auto& n : truth.nuclei)
      for (const auto& s : n.signals)
        if (s.cls == c) g.push_back(s.box);
    const auto m = match_boxes(p, g, config.signal_iou);
    const auto pr = precision_recall(m);
    ClassMetrics cm{c, m.n_gt, static_cast<int>(p.size()), m.tp(), pr.precision, pr.recall, average_precision(m)};
    if (cm.ap) {
      ap_sum += *cm.ap;
      ++ap_count;
    }
    out.signals.push_back(cm);
  }
  if (ap_count > 0) out.mean_ap = ap_sum / ap_count;
  out.predicted_status = report.status.status;
  out.true_status = truth.status;
  out.status_agrees = out.predicted_status == out.true_status;
  return out;
}

}  // namespace fishgrade
