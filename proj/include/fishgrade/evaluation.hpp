#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fishgrade/scoring.hpp"
#include "fishgrade/star_polygon.hpp"
#include "fishgrade/types.hpp"

namespace fishgrade {

struct GroundTruth;
struct SlideReport;

struct RankedMatch {
  std::size_t pred = 0;  // index into the prediction list
  double score = 0.0;
  bool tp = false;
  int gt = -1;           // matched ground-truth index, -1 for FP
  double iou = 0.0;      // best IoU seen against unmatched GT
};

struct MatchResult {
  std::vector<RankedMatch> ranked;  // descending score, ties by input order
  int n_gt = 0;
  int fn = 0;
  double iou_threshold = 0.5;

  int tp() const;
  int fp() const;
};

// Greedy matching: each prediction in rank order takes its best-IoU unmatched
// GT when that IoU reaches the threshold.
MatchResult match_detections(std::span<const double> scores, int n_gt,
                             const std::function<double(std::size_t pred, std::size_t gt)>& iou,
                             double iou_threshold);

MatchResult match_polygons(std::span<const StarPolygon> preds, std::span<const StarPolygon> gts,
                           double iou_threshold, int supersample = 4);
MatchResult match_boxes(std::span<const SignalBox> preds, std::span<const Box> gts, double iou_threshold);

struct PrecisionRecall {
  std::optional<double> precision;  // nullopt when undefined
  std::optional<double> recall;
};

// No predictions and no GT counts as (1, 1); other zero denominators are
// undefined.
PrecisionRecall precision_recall(const MatchResult& m);

// All-point interpolated AP: sum over recall steps of the step width times
// the best precision at that recall or beyond. Undefined without GT.
std::optional<double> average_precision(const MatchResult& m);

struct ClassMetrics {
  SignalClass cls = SignalClass::Her2;
  int n_gt = 0;
  int n_pred = 0;
  int tp = 0;
  std::optional<double> precision, recall, ap;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  double nucleus_iou = 0.5;
  double signal_iou = 0.5;
  int nucleus_gt = 0;
  int nucleus_pred = 0;
  int nucleus_tp = 0;
  std::optional<double> nucleus_precision, nucleus_recall;
  std::vector<ClassMetrics> signals;  // HER2, HER2Cluster, CEP17
  std::optional<double> mean_ap;      // over classes with GT
  HerStatus predicted_status = HerStatus::Indeterminate;
  HerStatus true_status = HerStatus::Indeterminate;
  bool status_agrees = false;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct EvalConfig {
  double nucleus_iou = 0.5;
  double signal_iou = 0.5;
  int supersample = 4;
};

// Nucleus polygons against GT polygons; signal boxes pooled over the slide
// per class, taken from nuclei whose machine class is gradable.
MetricsReport evaluate_slide(const SlideReport& report, const GroundTruth& truth, const EvalConfig& config = {});

}  // namespace fishgrade
