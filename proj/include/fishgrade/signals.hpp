#pragma once

#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "fishgrade/image.hpp"
#include "fishgrade/tensor_io.hpp"
#include "fishgrade/types.hpp"

namespace fishgrade {

struct DetectorConfig {
  double log_sigma = 1.5;
  double peak_threshold = 0.15;
  double cluster_merge_iou = 0.0;  // link boxes whose IoU exceeds this; 0 means any overlap
  int cluster_min_peaks = 3;
  double box_nms_iou = 0.5;
  double score_threshold = 0.5;

  int half_width() const;
  void validate() const;
};

// Laplacian-of-Gaussian spot finder on one fluorescence channel. Peaks are
// strict 8-neighbourhood maxima of the scale-normalised response; score is
// the response relative to a unit-amplitude spot of the same sigma.
std::vector<SignalBox> detect_blobs_log(const MultiChannelImage& crop, Channel channel,
                                        const DetectorConfig& config);

// Replace overlap-connected groups of >= cluster_min_peaks HER2 boxes by a
// single HER2Cluster box (union bbox, max score).
std::vector<SignalBox> merge_clusters(std::span<const SignalBox> her2, const DetectorConfig& config);

// Greedy NMS. Ties in score fall back to ascending (y0, x0, class).
std::vector<SignalBox> nms_boxes(std::vector<SignalBox> boxes, double iou_threshold, bool per_class);

struct AnchorTemplate {
  double w = 0, h = 0;
};

// Detection-head geometry: one cell per `stride` px, each cell carrying the
// same anchor templates. Cell (cx, cy) is centred at
// (cx * stride + (stride - 1) / 2, cy * stride + (stride - 1) / 2).
struct AnchorGrid {
  int stride = 4;
  std::vector<AnchorTemplate> anchors;

  Point cell_center(int cx, int cy) const;
  int cells_for(int pixels) const { return (pixels + stride - 1) / stride; }
};

// Raw head outputs. cls: [A*C, H, W] logits with channel a*C + c;
// box: [A*4, H, W] with channel a*4 + {tx, ty, tw, th}.
struct HeadMaps {
  Tensor cls;
  Tensor box;
};

std::vector<SignalBox> decode_anchors(const HeadMaps& head, const AnchorGrid& grid, double score_threshold);

// Inverse of decode_anchors for building head maps from known boxes. Each
// box is assigned to the cell containing its centre and the anchor with the
// best shape IoU; later boxes overwrite earlier ones on the same slot.
HeadMaps encode_anchors(std::span<const SignalBox> boxes, const AnchorGrid& grid, int crop_width,
                        int crop_height, float positive_logit = 12.0f);

// External detection heads for one crop, described by a JSON sidecar:
//   {"stride": 4, "anchors": [[w, h], ...],
//    "classes": ["HER2", "HER2Cluster", "CEP17"],
//    "cls": "heads_cls.fgt", "box": "heads_box.fgt"}
// or, for a whole slide, "nuclei": {"<id>": {"cls": ..., "box": ...}}.
struct ExternalHeads {
  std::filesystem::path descriptor;
  int nucleus_id = -1;  // -1 selects the top-level cls/box entries
};

struct ReferenceDetector {};
using SignalPredictor = std::variant<ReferenceDetector, ExternalHeads>;

std::pair<HeadMaps, AnchorGrid> load_external_heads(const ExternalHeads& source);

// Full per-crop detection. Output boxes are clamped to the crop.
std::vector<SignalBox> detect_signals(const MultiChannelImage& crop, const SignalPredictor& predictor,
                                      const DetectorConfig& config);

}  // namespace fishgrade
