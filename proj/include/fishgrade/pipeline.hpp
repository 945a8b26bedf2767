#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fishgrade/config.hpp"
#include "fishgrade/image.hpp"
#include "fishgrade/report.hpp"
#include "fishgrade/simulator.hpp"

namespace fishgrade {

// Block-mean pooling; edge blocks average the pixels they actually cover.
MultiChannelImage downscale(const MultiChannelImage& image, int factor);

struct TileSpec {
  int x = 0, y = 0, width = 0, height = 0;
  friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

// Origins 0, stride, 2*stride, ... per axis; the last origin is pulled back
// to max(0, dim - tile). Row-major order.
std::vector<int> tile_origins(int dim, int tile, int overlap);
std::vector<TileSpec> tile_image(int width, int height, int tile, int overlap);

// Global polygon NMS over polygons already in slide coordinates.
std::vector<StarPolygon> stitch_nuclei(std::vector<StarPolygon> polygons, double iou_threshold, int supersample = 4);

// Segmentation stage alone: downscale, tile, predict, stitch, and map back
// to slide coordinates. Polygons come back in row-major centre order.
std::vector<StarPolygon> segment_slide(const MultiChannelImage& image, const PipelineConfig& config);

struct RunOptions {
  std::string input_sha256;
  unsigned threads = 0;  // 0 = hardware concurrency
  std::function<void(double)> progress;
  const GroundTruth* truth = nullptr;  // adds metrics when set
};

// Per-nucleus stages over known polygons (slide coordinates, report order):
// crop, signals, classifier, then grading. `signals`, when given, replaces
// detection with one slide-coordinate list per polygon.
SlideReport grade_polygons(const MultiChannelImage& image, const std::vector<StarPolygon>& polygons,
                           const PipelineConfig& config, const RunOptions& options = {},
                           const std::vector<std::vector<SignalBox>>* signals = nullptr);

SlideReport run_pipeline(const MultiChannelImage& image, const PipelineConfig& config, const RunOptions& options = {});

}  // namespace fishgrade
