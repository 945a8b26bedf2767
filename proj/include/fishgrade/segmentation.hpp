#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fishgrade/grid.hpp"
#include "fishgrade/image.hpp"
#include "fishgrade/star_polygon.hpp"
#include "fishgrade/tensor_io.hpp"

namespace fishgrade {

// Dense detector output: object probability plus one radial-distance grid
// per ray, all at the same resolution.
struct ProbDistMaps {
  FloatGrid prob;
  std::vector<FloatGrid> dist;

  int width() const noexcept { return prob.width(); }
  int height() const noexcept { return prob.height(); }
  int n_rays() const noexcept { return static_cast<int>(dist.size()); }
  void validate() const;
};

struct SegConfig {
  double prob_threshold = 0.5;
  double nms_iou = 0.4;
  int supersample = 4;
  std::size_t candidate_cap = 100000;
  int n_rays = 32;

  void validate() const;
};

// Ground-truth renderer: prob is 1 where a pixel centre lies inside a
// polygon (earlier polygons win overlaps), dist holds exact ray-to-outline
// distances of the containing polygon.
ProbDistMaps render_maps(std::span<const StarPolygon> polygons, int width, int height, int n_rays);

// One candidate per pixel with prob >= threshold (degenerate ray sets are
// skipped), sorted by descending score with ties by row-major index, and
// truncated to `cap`.
std::vector<StarPolygon> candidates_from_maps(const ProbDistMaps& maps, double prob_threshold,
                                              std::size_t cap = 100000);

// Greedy polygon NMS: descending score, ties by ascending row-major index
// of the rounded centre; a candidate is kept iff its IoU with every kept
// polygon is <= iou_threshold. Output is in keep order.
std::vector<StarPolygon> nms_polygons(std::vector<StarPolygon> candidates, double iou_threshold,
                                      int supersample = 4);

std::vector<StarPolygon> segment(const ProbDistMaps& maps, const SegConfig& config);

struct NucleusCrop {
  MultiChannelImage image;   // channels zeroed outside the polygon
  Grid<std::uint8_t> mask;   // 1 inside the polygon
  int offset_x = 0;          // slide coordinates of crop pixel (0, 0)
  int offset_y = 0;
  StarPolygon local_polygon; // polygon in crop coordinates
};

NucleusCrop extract_crop(const MultiChannelImage& image, const StarPolygon& polygon, int margin_px);

// Reference predictor standing in for a trained dense detector: smoothed
// DAPI is split into connected foreground components; rays are marched to
// each component's half-maximum outline with sub-pixel crossing, and prob
// is the min ray distance normalised per component. Rays leaving the raster
// through an edge flagged as interior invalidate the pixel (prob = 0), so
// only nuclei whole inside a tile produce candidates.
struct ReferenceSegConfig {
  double smoothing_sigma = 1.0;
  double foreground_threshold = 0.15;
  int min_area_px = 20;
  double ray_step = 0.5;

  void validate() const;
};

struct InteriorEdges {
  bool left = false, top = false, right = false, bottom = false;
};

ProbDistMaps predict_maps(const FloatGrid& dapi, const ReferenceSegConfig& config, int n_rays,
                          InteriorEdges interior = {});

// Map file I/O: prob as a rank-2 [H, W] tensor, dist as rank-3 [R, H, W].
Tensor prob_to_tensor(const ProbDistMaps& maps);
Tensor dist_to_tensor(const ProbDistMaps& maps);
ProbDistMaps maps_from_tensors(const Tensor& prob, const Tensor& dist);
ProbDistMaps crop_maps(const ProbDistMaps& maps, int x0, int y0, int width, int height);

}  // namespace fishgrade
