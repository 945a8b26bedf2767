#include "fishgrade/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

#include "fishgrade/error.hpp"

namespace fishgrade {

void ProbDistMaps::validate() const {
  if (prob.empty()) throw InputError("prob map is empty");
  for (float v : prob.values())
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("prob map value outside [0,1]");
  for (const auto& d : dist) {
    if (d.width() != prob.width() || d.height() != prob.height())
      throw InputError("dist map dims differ from prob map");
    for (float v : d.values())
      if (!(v >= 0.0f) || !std::isfinite(v)) throw InputError("dist map value negative or non-finite");
  }
  if (dist.size() < 3) throw InputError("dist maps need at least 3 rays");
}

void SegConfig::validate() const {
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) throw ConfigError("seg.prob_threshold", "must lie in (0,1)");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ConfigError("seg.nms_iou", "must lie in (0,1)");
  if (supersample < 1) throw ConfigError("seg.supersample", "must be >= 1");
  if (candidate_cap < 1) throw ConfigError("seg.candidate_cap", "must be >= 1");
  if (n_rays < 3) throw ConfigError("seg.n_rays", "must be >= 3");
}

void ReferenceSegConfig::validate() const {
  if (!(smoothing_sigma >= 0.0)) throw ConfigError("reference_seg.smoothing_sigma", "must be >= 0");
  if (!(foreground_threshold > 0.0 && foreground_threshold < 1.0))
    throw ConfigError("reference_seg.foreground_threshold", "must lie in (0,1)");
  if (min_area_px < 1) throw ConfigError("reference_seg.min_area_px", "must be >= 1");
  if (!(ray_step > 0.0 && ray_step <= 1.0)) throw ConfigError("reference_seg.ray_step", "must lie in (0,1]");
}

namespace {

std::vector<Point> ray_directions(int n) {
  std::vector<Point> dirs(n);
  for (int k = 0; k < n; ++k) dirs[k] = {std::cos(ray_angle(k, n)), std::sin(ray_angle(k, n))};
  return dirs;
}

struct CandidateOrder {
  bool operator()(const StarPolygon& a, const StarPolygon& b) const {
    if (a.score != b.score) return a.score > b.score;
    const double ay = std::round(a.center.y), by = std::round(b.center.y);
    if (ay != by) return ay < by;
    return std::round(a.center.x) < std::round(b.center.x);
  }
};

FloatGrid gaussian_blur(const FloatGrid& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  const int w = in.width(), h = in.height();
  FloatGrid tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  return out;
}

double bilinear(const FloatGrid& g, double x, double y) {
  const double fx = std::clamp(x, 0.0, g.width() - 1.0), fy = std::clamp(y, 0.0, g.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, g.width() - 1), y1 = std::min(y0 + 1, g.height() - 1);
  const double ax = fx - x0, ay = fy - y0;
  return (1 - ay) * ((1 - ax) * g.at(x0, y0) + ax * g.at(x1, y0)) +
         ay * ((1 - ax) * g.at(x0, y1) + ax * g.at(x1, y1));
}

double median_of(std::vector<float> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

ProbDistMaps render_maps(std::span<const StarPolygon> polygons, int width, int height, int n_rays) {
  ProbDistMaps maps{FloatGrid(width, height, 0.0f), std::vector<FloatGrid>(n_rays, FloatGrid(width, height, 0.0f))};
  const auto dirs = ray_directions(n_rays);
  Grid<std::uint8_t> taken(width, height, 0);
  for (const auto& poly : polygons) {
    const auto verts = polygon_from_rays(poly);
    const BBox bb = bounding_box(verts);
    const int y_lo = std::max(0, static_cast<int>(std::floor(bb.y0)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(bb.y1)));
    for (int y = y_lo; y <= y_hi; ++y) {
      const auto xs = row_crossings(verts, y);
      for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
        const int xb = std::max(0, static_cast<int>(std::ceil(xs[i])));
        const int xe = std::min(width, static_cast<int>(std::ceil(xs[i + 1])));
        for (int x = xb; x < xe; ++x) {
          if (taken.at(x, y)) continue;
          taken.at(x, y) = 1;
          maps.prob.at(x, y) = 1.0f;
          for (int k = 0; k < n_rays; ++k)
            maps.dist[k].at(x, y) = static_cast<float>(ray_to_boundary(verts, {double(x), double(y)}, dirs[k]));
        }
      }
    }
  }
  return maps;
}

std::vector<StarPolygon> candidates_from_maps(const ProbDistMaps& maps, double prob_threshold, std::size_t cap) {
  std::vector<StarPolygon> out;
  const int n = maps.n_rays();
  for (int y = 0; y < maps.height(); ++y)
    for (int x = 0; x < maps.width(); ++x) {
      const float p = maps.prob.at(x, y);
      if (!(p >= prob_threshold) || p <= 0.0f) continue;
      StarPolygon c;
      c.center = {double(x), double(y)};
      c.score = p;
      c.distances.resize(n);
      for (int k = 0; k < n; ++k) c.distances[k] = maps.dist[k].at(x, y);
      if (c.degenerate()) continue;
      out.push_back(std::move(c));
    }
  std::stable_sort(out.begin(), out.end(), CandidateOrder{});
  if (out.size() > cap) out.resize(cap);
  return out;
}

std::vector<StarPolygon> nms_polygons(std::vector<StarPolygon> candidates, double iou_threshold, int supersample) {
  std::stable_sort(candidates.begin(), candidates.end(), CandidateOrder{});

  // Kept polygons bucketed by bbox cell so each test only visits neighbours.
  constexpr double kCell = 64.0;
  auto cell_of = [](double v) { return static_cast<long>(std::floor(v / kCell)); };
  std::map<std::pair<long, long>, std::vector<std::size_t>> buckets;
  std::vector<PolygonRaster> kept_rasters;
  std::vector<StarPolygon> kept;

  for (auto& cand : candidates) {
    if (cand.degenerate()) continue;
    const BBox bb = bounding_box(cand);
    std::optional<PolygonRaster> raster;
    bool keep = true;
    std::vector<std::size_t> seen;
    for (long cy = cell_of(bb.y0); cy <= cell_of(bb.y1) && keep; ++cy)
      for (long cx = cell_of(bb.x0); cx <= cell_of(bb.x1) && keep; ++cx) {
        auto it = buckets.find({cx, cy});
        if (it == buckets.end()) continue;
        for (std::size_t idx : it->second) {
          if (std::find(seen.begin(), seen.end(), idx) != seen.end()) continue;
          seen.push_back(idx);
          if (!kept_rasters[idx].bbox().intersects(bb)) continue;
          if (!raster) raster.emplace(cand, supersample);
          if (raster->iou(kept_rasters[idx]) > iou_threshold) {
            keep = false;
            break;
          }
        }
      }
    if (!keep) continue;
    if (!raster) raster.emplace(cand, supersample);
    const std::size_t idx = kept.size();
    for (long cy = cell_of(bb.y0); cy <= cell_of(bb.y1); ++cy)
      for (long cx = cell_of(bb.x0); cx <= cell_of(bb.x1); ++cx) buckets[{cx, cy}].push_back(idx);
    kept_rasters.push_back(std::move(*raster));
    kept.push_back(std::move(cand));
  }
  return kept;
}

std::vector<StarPolygon> segment(const ProbDistMaps& maps, const SegConfig& config) {
  config.validate();
  return nms_polygons(candidates_from_maps(maps, config.prob_threshold, config.candidate_cap), config.nms_iou,
                      config.supersample);
}

NucleusCrop extract_crop(const MultiChannelImage& image, const StarPolygon& polygon, int margin_px) {
  const auto verts = polygon_from_rays(polygon);
  const BBox bb = bounding_box(verts);
  const int W = image.width(), H = image.height();
  if (bb.x1 < -0.5 || bb.y1 < -0.5 || bb.x0 > W - 0.5 || bb.y0 > H - 0.5)
    throw OutOfBoundsError("polygon lies outside the image");
  const int fx = static_cast<int>(std::floor(bb.x0)), fy = static_cast<int>(std::floor(bb.y0));
  const int x_begin = fx - margin_px;
  const int y_begin = fy - margin_px;
  const int x_end = x_begin + static_cast<int>(std::ceil(bb.x1 - fx)) + 2 * margin_px;
  const int y_end = y_begin + static_cast<int>(std::ceil(bb.y1 - fy)) + 2 * margin_px;
  const int x0 = std::max(0, x_begin), y0 = std::max(0, y_begin);
  const int x1 = std::min(W, x_end), y1 = std::min(H, y_end);
  if (x1 <= x0 || y1 <= y0) throw OutOfBoundsError("polygon crop is empty after clamping");

  NucleusCrop crop;
  crop.offset_x = x0;
  crop.offset_y = y0;
  crop.local_polygon = polygon.translated(-x0, -y0);
  crop.mask = rasterize_mask(polygon, x1 - x0, y1 - y0, {double(x0), double(y0)});
  crop.image = MultiChannelImage(x1 - x0, y1 - y0);
  for (Channel c : kAllChannels)
    for (int y = 0; y < y1 - y0; ++y)
      for (int x = 0; x < x1 - x0; ++x)
        if (crop.mask.at(x, y)) crop.image.at(c, x, y) = image.at(c, x + x0, y + y0);
  return crop;
}

ProbDistMaps predict_maps(const FloatGrid& dapi, const ReferenceSegConfig& config, int n_rays,
                          InteriorEdges interior) {
  const int w = dapi.width(), h = dapi.height();
  ProbDistMaps maps{FloatGrid(w, h, 0.0f), std::vector<FloatGrid>(n_rays, FloatGrid(w, h, 0.0f))};
  if (w == 0 || h == 0) return maps;
  const FloatGrid smooth = gaussian_blur(dapi, config.smoothing_sigma);

  // 4-connected foreground components.
  Grid<int> label(w, h, -1);
  std::vector<std::vector<std::pair<int, int>>> comps;
  std::vector<float> background;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (smooth.at(x, y) < config.foreground_threshold) {
        background.push_back(smooth.at(x, y));
        continue;
      }
      if (label.at(x, y) != -1) continue;
      std::vector<std::pair<int, int>> pix;
      std::deque<std::pair<int, int>> queue{{x, y}};
      label.at(x, y) = static_cast<int>(comps.size());
      while (!queue.empty()) {
        auto [px, py] = queue.front();
        queue.pop_front();
        pix.emplace_back(px, py);
        const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& d : nb) {
          const int nx = px + d[0], ny = py + d[1];
          if (!label.contains(nx, ny) || label.at(nx, ny) != -1) continue;
          if (smooth.at(nx, ny) < config.foreground_threshold) continue;
          label.at(nx, ny) = label.at(x, y);
          queue.emplace_back(nx, ny);
        }
      }
      comps.push_back(std::move(pix));
    }
  const double bg_level = median_of(std::move(background));
  const auto dirs = ray_directions(n_rays);
  const double step = config.ray_step;
  const double max_len = 4.0 * std::max(w, h);

  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    const auto& pix = comps[ci];
    if (static_cast<int>(pix.size()) < config.min_area_px) continue;
    std::vector<float> values;
    values.reserve(pix.size());
    for (auto [x, y] : pix) values.push_back(smooth.at(x, y));
    const double level = 0.5 * (median_of(values) + bg_level);
    const int own = static_cast<int>(ci);

    std::vector<float> min_dist(pix.size(), 0.0f);
    float comp_max = 0.0f;
    for (std::size_t pi = 0; pi < pix.size(); ++pi) {
      const auto [x, y] = pix[pi];
      if (smooth.at(x, y) < level) continue;
      bool valid = true;
      std::vector<float> d(n_rays, 0.0f);
      for (int k = 0; k < n_rays && valid; ++k) {
        double prev_t = 0.0, prev_v = smooth.at(x, y), t = 0.0;
        double hit = -1.0;
        while (t < max_len) {
          t += step;
          const double sx = x + t * dirs[k].x, sy = y + t * dirs[k].y;
          const int nx = static_cast<int>(std::lround(sx)), ny = static_cast<int>(std::lround(sy));
          if (!smooth.contains(nx, ny)) {
            const bool through_interior = (nx < 0 && interior.left) || (nx >= w && interior.right) ||
                                          (ny < 0 && interior.top) || (ny >= h && interior.bottom);
            if (through_interior) {
              valid = false;
              break;
            }
            // Image border: the outline stops at the raster edge.
            hit = prev_t + 0.5 * step;
            break;
          }
          if (label.at(nx, ny) >= 0 && label.at(nx, ny) != own) {
            hit = prev_t + 0.5 * step;
            break;
          }
          const double v = bilinear(smooth, sx, sy);
          if (v < level) {
            hit = prev_t + (prev_v - level) / (prev_v - v) * step;
            break;
          }
          prev_t = t;
          prev_v = v;
        }
        if (hit < 0.0) hit = max_len;
        d[k] = static_cast<float>(hit);
      }
      if (!valid) continue;
      for (int k = 0; k < n_rays; ++k) maps.dist[k].at(x, y) = d[k];
      min_dist[pi] = *std::min_element(d.begin(), d.end());
      comp_max = std::max(comp_max, min_dist[pi]);
    }
    if (comp_max <= 0.0f) continue;
    for (std::size_t pi = 0; pi < pix.size(); ++pi) {
      const auto [x, y] = pix[pi];
      maps.prob.at(x, y) = min_dist[pi] / comp_max;
    }
  }
  return maps;
}

Tensor prob_to_tensor(const ProbDistMaps& maps) {
  Tensor t({static_cast<std::uint32_t>(maps.height()), static_cast<std::uint32_t>(maps.width())});
  std::copy(maps.prob.values().begin(), maps.prob.values().end(), t.data.begin());
  return t;
}

Tensor dist_to_tensor(const ProbDistMaps& maps) {
  Tensor t({static_cast<std::uint32_t>(maps.n_rays()), static_cast<std::uint32_t>(maps.height()),
            static_cast<std::uint32_t>(maps.width())});
  auto it = t.data.begin();
  for (const auto& d : maps.dist) it = std::copy(d.values().begin(), d.values().end(), it);
  return t;
}

ProbDistMaps maps_from_tensors(const Tensor& prob, const Tensor& dist) {
  if (prob.rank() != 2) throw FormatError("prob tensor: expected rank 2 [H, W]");
  if (dist.rank() != 3) throw FormatError("dist tensor: expected rank 3 [R, H, W]");
  if (dist.dims[1] != prob.dims[0] || dist.dims[2] != prob.dims[1])
    throw FormatError("dist tensor: spatial dims differ from prob tensor");
  const int h = static_cast<int>(prob.dims[0]), w = static_cast<int>(prob.dims[1]);
  ProbDistMaps maps{FloatGrid(w, h), std::vector<FloatGrid>(dist.dims[0], FloatGrid(w, h))};
  std::copy(prob.data.begin(), prob.data.end(), maps.prob.storage().begin());
  const std::size_t plane = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  for (std::size_t k = 0; k < maps.dist.size(); ++k)
    std::copy(dist.data.begin() + static_cast<std::ptrdiff_t>(k * plane),
              dist.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane), maps.dist[k].storage().begin());
  maps.validate();
  return maps;
}

ProbDistMaps crop_maps(const ProbDistMaps& maps, int x0, int y0, int width, int height) {
  ProbDistMaps out{FloatGrid(width, height), std::vector<FloatGrid>(maps.dist.size(), FloatGrid(width, height))};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      out.prob.at(x, y) = maps.prob.at(x + x0, y + y0);
      for (std::size_t k = 0; k < maps.dist.size(); ++k) out.dist[k].at(x, y) = maps.dist[k].at(x + x0, y + y0);
    }
  return out;
}

}  // namespace fishgrade
