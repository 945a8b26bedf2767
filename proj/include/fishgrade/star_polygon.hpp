#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fishgrade/grid.hpp"

namespace fishgrade {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool intersects(const BBox& o) const noexcept {
    return x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
  }
};

// Nucleus outline: ray k leaves the center at angle 2*pi*k/n and ends at
// distance distances[k]. Angles increase from +x towards +y (downward).
struct StarPolygon {
  Point center;
  std::vector<double> distances;
  double score = 1.0;

  int n_rays() const noexcept { return static_cast<int>(distances.size()); }
  bool degenerate() const noexcept;
  Point vertex(int k) const;

  // Slide-space copy: center scaled about the block grid, rays scaled.
  StarPolygon scaled(double factor, double center_offset) const;
  StarPolygon translated(double dx, double dy) const;

  friend bool operator==(const StarPolygon&, const StarPolygon&) = default;
};

double ray_angle(int k, int n);

// Vertex list in ray order. Throws DegeneratePolygonError when fewer than
// three distances are strictly positive.
std::vector<Point> polygon_from_rays(Point center, std::span<const double> distances);
std::vector<Point> polygon_from_rays(const StarPolygon& p);

BBox bounding_box(std::span<const Point> vertices);
BBox bounding_box(const StarPolygon& p);

double shoelace_area(std::span<const Point> vertices);

// Even-odd test; points exactly on a downward-crossing edge count as inside
// on the left side, matching the span rasterizer below.
bool point_in_polygon(std::span<const Point> vertices, Point p);

// Sorted x coordinates where the horizontal line at `y` crosses the outline.
// Inside intervals are [xs[0], xs[1]), [xs[2], xs[3]), ...
std::vector<double> row_crossings(std::span<const Point> vertices, double y);

// Distance along unit direction `dir` from `origin` to the first outline
// crossing (ray-segment intersection). Returns 0 when the ray misses.
double ray_to_boundary(std::span<const Point> vertices, Point origin, Point dir);

// Polygon sampled on the global lattice ((i + 0.5) / s, (j + 0.5) / s).
// Two rasters at the same factor share a grid, so overlap is exact integer
// arithmetic over sample index ranges.
class PolygonRaster {
 public:
  PolygonRaster() = default;
  PolygonRaster(const StarPolygon& polygon, int supersample);

  std::int64_t area() const noexcept { return area_; }
  const BBox& bbox() const noexcept { return bbox_; }
  int supersample() const noexcept { return supersample_; }

  std::int64_t intersection(const PolygonRaster& other) const;
  double iou(const PolygonRaster& other) const;

 private:
  struct Span {
    std::int64_t begin, end;
  };
  BBox bbox_{};
  int supersample_ = 1;
  std::int64_t row0_ = 0;
  std::int64_t n_rows_ = 0;
  std::vector<std::uint32_t> row_start_;  // n_rows_ + 1 offsets into spans_
  std::vector<Span> spans_;
  std::int64_t area_ = 0;
};

// Rasterized IoU on a shared supersampled grid; 0 without rasterizing when
// bounding boxes are disjoint. Symmetric, iou(a, a) == 1.
double polygon_iou(const StarPolygon& a, const StarPolygon& b, int supersample = 4);

// Pixels of a width x height grid at `origin` whose centers lie inside.
Grid<std::uint8_t> rasterize_mask(const StarPolygon& polygon, int width, int height,
                                  Point origin = {});

}  // namespace fishgrade
