#include "fishgrade/star_polygon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fishgrade/error.hpp"

namespace fishgrade {

double ray_angle(int k, int n) { return 2.0 * std::numbers::pi * k / n; }

bool StarPolygon::degenerate() const noexcept {
  int positive = 0;
  for (double d : distances)
    if (d > 0.0) ++positive;
  return positive < 3;
}

Point StarPolygon::vertex(int k) const {
  const double a = ray_angle(k, n_rays());
  return {center.x + distances[k] * std::cos(a), center.y + distances[k] * std::sin(a)};
}

StarPolygon StarPolygon::scaled(double factor, double center_offset) const {
  StarPolygon out = *this;
  out.center = {center.x * factor + center_offset, center.y * factor + center_offset};
  for (double& d : out.distances) d *= factor;
  return out;
}

StarPolygon StarPolygon::translated(double dx, double dy) const {
  StarPolygon out = *this;
  out.center.x += dx;
  out.center.y += dy;
  return out;
}

std::vector<Point> polygon_from_rays(Point center, std::span<const double> distances) {
  const int n = static_cast<int>(distances.size());
  int positive = 0;
  for (double d : distances) {
    if (d < 0.0 || !std::isfinite(d)) throw DegeneratePolygonError("ray distance must be finite and >= 0");
    if (d > 0.0) ++positive;
  }
  if (n < 3 || positive < 3)
    throw DegeneratePolygonError("star polygon needs at least 3 positive ray distances");
  std::vector<Point> v(n);
  for (int k = 0; k < n; ++k) {
    const double a = ray_angle(k, n);
    v[k] = {center.x + distances[k] * std::cos(a), center.y + distances[k] * std::sin(a)};
  }
  return v;
}

std::vector<Point> polygon_from_rays(const StarPolygon& p) {
  return polygon_from_rays(p.center, p.distances);
}

BBox bounding_box(std::span<const Point> vertices) {
  BBox b{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
         std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (const Point& p : vertices) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

BBox bounding_box(const StarPolygon& p) {
  // Include the center so degenerate-ish polygons still get a sane box.
  BBox b{p.center.x, p.center.y, p.center.x, p.center.y};
  for (int k = 0; k < p.n_rays(); ++k) {
    const Point v = p.vertex(k);
    b.x0 = std::min(b.x0, v.x);
    b.y0 = std::min(b.y0, v.y);
    b.x1 = std::max(b.x1, v.x);
    b.y1 = std::max(b.y1, v.y);
  }
  return b;
}

double shoelace_area(std::span<const Point> v) {
  double s = 0.0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return std::abs(s) * 0.5;
}

std::vector<double> row_crossings(std::span<const Point> v, double y) {
  std::vector<double> xs;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

bool point_in_polygon(std::span<const Point> v, Point p) {
  bool inside = false;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x <= p.x) inside = !inside;
    }
  }
  return inside;
}

double ray_to_boundary(std::span<const Point> v, Point o, Point d) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % n];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double denom = d.x * ey - d.y * ex;
    if (std::abs(denom) < 1e-15) continue;
    const double ax = a.x - o.x, ay = a.y - o.y;
    const double t = (ax * ey - ay * ex) / denom;
    const double s = (ax * d.y - ay * d.x) / denom;
    if (t > 1e-12 && s >= -1e-12 && s <= 1.0 + 1e-12) best = std::min(best, t);
  }
  return std::isfinite(best) ? best : 0.0;
}

namespace {

// First lattice index whose sample (i + 0.5) / s is >= x.
std::int64_t first_sample_at_or_after(double x, int s) {
  return static_cast<std::int64_t>(std::ceil(x * s - 0.5));
}

}  // namespace

PolygonRaster::PolygonRaster(const StarPolygon& polygon, int supersample)
    : supersample_(std::max(1, supersample)) {
  const auto verts = polygon_from_rays(polygon);
  bbox_ = bounding_box(verts);
  const int s = supersample_;
  row0_ = first_sample_at_or_after(bbox_.y0, s);
  n_rows_ = std::max<std::int64_t>(0, first_sample_at_or_after(bbox_.y1, s) + 1 - row0_);
  const auto rows = static_cast<std::size_t>(n_rows_);

  // Edge-driven scanline: each edge contributes one crossing to every sample
  // row it spans, with the same half-open test as row_crossings. Two passes
  // (count, then fill) keep crossings grouped by row without a global sort.
  thread_local std::vector<std::uint32_t> offset;
  thread_local std::vector<double> xs;
  offset.assign(rows + 1, 0);
  const std::size_t n = verts.size();
  auto row_range = [&](const Point& a, const Point& b) {
    const double lo = std::min(a.y, b.y), hi = std::max(a.y, b.y);
    const std::int64_t r_lo = std::max(row0_, first_sample_at_or_after(lo, s) - 1);
    const std::int64_t r_hi = std::min(row0_ + n_rows_ - 1, first_sample_at_or_after(hi, s) + 1);
    return std::pair{r_lo, r_hi};
  };
  auto sample_y = [s](std::int64_t r) { return (static_cast<double>(r) + 0.5) / s; };
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = verts[i];
    const Point& b = verts[(i + 1) % n];
    if (a.y == b.y) continue;
    const auto [r_lo, r_hi] = row_range(a, b);
    for (std::int64_t r = r_lo; r <= r_hi; ++r) {
      const double y = sample_y(r);
      if ((a.y > y) != (b.y > y)) ++offset[static_cast<std::size_t>(r - row0_) + 1];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) offset[r + 1] += offset[r];
  xs.resize(offset[rows]);
  std::vector<std::uint32_t> cursor(offset.begin(), offset.end() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = verts[i];
    const Point& b = verts[(i + 1) % n];
    if (a.y == b.y) continue;
    const auto [r_lo, r_hi] = row_range(a, b);
    for (std::int64_t r = r_lo; r <= r_hi; ++r) {
      const double y = sample_y(r);
      if ((a.y > y) != (b.y > y))
        xs[cursor[static_cast<std::size_t>(r - row0_)]++] = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
    }
  }
  row_start_.assign(rows + 1, 0);
  spans_.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    row_start_[r] = static_cast<std::uint32_t>(spans_.size());
    const auto first = xs.begin() + offset[r], last = xs.begin() + offset[r + 1];
    std::sort(first, last);
    for (auto it = first; it + 1 < last; it += 2) {
      const std::int64_t b = first_sample_at_or_after(*it, s);
      const std::int64_t e = first_sample_at_or_after(*(it + 1), s);
      if (e > b) {
        spans_.push_back({b, e});
        area_ += e - b;
      }
    }
  }
  row_start_[rows] = static_cast<std::uint32_t>(spans_.size());
}

std::int64_t PolygonRaster::intersection(const PolygonRaster& o) const {
  if (!bbox_.intersects(o.bbox_)) return 0;
  const std::int64_t lo = std::max(row0_, o.row0_);
  const std::int64_t hi = std::min(row0_ + n_rows_, o.row0_ + o.n_rows_);
  std::int64_t total = 0;
  for (std::int64_t r = lo; r < hi; ++r) {
    const auto ra = static_cast<std::size_t>(r - row0_), rb = static_cast<std::size_t>(r - o.row0_);
    std::size_t i = row_start_[ra], j = o.row_start_[rb];
    const std::size_t ie = row_start_[ra + 1], je = o.row_start_[rb + 1];
    while (i < ie && j < je) {
      const Span& x = spans_[i];
      const Span& y = o.spans_[j];
      const std::int64_t beg = std::max(x.begin, y.begin);
      const std::int64_t end = std::min(x.end, y.end);
      if (end > beg) total += end - beg;
      if (x.end < y.end)
        ++i;
      else
        ++j;
    }
  }
  return total;
}

double PolygonRaster::iou(const PolygonRaster& o) const {
  const std::int64_t inter = intersection(o);
  const std::int64_t uni = area_ + o.area_ - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double polygon_iou(const StarPolygon& a, const StarPolygon& b, int supersample) {
  if (!bounding_box(a).intersects(bounding_box(b))) return 0.0;
  const PolygonRaster ra(a, supersample);
  const PolygonRaster rb(b, supersample);
  if (ra.area() == 0 && rb.area() == 0) return a.center == b.center && a.distances == b.distances ? 1.0 : 0.0;
  return ra.iou(rb);
}

Grid<std::uint8_t> rasterize_mask(const StarPolygon& polygon, int width, int height, Point origin) {
  Grid<std::uint8_t> mask(width, height, 0);
  const auto verts = polygon_from_rays(polygon);
  for (int y = 0; y < height; ++y) {
    const auto xs = row_crossings(verts, origin.y + y);
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int b = std::max(0, static_cast<int>(std::ceil(xs[i] - origin.x)));
      const int e = std::min(width, static_cast<int>(std::ceil(xs[i + 1] - origin.x)));
      for (int x = b; x < e; ++x) mask.at(x, y) = 1;
    }
  }
  return mask;
}

}  // namespace fishgrade
