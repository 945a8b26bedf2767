#include "fishgrade/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fishgrade/error.hpp"

namespace fishgrade {

void SimConfig::validate() const {
  if (width <= 0) throw ConfigError("sim.width", "must be > 0");
  if (height <= 0) throw ConfigError("sim.height", "must be > 0");
  if (min_nuclei < 0 || max_nuclei < min_nuclei) throw ConfigError("sim.nuclei", "need 0 <= min <= max");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw ConfigError("sim.radius", "need 0 < min <= max");
  if (n_rays < 3) throw ConfigError("sim.n_rays", "must be >= 3");
  if (!(shape_jitter >= 0.0 && shape_jitter < 0.5)) throw ConfigError("sim.shape_jitter", "must lie in [0,0.5)");
  for (double f : {mix.normal, mix.low_amp, mix.high_amp, mix.artifact})
    if (!(f >= 0.0)) throw ConfigError("sim.mix", "fractions must be >= 0");
  const double total = mix.normal + mix.low_amp + mix.high_amp + mix.artifact;
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("sim.mix", "fractions must sum to 1");
  if (!(cluster_fraction >= 0.0 && cluster_fraction <= 1.0))
    throw ConfigError("sim.cluster_fraction", "must lie in [0,1]");
  if (!(psf_sigma > 0.0)) throw ConfigError("sim.psf_sigma", "must be > 0");
  if (!(signal_amplitude_min > 0.0) || signal_amplitude_max < signal_amplitude_min)
    throw ConfigError("sim.signal_amplitude", "need 0 < min <= max");
  if (!(dapi_min > 0.0) || dapi_max < dapi_min || dapi_max > 1.0)
    throw ConfigError("sim.dapi", "need 0 < min <= max <= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("sim.noise_sigma", "must be >= 0");
  if (!(artifact_density >= 0.0)) throw ConfigError("sim.artifact_density", "must be >= 0");
  if (!(min_gap >= 0.0)) throw ConfigError("sim.min_gap", "must be >= 0");
  if (!(min_signal_separation > 0.0)) throw ConfigError("sim.min_signal_separation", "must be > 0");
  if (!(cluster_spot_spacing > 0.0)) throw ConfigError("sim.cluster_spot_spacing", "must be > 0");
}

SimConfig SimConfig::noiseless() {
  SimConfig c;
  c.noise_sigma = 0.0;
  c.artifact_density = 0.0;
  return c;
}

int GtNucleus::her2_copies() const {
  int n = 0;
  for (const auto& s : signals)
    if (s.cls != SignalClass::Cep17) n += s.true_copies;
  return n;
}

int GtNucleus::cep17_copies() const {
  int n = 0;
  for (const auto& s : signals)
    if (s.cls == SignalClass::Cep17) n += s.true_copies;
  return n;
}

void add_gaussian_spot(FloatGrid& plane, Point c, double sigma, double amplitude) {
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x)) - r);
  const int x1 = std::min(plane.width() - 1, static_cast<int>(std::ceil(c.x)) + r);
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y)) - r);
  const int y1 = std::min(plane.height() - 1, static_cast<int>(std::ceil(c.y)) + r);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - c.x, dy = y - c.y;
      plane.at(x, y) += static_cast<float>(amplitude * std::exp(-(dx * dx + dy * dy) * inv));
    }
}

namespace {

double min_edge_distance(const std::vector<Point>& v, Point p) {
  double best = INFINITY;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % v.size()];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = a.x + t * ex - p.x, dy = a.y + t * ey - p.y;
    best = std::min(best, std::sqrt(dx * dx + dy * dy));
  }
  return best;
}

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Uniform-ish point at least `margin` inside the outline.
std::optional<Point> sample_inside(const StarPolygon& poly, const std::vector<Point>& verts, double margin, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Point dir{std::cos(phi), std::sin(phi)};
    const double reach = ray_to_boundary(verts, poly.center, dir);
    const double r = std::sqrt(rng.uniform()) * reach;
    const Point p{poly.center.x + r * dir.x, poly.center.y + r * dir.y};
    if (point_in_polygon(verts, p) && min_edge_distance(verts, p) >= margin) return p;
  }
  return std::nullopt;
}

Box spot_box(Point c, int hw) { return {c.x - hw, c.y - hw, c.x + hw, c.y + hw}; }

// Square-lattice offsets ordered by distance from the origin, then angle.
std::vector<Point> lattice_offsets(int k, double spacing) {
  std::vector<Point> pts;
  for (int j = -3; j <= 3; ++j)
    for (int i = -3; i <= 3; ++i) pts.push_back({i * spacing, j * spacing});
  std::stable_sort(pts.begin(), pts.end(), [](Point a, Point b) {
    const double da = a.x * a.x + a.y * a.y, db = b.x * b.x + b.y * b.y;
    if (da != db) return da < db;
    return std::atan2(a.y, a.x) < std::atan2(b.y, b.x);
  });
  pts.resize(static_cast<std::size_t>(k));
  return pts;
}

StarPolygon random_shape(Rng& rng, const SimConfig& cfg, double radius, double jitter) {
  StarPolygon p;
  const int n = cfg.n_rays;
  std::vector<double> raw(n);
  for (double& v : raw) v = jitter * rng.normal();
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> s(n);
    for (int k = 0; k < n; ++k) s[k] = 0.25 * raw[(k + n - 1) % n] + 0.5 * raw[k] + 0.25 * raw[(k + 1) % n];
    raw = s;
  }
  p.distances.resize(n);
  for (int k = 0; k < n; ++k) p.distances[k] = radius * std::max(0.6, 1.0 + raw[k]);
  return p;
}

void fill_polygon(FloatGrid& plane, const StarPolygon& poly, float value) {
  const auto verts = polygon_from_rays(poly);
  const BBox bb = bounding_box(verts);
  const int y0 = std::max(0, static_cast<int>(std::floor(bb.y0)));
  const int y1 = std::min(plane.height() - 1, static_cast<int>(std::ceil(bb.y1)));
  for (int y = y0; y <= y1; ++y) {
    const auto xs = row_crossings(verts, y);
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int xb = std::max(0, static_cast<int>(std::ceil(xs[i])));
      const int xe = std::min(plane.width(), static_cast<int>(std::ceil(xs[i + 1])));
      for (int x = xb; x < xe; ++x) plane.at(x, y) = value;
    }
  }
}

}  // namespace

std::vector<GtSignal> place_signals(const StarPolygon& polygon, NucleusClass cls, Rng& rng, const SimConfig& config) {
  if (cls == NucleusClass::Background) throw InputError("place_signals: Background is not a nucleus class");
  if (cls == NucleusClass::Artifact) return {};
  const auto verts = polygon_from_rays(polygon);
  const int hw = static_cast<int>(std::lround(2.0 * config.psf_sigma));
  const double margin = hw + 2.0;

  const int cep = static_cast<int>(rng.uniform_int(1, 2));
  int her2_singles = 0;
  int cluster_copies = 0;
  switch (cls) {
    case NucleusClass::Normal:
      her2_singles = cep == 1 ? 1 : static_cast<int>(rng.uniform_int(1, 2));
      break;
    case NucleusClass::LowAmp:
      her2_singles = static_cast<int>(rng.uniform_int(2 * cep, 5));
      break;
    case NucleusClass::HighAmp:
      if (rng.bernoulli(config.cluster_fraction)) {
        cluster_copies = static_cast<int>(rng.uniform_int(6, 12));
        her2_singles = 2;
      } else {
        her2_singles = static_cast<int>(rng.uniform_int(6, 10));
      }
      break;
    default:
      break;
  }

  // HER2 spots keep their boxes apart so no three singles chain into a
  // cluster and no single touches the cluster.
  const double her2_gap = 2.0 * hw + 1.5;
  auto chebyshev = [](Point a, Point b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); };
  const auto offsets = lattice_offsets(std::max(cluster_copies, 1), config.cluster_spot_spacing);
  double extent = 0.0;
  for (auto o : offsets) extent = std::max(extent, std::hypot(o.x, o.y));

  for (int layout = 0; layout < 50; ++layout) {
    std::vector<GtSignal> out;
    std::vector<Point> her2_spots, singles;
    if (cluster_copies > 0) {
      const auto c = sample_inside(polygon, verts, margin + extent, rng);
      if (!c) continue;
      GtSignal cl{SignalClass::Her2Cluster, spot_box(*c, hw), cluster_copies};
      for (auto o : offsets) {
        const Point p{c->x + o.x, c->y + o.y};
        const Box b = spot_box(p, hw);
        cl.box = {std::min(cl.box.x0, b.x0), std::min(cl.box.y0, b.y0), std::max(cl.box.x1, b.x1),
                  std::max(cl.box.y1, b.y1)};
        her2_spots.push_back(p);
      }
      out.push_back(cl);
    }
    auto place_single = [&](SignalClass sc) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const auto p = sample_inside(polygon, verts, margin, rng);
        if (!p) continue;
        bool ok = true;
        for (const auto& t : singles) ok = ok && dist(*p, t) >= config.min_signal_separation;
        for (const auto& t : her2_spots) ok = ok && dist(*p, t) >= config.min_signal_separation;
        if (sc == SignalClass::Her2)
          for (const auto& t : her2_spots) ok = ok && chebyshev(*p, t) >= her2_gap;
        if (!ok) continue;
        singles.push_back(*p);
        if (sc == SignalClass::Her2) her2_spots.push_back(*p);
        out.push_back({sc, spot_box(*p, hw), 1});
        return true;
      }
      return false;
    };
    bool ok = true;
    for (int i = 0; i < her2_singles && ok; ++i) ok = place_single(SignalClass::Her2);
    for (int i = 0; i < cep && ok; ++i) ok = place_single(SignalClass::Cep17);
    if (ok) return out;
  }
  throw PlacementError("polygon too small to place " + std::to_string(her2_singles + cep) +
                       " separated signals" + (cluster_copies ? " and a cluster" : ""));
}

HerStatus tally_status(const std::vector<GtNucleus>& nuclei, int* evaluable) {
  // Default guideline thresholds, counted independently of the scoring code.
  constexpr double kRatio = 2.0, kHighHer2 = 6.0;
  constexpr int kMinNuclei = 20;
  long her2 = 0, cep17 = 0;
  int n = 0;
  for (const auto& g : nuclei) {
    if (!is_gradable(g.cls) || g.cep17_copies() == 0) continue;
    her2 += g.her2_copies();
    cep17 += g.cep17_copies();
    ++n;
  }
  if (evaluable) *evaluable = n;
  if (n < kMinNuclei) return HerStatus::Indeterminate;
  if (double(her2) / double(cep17) < kRatio) return HerStatus::Negative;
  return double(her2) / n >= kHighHer2 ? HerStatus::PositiveHigh : HerStatus::PositiveLow;
}

SimulatedSlide simulate_slide(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  SimulatedSlide slide{MultiChannelImage(config.width, config.height), {}};
  GroundTruth& gt = slide.truth;
  gt.width = config.width;
  gt.height = config.height;

  const int count = static_cast<int>(rng.uniform_int(config.min_nuclei, config.max_nuclei));
  std::vector<double> extents;
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform();
    NucleusClass cls = NucleusClass::Artifact;
    if (u < config.mix.normal)
      cls = NucleusClass::Normal;
    else if (u < config.mix.normal + config.mix.low_amp)
      cls = NucleusClass::LowAmp;
    else if (u < config.mix.normal + config.mix.low_amp + config.mix.high_amp)
      cls = NucleusClass::HighAmp;

    const bool artifact = cls == NucleusClass::Artifact;
    const double radius = rng.uniform(config.min_radius, config.max_radius) * (artifact ? 0.7 : 1.0);
    StarPolygon poly = random_shape(rng, config, radius, config.shape_jitter * (artifact ? 1.5 : 1.0));
    const double extent = *std::max_element(poly.distances.begin(), poly.distances.end());
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      const double lo_x = extent + 2.0, hi_x = config.width - extent - 3.0;
      const double lo_y = extent + 2.0, hi_y = config.height - extent - 3.0;
      if (hi_x <= lo_x || hi_y <= lo_y) break;
      poly.center = {std::round(rng.uniform(lo_x, hi_x) * 4.0) / 4.0, std::round(rng.uniform(lo_y, hi_y) * 4.0) / 4.0};
      placed = true;
      if (!config.allow_overlap)
        for (std::size_t j = 0; j < gt.nuclei.size() && placed; ++j)
          placed = dist(poly.center, gt.nuclei[j].polygon.center) >= extent + extents[j] + config.min_gap;
    }
    if (!placed) throw PlacementError("cannot place nucleus " + std::to_string(i) + " of " + std::to_string(count));

    GtNucleus nucleus{poly, cls, {}};
    Rng child = rng.fork();
    nucleus.signals = place_signals(poly, cls, child, config);
    extents.push_back(extent);
    gt.nuclei.push_back(std::move(nucleus));
  }

  // Render nuclei, then their signals.
  auto& img = slide.image;
  for (const auto& g : gt.nuclei) {
    if (g.cls == NucleusClass::Artifact) {
      fill_polygon(img.plane(Channel::Dapi), g.polygon, 1.0f);
      const auto verts = polygon_from_rays(g.polygon);
      for (int b = 0; b < 6; ++b)
        if (auto p = sample_inside(g.polygon, verts, 2.0, rng)) {
          const Channel ch = rng.bernoulli(0.5) ? Channel::Her2 : Channel::Cep17;
          add_gaussian_spot(img.plane(ch), *p, rng.uniform(3.0, 6.0), 1.6);
        }
      continue;
    }
    fill_polygon(img.plane(Channel::Dapi), g.polygon, static_cast<float>(rng.uniform(config.dapi_min, config.dapi_max)));
    for (const auto& s : g.signals) {
      if (s.cls == SignalClass::Her2Cluster) continue;
      const Channel ch = s.cls == SignalClass::Cep17 ? Channel::Cep17 : Channel::Her2;
      add_gaussian_spot(img.plane(ch), s.box.center(), config.psf_sigma,
                        rng.uniform(config.signal_amplitude_min, config.signal_amplitude_max));
    }
  }
  // Cluster copies: the lattice centre is recovered from the union box.
  const int hw = static_cast<int>(std::lround(2.0 * config.psf_sigma));
  for (const auto& g : gt.nuclei)
    for (const auto& s : g.signals) {
      if (s.cls != SignalClass::Her2Cluster) continue;
      const auto offsets = lattice_offsets(s.true_copies, config.cluster_spot_spacing);
      double min_x = INFINITY, min_y = INFINITY;
      for (auto o : offsets) {
        min_x = std::min(min_x, o.x);
        min_y = std::min(min_y, o.y);
      }
      const Point centre{s.box.x0 + hw - min_x, s.box.y0 + hw - min_y};
      for (auto o : offsets)
        add_gaussian_spot(img.plane(Channel::Her2), {centre.x + o.x, centre.y + o.y}, config.psf_sigma,
                          rng.uniform(config.signal_amplitude_min, config.signal_amplitude_max));
    }

  // Out-of-channel smears away from every nucleus.
  const int smears = static_cast<int>(std::lround(config.artifact_density * config.width * config.height / 1e6));
  for (int i = 0; i < smears; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const Point a{rng.uniform(0, config.width - 1), rng.uniform(0, config.height - 1)};
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const double len = rng.uniform(10.0, 25.0);
      const Point b{a.x + len * std::cos(angle), a.y + len * std::sin(angle)};
      bool clear = true;
      for (std::size_t j = 0; j < gt.nuclei.size() && clear; ++j)
        clear = dist(a, gt.nuclei[j].polygon.center) > extents[j] + 30.0 &&
                dist(b, gt.nuclei[j].polygon.center) > extents[j] + 30.0;
      if (!clear) continue;
      const Channel ch = rng.bernoulli(0.5) ? Channel::Her2 : Channel::Cep17;
      const double amp = rng.uniform(0.3, 0.6);
      for (int s = 0; s <= 10; ++s)
        add_gaussian_spot(img.plane(ch), {a.x + (b.x - a.x) * s / 10.0, a.y + (b.y - a.y) * s / 10.0}, 2.0, amp * 0.4);
      break;
    }
  }

  if (config.noise_sigma > 0.0)
    for (Channel c : kAllChannels)
      for (float& v : img.plane(c).values()) v += static_cast<float>(config.noise_sigma * rng.normal());
  img.clamp();

  gt.status = tally_status(gt.nuclei, &gt.evaluable_count);
  return slide;
}

MultiChannelImage augment(const MultiChannelImage& image, const AugmentSpec& spec) {
  if (spec.rot90 < 0 || spec.rot90 > 3) throw InputError("augment: rot90 count must be 0..3");
  MultiChannelImage cur = image;
  for (int r = 0; r < spec.rot90; ++r) {
    const int w = cur.width(), h = cur.height();
    MultiChannelImage next(h, w);
    // Counter-clockwise quarter turn: out(x, y) = in(w - 1 - y, x).
    for (Channel c : kAllChannels)
      for (int y = 0; y < w; ++y)
        for (int x = 0; x < h; ++x) next.at(c, x, y) = cur.at(c, w - 1 - y, x);
    cur = std::move(next);
  }
  const int w = cur.width(), h = cur.height();
  if (spec.hflip)
    for (Channel c : kAllChannels)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x) std::swap(cur.at(c, x, y), cur.at(c, w - 1 - x, y));
  if (spec.vflip)
    for (Channel c : kAllChannels)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w; ++x) std::swap(cur.at(c, x, y), cur.at(c, x, h - 1 - y));
  if (spec.brightness != 0.0 || spec.contrast != 1.0) {
    for (Channel c : kAllChannels)
      for (float& v : cur.plane(c).values())
        v = static_cast<float>(std::clamp((v - 0.5) * spec.contrast + 0.5 + spec.brightness, 0.0, 1.0));
  }
  return cur;
}

}  // namespace fishgrade
