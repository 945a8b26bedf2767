#include "fishgrade/signals.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include <nlohmann/json.hpp>

#include "fishgrade/error.hpp"

namespace fishgrade {

int DetectorConfig::half_width() const { return static_cast<int>(std::lround(2.0 * log_sigma)); }

void DetectorConfig::validate() const {
  if (!(log_sigma > 0.0)) throw ConfigError("detector.log_sigma", "must be > 0");
  auto unit = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(name, "must lie in (0,1)");
  };
  unit(peak_threshold, "detector.peak_threshold");
  if (!(cluster_merge_iou >= 0.0 && cluster_merge_iou < 1.0))
    throw ConfigError("detector.cluster_merge_iou", "must lie in [0,1)");
  unit(box_nms_iou, "detector.box_nms_iou");
  unit(score_threshold, "detector.score_threshold");
  if (cluster_min_peaks < 2) throw ConfigError("detector.cluster_min_peaks", "must be >= 2");
}

namespace {

std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= s;
  return k;
}

// Second derivative of the normalised Gaussian, forced to zero DC.
std::vector<double> gaussian_dd_kernel(double sigma, const std::vector<double>& g, int radius) {
  std::vector<double> k(2 * radius + 1);
  const double s2 = sigma * sigma;
  for (int i = -radius; i <= radius; ++i) k[i + radius] = (i * i / (s2 * s2) - 1.0 / s2) * g[i + radius];
  const double mean = std::accumulate(k.begin(), k.end(), 0.0) / static_cast<double>(k.size());
  for (double& v : k) v -= mean;
  return k;
}

Grid<double> convolve_rows(const Grid<double>& in, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  Grid<double> out(in.width(), in.height(), 0.0);
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      double s = 0.0;
      const int lo = std::max(-r, -x), hi = std::min(r, in.width() - 1 - x);
      for (int i = lo; i <= hi; ++i) s += k[i + r] * in.at(x + i, y);
      out.at(x, y) = s;
    }
  return out;
}

Grid<double> convolve_cols(const Grid<double>& in, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  Grid<double> out(in.width(), in.height(), 0.0);
  for (int y = 0; y < in.height(); ++y) {
    const int lo = std::max(-r, -y), hi = std::min(r, in.height() - 1 - y);
    for (int x = 0; x < in.width(); ++x) {
      double s = 0.0;
      for (int i = lo; i <= hi; ++i) s += k[i + r] * in.at(x, y + i);
      out.at(x, y) = s;
    }
  }
  return out;
}

SignalClass signal_class_for(Channel c) {
  if (c == Channel::Her2) return SignalClass::Her2;
  if (c == Channel::Cep17) return SignalClass::Cep17;
  throw InputError("signals are detected on the HER2 or CEP17 channel only");
}

Box clamp_box(Box b, int w, int h) {
  b.x0 = std::clamp(b.x0, 0.0, static_cast<double>(w - 1));
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(w - 1));
  b.y0 = std::clamp(b.y0, 0.0, static_cast<double>(h - 1));
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(h - 1));
  return b;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::vector<SignalBox> detect_blobs_log(const MultiChannelImage& crop, Channel channel,
                                        const DetectorConfig& config) {
  const SignalClass cls = signal_class_for(channel);
  const FloatGrid& plane = crop.plane(channel);
  const int w = plane.width(), h = plane.height();
  if (w == 0 || h == 0) return {};

  Grid<double> in(w, h);
  bool any = false;
  for (std::size_t i = 0; i < plane.size(); ++i) {
    in.storage()[i] = plane.storage()[i];
    any = any || plane.storage()[i] != 0.0f;
  }
  if (!any) return {};

  const double sigma = config.log_sigma;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  const auto g = gaussian_kernel(sigma, radius);
  const auto gdd = gaussian_dd_kernel(sigma, g, radius);
  const auto dxx = convolve_cols(convolve_rows(in, gdd), g);
  const auto dyy = convolve_cols(convolve_rows(in, g), gdd);

  // -sigma^2 * LoG of a unit Gaussian spot of the same sigma peaks at 1/2.
  Grid<double> resp(w, h);
  for (std::size_t i = 0; i < resp.size(); ++i)
    resp.storage()[i] = -sigma * sigma * (dxx.storage()[i] + dyy.storage()[i]) * 2.0;

  const int hw = config.half_width();
  std::vector<SignalBox> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = resp.at(x, y);
      if (v < config.peak_threshold) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (!resp.contains(nx, ny)) continue;
          const double n = resp.at(nx, ny);
          // Plateaus resolve to their first pixel in raster order.
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (earlier ? n >= v : n > v) {
            peak = false;
            break;
          }
        }
      if (!peak) continue;
      out.push_back({cls, Box{double(x - hw), double(y - hw), double(x + hw), double(y + hw)},
                     std::min(1.0, v)});
    }
  return out;
}

std::vector<SignalBox> merge_clusters(std::span<const SignalBox> her2, const DetectorConfig& config) {
  const std::size_t n = her2.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (box_iou(her2[i].box, her2[j].box) > config.cluster_merge_iou) {
        const auto a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }

  std::vector<std::size_t> size(n, 0);
  for (std::size_t i = 0; i < n; ++i) ++size[find(i)];

  std::vector<SignalBox> out;
  std::vector<int> emitted(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = find(i);
    if (size[root] < static_cast<std::size_t>(config.cluster_min_peaks)) {
      out.push_back(her2[i]);
      continue;
    }
    if (emitted[root] < 0) {
      emitted[root] = static_cast<int>(out.size());
      out.push_back({SignalClass::Her2Cluster, her2[i].box, her2[i].score});
      continue;
    }
    SignalBox& c = out[static_cast<std::size_t>(emitted[root])];
    c.box.x0 = std::min(c.box.x0, her2[i].box.x0);
    c.box.y0 = std::min(c.box.y0, her2[i].box.y0);
    c.box.x1 = std::max(c.box.x1, her2[i].box.x1);
    c.box.y1 = std::max(c.box.y1, her2[i].box.y1);
    c.score = std::max(c.score, her2[i].score);
  }
  return out;
}

std::vector<SignalBox> nms_boxes(std::vector<SignalBox> boxes, double iou_threshold, bool per_class) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const SignalBox& a, const SignalBox& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::make_tuple(a.box.y0, a.box.x0, static_cast<int>(a.cls)) <
           std::make_tuple(b.box.y0, b.box.x0, static_cast<int>(b.cls));
  });
  std::vector<SignalBox> kept;
  for (const auto& b : boxes) {
    bool keep = true;
    for (const auto& k : kept) {
      if (per_class && k.cls != b.cls) continue;
      if (box_iou(k.box, b.box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(b);
  }
  return kept;
}

Point AnchorGrid::cell_center(int cx, int cy) const {
  const double half = (stride - 1) * 0.5;
  return {cx * static_cast<double>(stride) + half, cy * static_cast<double>(stride) + half};
}

std::vector<SignalBox> decode_anchors(const HeadMaps& head, const AnchorGrid& grid, double score_threshold) {
  const auto a_count = static_cast<std::uint32_t>(grid.anchors.size());
  if (a_count == 0) throw FormatError("anchor grid: no anchor templates");
  if (grid.stride <= 0) throw FormatError("anchor grid: stride must be positive");
  if (head.cls.rank() != 3 || head.cls.dims[0] != a_count * kSignalClassCount)
    throw FormatError("cls tensor: expected [A*C, H, W] with A*C = " +
                      std::to_string(a_count * kSignalClassCount));
  if (head.box.rank() != 3 || head.box.dims[0] != a_count * 4)
    throw FormatError("box tensor: expected [A*4, H, W] with A*4 = " + std::to_string(a_count * 4));
  if (head.box.dims[1] != head.cls.dims[1] || head.box.dims[2] != head.cls.dims[2])
    throw FormatError("box tensor: spatial dims differ from cls tensor");
  if (head.cls.data.size() != head.cls.element_count()) throw FormatError("cls tensor: payload size");
  if (head.box.data.size() != head.box.element_count()) throw FormatError("box tensor: payload size");

  const std::uint32_t H = head.cls.dims[1], W = head.cls.dims[2];
  std::vector<SignalBox> out;
  for (std::uint32_t y = 0; y < H; ++y)
    for (std::uint32_t x = 0; x < W; ++x) {
      const Point c = grid.cell_center(static_cast<int>(x), static_cast<int>(y));
      for (std::uint32_t a = 0; a < a_count; ++a) {
        const double aw = grid.anchors[a].w, ah = grid.anchors[a].h;
        const double tx = head.box.at({a * 4 + 0, y, x});
        const double ty = head.box.at({a * 4 + 1, y, x});
        const double tw = head.box.at({a * 4 + 2, y, x});
        const double th = head.box.at({a * 4 + 3, y, x});
        for (std::uint32_t k = 0; k < kSignalClassCount; ++k) {
          const double score = sigmoid(head.cls.at({a * kSignalClassCount + k, y, x}));
          if (score < score_threshold) continue;
          const double cx = c.x + tx * aw, cy = c.y + ty * ah;
          const double bw = aw * std::exp(tw), bh = ah * std::exp(th);
          out.push_back({static_cast<SignalClass>(k),
                         Box{cx - bw * 0.5, cy - bh * 0.5, cx + bw * 0.5, cy + bh * 0.5}, score});
        }
      }
    }
  return out;
}

HeadMaps encode_anchors(std::span<const SignalBox> boxes, const AnchorGrid& grid, int crop_width,
                        int crop_height, float positive_logit) {
  const auto a_count = static_cast<std::uint32_t>(grid.anchors.size());
  if (a_count == 0) throw FormatError("anchor grid: no anchor templates");
  const auto W = static_cast<std::uint32_t>(grid.cells_for(crop_width));
  const auto H = static_cast<std::uint32_t>(grid.cells_for(crop_height));
  HeadMaps head{Tensor({a_count * kSignalClassCount, H, W}), Tensor({a_count * 4, H, W})};
  std::fill(head.cls.data.begin(), head.cls.data.end(), -positive_logit);

  for (const auto& b : boxes) {
    const Point c = b.box.center();
    const auto cx = static_cast<std::uint32_t>(
        std::clamp<long>(std::lround(std::floor((c.x + 0.5) / grid.stride)), 0, long(W) - 1));
    const auto cy = static_cast<std::uint32_t>(
        std::clamp<long>(std::lround(std::floor((c.y + 0.5) / grid.stride)), 0, long(H) - 1));
    std::uint32_t best = 0;
    double best_iou = -1.0;
    for (std::uint32_t a = 0; a < a_count; ++a) {
      const double iw = std::min(grid.anchors[a].w, b.box.width());
      const double ih = std::min(grid.anchors[a].h, b.box.height());
      const double iou = iw * ih / (grid.anchors[a].w * grid.anchors[a].h + b.box.area() - iw * ih);
      if (iou > best_iou) {
        best_iou = iou;
        best = a;
      }
    }
    const Point ac = grid.cell_center(static_cast<int>(cx), static_cast<int>(cy));
    const double aw = grid.anchors[best].w, ah = grid.anchors[best].h;
    for (std::uint32_t k = 0; k < kSignalClassCount; ++k)
      head.cls.at({best * kSignalClassCount + k, cy, cx}) =
          k == static_cast<std::uint32_t>(b.cls) ? positive_logit : -positive_logit;
    head.box.at({best * 4 + 0, cy, cx}) = static_cast<float>((c.x - ac.x) / aw);
    head.box.at({best * 4 + 1, cy, cx}) = static_cast<float>((c.y - ac.y) / ah);
    head.box.at({best * 4 + 2, cy, cx}) = static_cast<float>(std::log(b.box.width() / aw));
    head.box.at({best * 4 + 3, cy, cx}) = static_cast<float>(std::log(b.box.height() / ah));
  }
  return head;
}

std::pair<HeadMaps, AnchorGrid> load_external_heads(const ExternalHeads& source) {
  std::ifstream f(source.descriptor);
  if (!f) throw InputError("cannot read head-map descriptor " + source.descriptor.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("head-map descriptor: " + std::string(e.what()));
  }
  try {
    AnchorGrid grid;
    grid.stride = j.at("stride").get<int>();
    for (const auto& a : j.at("anchors")) grid.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    if (j.contains("classes")) {
      const auto classes = j.at("classes").get<std::vector<std::string>>();
      if (classes != std::vector<std::string>{"HER2", "HER2Cluster", "CEP17"})
        throw FormatError("head-map descriptor: class order must be HER2, HER2Cluster, CEP17");
    }
    const nlohmann::json* entry = &j;
    if (source.nucleus_id >= 0) {
      const auto key = std::to_string(source.nucleus_id);
      if (!j.contains("nuclei") || !j.at("nuclei").contains(key))
        throw InputError("head-map descriptor has no entry for nucleus " + key);
      entry = &j.at("nuclei").at(key);
    }
    const auto dir = source.descriptor.parent_path();
    HeadMaps head{read_tensor(dir / entry->at("cls").get<std::string>()),
                  read_tensor(dir / entry->at("box").get<std::string>())};
    return {std::move(head), std::move(grid)};
  } catch (const nlohmann::json::exception& e) {
    throw InputError("head-map descriptor: " + std::string(e.what()));
  }
}

std::vector<SignalBox> detect_signals(const MultiChannelImage& crop, const SignalPredictor& predictor,
                                      const DetectorConfig& config) {
  std::vector<SignalBox> raw;
  if (std::holds_alternative<ReferenceDetector>(predictor)) {
    const auto her2 = detect_blobs_log(crop, Channel::Her2, config);
    raw = merge_clusters(her2, config);
    const auto cep = detect_blobs_log(crop, Channel::Cep17, config);
    raw.insert(raw.end(), cep.begin(), cep.end());
  } else {
    const auto [head, grid] = load_external_heads(std::get<ExternalHeads>(predictor));
    if (head.cls.rank() == 3 && (head.cls.dims[1] != static_cast<std::uint32_t>(grid.cells_for(crop.height())) ||
                                 head.cls.dims[2] != static_cast<std::uint32_t>(grid.cells_for(crop.width()))))
      throw FormatError("cls tensor: grid does not match crop dims at stride " + std::to_string(grid.stride));
    raw = decode_anchors(head, grid, config.score_threshold);
  }
  for (auto& b : raw) b.box = clamp_box(b.box, crop.width(), crop.height());
  std::erase_if(raw, [](const SignalBox& b) { return !(b.box.x1 > b.box.x0 && b.box.y1 > b.box.y0); });
  return nms_boxes(std::move(raw), config.box_nms_iou, true);
}

}  // namespace fishgrade
