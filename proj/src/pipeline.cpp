#include "fishgrade/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include "fishgrade/error.hpp"
#include "fishgrade/tensor_io.hpp"

namespace fishgrade {

MultiChannelImage downscale(const MultiChannelImage& image, int factor) {
  if (factor < 1) throw ConfigError("downscale", "factor must be >= 1");
  if (factor == 1) return image;
  const int w = (image.width() + factor - 1) / factor, h = (image.height() + factor - 1) / factor;
  MultiChannelImage out(w, h);
  for (Channel c : kAllChannels) {
    const auto& src = image.plane(c);
    auto& dst = out.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int yy = y * factor; yy < std::min(image.height(), (y + 1) * factor); ++yy)
          for (int xx = x * factor; xx < std::min(image.width(), (x + 1) * factor); ++xx) {
            sum += src.at(xx, yy);
            ++n;
          }
        dst.at(x, y) = static_cast<float>(sum / n);
      }
  }
  return out;
}

std::vector<int> tile_origins(int dim, int tile, int overlap) {
  if (tile < 1) throw ConfigError("tile_size", "must be >= 1");
  if (overlap < 0 || overlap >= tile) throw ConfigError("tile_overlap", "must satisfy 0 <= overlap < tile_size");
  const int stride = tile - overlap;
  std::vector<int> out;
  for (int o = 0; o + tile < dim; o += stride) out.push_back(o);
  out.push_back(std::max(0, dim - tile));
  return out;
}

std::vector<TileSpec> tile_image(int width, int height, int tile, int overlap) {
  if (width < 1 || height < 1) throw InputError("tile_image: dims must be positive");
  std::vector<TileSpec> out;
  for (int y : tile_origins(height, tile, overlap))
    for (int x : tile_origins(width, tile, overlap))
      out.push_back({x, y, std::min(tile, width - x), std::min(tile, height - y)});
  return out;
}

std::vector<StarPolygon> stitch_nuclei(std::vector<StarPolygon> polygons, double iou_threshold, int supersample) {
  return nms_polygons(std::move(polygons), iou_threshold, supersample);
}

namespace {

FloatGrid sub_grid(const FloatGrid& g, const TileSpec& t) {
  FloatGrid out(t.width, t.height);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) out.at(x, y) = g.at(t.x + x, t.y + y);
  return out;
}

void row_major(std::vector<StarPolygon>& polys) {
  std::stable_sort(polys.begin(), polys.end(), [](const StarPolygon& a, const StarPolygon& b) {
    const double ay = std::round(a.center.y), by = std::round(b.center.y);
    if (ay != by) return ay < by;
    const double ax = std::round(a.center.x), bx = std::round(b.center.x);
    if (ax != bx) return ax < bx;
    if (a.center.y != b.center.y) return a.center.y < b.center.y;
    return a.center.x < b.center.x;
  });
}

std::filesystem::path beside(const std::filesystem::path& descriptor, const std::string& p) {
  const std::filesystem::path q(p);
  return q.is_absolute() ? q : descriptor.parent_path() / q;
}

struct ExternalClassifier {
  std::vector<int> ids;
  Tensor logits;
  std::optional<Tensor> features, weights;

  int row_of(int id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<int>(i);
    return -1;
  }
};

ExternalClassifier load_classifier(const std::string& descriptor) {
  const auto bytes = read_file(descriptor);
  Json j;
  try {
    j = Json::parse(std::string(bytes.begin(), bytes.end()));
  } catch (const Json::parse_error& e) {
    throw FormatError("classifier descriptor is not valid JSON: " + std::string(e.what()));
  }
  ExternalClassifier c;
  try {
    c.ids = j.at("nucleus_ids").get<std::vector<int>>();
    c.logits = read_tensor(beside(descriptor, j.at("logits").get<std::string>()), "logits tensor");
    if (j.contains("features")) {
      c.features = read_tensor(beside(descriptor, j.at("features").get<std::string>()), "features tensor");
      c.weights = read_tensor(beside(descriptor, j.at("weights").get<std::string>()), "weights tensor");
    }
  } catch (const Json::exception& e) {
    throw FormatError("classifier descriptor: " + std::string(e.what()));
  }
  if (c.logits.rank() != 2 || c.logits.dims[0] != c.ids.size() || c.logits.dims[1] != kNucleusClassCount)
    throw FormatError("logits tensor: expected [N, 5] with N = number of nucleus_ids");
  if (c.features) {
    if (c.features->rank() != 4 || c.features->dims[0] != c.ids.size())
      throw FormatError("features tensor: expected [N, C, h, w]");
    if (c.weights->rank() != 2 || c.weights->dims[0] != kNucleusClassCount || c.weights->dims[1] != c.features->dims[1])
      throw FormatError("weights tensor: expected [5, C]");
  }
  return c;
}

Tensor feature_slice(const Tensor& f, std::uint32_t n) {
  Tensor out;
  out.dims = {f.dims[1], f.dims[2], f.dims[3]};
  const std::size_t len = std::size_t(f.dims[1]) * f.dims[2] * f.dims[3];
  out.data.assign(f.data.begin() + static_cast<std::ptrdiff_t>(n * len),
                  f.data.begin() + static_cast<std::ptrdiff_t>((n + 1) * len));
  return out;
}

template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    });
}

}  // namespace

std::vector<StarPolygon> segment_slide(const MultiChannelImage& image, const PipelineConfig& config) {
  config.validate();
  const MultiChannelImage work = downscale(image, config.downscale);
  const int n_rays = config.segmentation.n_rays;

  std::optional<ProbDistMaps> external;
  if (config.segmentation_source.external) {
    external = maps_from_tensors(read_tensor(config.segmentation_source.prob_path, "prob tensor"),
                                 read_tensor(config.segmentation_source.dist_path, "dist tensor"));
    if (external->width() != work.width() || external->height() != work.height())
      throw FormatError("prob tensor: dims " + std::to_string(external->width()) + "x" +
                        std::to_string(external->height()) + " differ from working image " +
                        std::to_string(work.width()) + "x" + std::to_string(work.height()));
  }

  std::vector<StarPolygon> all;
  for (const TileSpec& t : tile_image(work.width(), work.height(), config.tile_size, config.tile_overlap)) {
    ProbDistMaps maps;
    if (external) {
      maps = crop_maps(*external, t.x, t.y, t.width, t.height);
    } else {
      const InteriorEdges interior{t.x > 0, t.y > 0, t.x + t.width < work.width(), t.y + t.height < work.height()};
      maps = predict_maps(sub_grid(work.plane(Channel::Dapi), t), config.reference_segmentation, n_rays, interior);
    }
    for (auto& p : segment(maps, config.segmentation)) all.push_back(p.translated(t.x, t.y));
  }
  auto kept = stitch_nuclei(std::move(all), config.segmentation.nms_iou, config.segmentation.supersample);
  const double f = config.downscale;
  for (auto& p : kept) p = p.scaled(f, (f - 1.0) / 2.0);
  row_major(kept);
  return kept;
}

namespace {

SlideReport grade_impl(const MultiChannelImage& image, const std::vector<StarPolygon>& polygons,
                       const PipelineConfig& config, const RunOptions& options,
                       const std::vector<std::vector<SignalBox>>* given_signals, double progress_base) {
  std::mutex progress_mu;
  auto report_progress = [&](double f) {
    if (!options.progress) return;
    std::lock_guard lock(progress_mu);
    options.progress(f);
  };
  if (given_signals && given_signals->size() != polygons.size())
    throw InputError("signal lists (" + std::to_string(given_signals->size()) + ") do not match nuclei (" +
                     std::to_string(polygons.size()) + ")");

  SlideReport report;
  report.slide = {image.width(), image.height(), options.input_sha256};
  report.config = config;

  std::optional<ExternalClassifier> ext_cls;
  if (config.classifier_source.external) ext_cls = load_classifier(config.classifier_source.descriptor);

  report.nuclei.resize(polygons.size());
  std::atomic<std::size_t> done{0};
  parallel_for(polygons.size(), options.threads, [&](std::size_t i) {
    NucleusRecord& r = report.nuclei[i];
    r.id = static_cast<int>(i);
    r.polygon = polygons[i];
    r.classifier.source = ext_cls ? "logits" : "rules";
    try {
      const NucleusCrop crop = extract_crop(image, r.polygon, config.crop_margin);
      r.crop_x = crop.offset_x;
      r.crop_y = crop.offset_y;
      r.crop_width = crop.image.width();
      r.crop_height = crop.image.height();

      if (given_signals) {
        r.signals = (*given_signals)[i];
      } else {
        SignalPredictor predictor = ReferenceDetector{};
        if (config.signal_source.external) predictor = ExternalHeads{config.signal_source.descriptor, r.id};
        for (auto s : detect_signals(crop.image, predictor, config.detector)) {
          s.box = s.box.translated(crop.offset_x, crop.offset_y);
          r.signals.push_back(s);
        }
      }

      if (ext_cls) {
        const int row = ext_cls->row_of(r.id);
        if (row < 0) throw InputError("no classifier logits for nucleus " + std::to_string(r.id));
        std::array<double, kNucleusClassCount> logits{};
        for (int k = 0; k < kNucleusClassCount; ++k)
          logits[k] = ext_cls->logits.at({static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(k)});
        const ScoreVerdict v = classify_by_scores(logits);
        r.classifier.cls = v.cls;
        r.classifier.probabilities = v.probabilities;
        std::ostringstream why;
        why << "argmax of external logits, p=" << v.probabilities[static_cast<int>(v.cls)];
        r.classifier.rationale = why.str();
        if (ext_cls->features) {
          std::vector<double> w(ext_cls->weights->dims[1]);
          for (std::uint32_t c = 0; c < w.size(); ++c)
            w[c] = ext_cls->weights->at({static_cast<std::uint32_t>(v.cls), c});
          r.cam = cam_low_res(feature_slice(*ext_cls->features, static_cast<std::uint32_t>(row)), w);
        } else {
          r.cam_note = "no feature maps supplied";
        }
      } else {
        if (auto screened = screen_crop(crop, config.classifier)) {
          r.classifier.cls = screened->cls;
          r.classifier.screen = screened->cls;
          r.classifier.rationale = screened->rationale;
        }
        r.cam_note = "rule classifier has no feature maps";
      }
    } catch (const std::exception& e) {
      r.error = e.what();
      r.classifier.cls = NucleusClass::Artifact;
      r.classifier.rationale = "stage error: " + r.error;
      r.classifier.screen.reset();
      r.classifier.probabilities.reset();
      r.cam.reset();
      r.signals.clear();
    }
    const std::size_t finished = ++done;
    report_progress(progress_base + (1.0 - progress_base) * double(finished) / double(polygons.size()));
  });

  regrade(report);
  if (options.truth) report.metrics = evaluate_slide(report, *options.truth);
  report.generated_at = utc_timestamp();
  report_progress(1.0);
  return report;
}

}  // namespace

SlideReport grade_polygons(const MultiChannelImage& image, const std::vector<StarPolygon>& polygons,
                           const PipelineConfig& config, const RunOptions& options,
                           const std::vector<std::vector<SignalBox>>* signals) {
  config.validate();
  image.validate();
  return grade_impl(image, polygons, config, options, signals, 0.0);
}

SlideReport run_pipeline(const MultiChannelImage& image, const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  image.validate();
  if (options.progress) options.progress(0.0);
  const auto polygons = segment_slide(image, config);
  if (options.progress) options.progress(0.5);
  return grade_impl(image, polygons, config, options, nullptr, 0.5);
}

}  // namespace fishgrade
