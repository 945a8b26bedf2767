#include "fishgrade/report.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fishgrade/error.hpp"

namespace fishgrade {

NucleusRecord* SlideReport::find(int id) {
  for (auto& r : nuclei)
    if (r.id == id) return &r;
  return nullptr;
}

void regrade(SlideReport& report) {
  const ScoringConfig& cfg = report.config.scoring;
  cfg.validate();
  auto count_eligible = [](const NucleusRecord& r) {
    if (!r.error.empty()) return false;
    return r.classifier.source == "rules" ? !r.classifier.screen.has_value() : is_gradable(r.classifier.cls);
  };
  if (cfg.cluster.source == ClusterCopyRule::ReferenceSource::Fixed) {
    report.reference_area = cfg.cluster.fixed_reference_area;
  } else {
    std::vector<double> areas;
    for (const auto& r : report.nuclei)
      if (count_eligible(r))
        for (const auto& s : r.signals)
          if (s.cls == SignalClass::Her2) areas.push_back(s.box.area());
    const double side = 4.0 * report.config.detector.log_sigma;
    report.reference_area = reference_singleton_area(areas, side * side);
  }

  for (auto& r : report.nuclei) {
    if (!r.error.empty()) {
      r.opinion.reset();
      r.score = NucleusScore{};
    } else {
      const CopyCounts counts = nucleus_counts(r.signals, cfg, report.reference_area);
      const GradeVerdict grade = grade_nucleus(counts, cfg);
      r.detector_class = grade.cls;
      if (r.classifier.source == "rules" && !r.classifier.screen) {
        r.classifier.cls = grade.cls;
        r.classifier.rationale = grade.rationale;
      }
      if (is_gradable(r.classifier.cls))
        r.opinion = second_opinion(r.classifier.cls, r.detector_class);
      else
        r.opinion.reset();
      r.score.her2_copies = counts.her2;
      r.score.cep17_copies = counts.cep17;
      r.score.ratio = counts.ratio();
    }
    r.score.exclusion_reason = exclusion_reason(r, cfg);
    r.score.evaluable = r.score.exclusion_reason.empty();
  }
  report.status = slide_status(report.nuclei, cfg);
}

namespace {

template <class T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

std::optional<double> opt_double(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

NucleusClass nucleus_class(const Json& j) {
  const auto c = parse_nucleus_class(j.get<std::string>());
  if (!c) throw InputError("unknown nucleus class " + j.get<std::string>());
  return *c;
}

SignalClass signal_class(const Json& j) {
  const auto c = parse_signal_class(j.get<std::string>());
  if (!c) throw InputError("unknown signal class " + j.get<std::string>());
  return *c;
}

HerStatus her_status(const Json& j) {
  const auto s = parse_her_status(j.get<std::string>());
  if (!s) throw InputError("unknown status " + j.get<std::string>());
  return *s;
}

Json box_json(const Box& b) { return Json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

}  // namespace

Json polygon_json(const StarPolygon& p) {
  return {{"center", {p.center.x, p.center.y}}, {"distances", p.distances}, {"score", p.score}};
}

StarPolygon polygon_from_json(const Json& j) {
  StarPolygon p;
  p.center = {j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()};
  p.distances = j.at("distances").get<std::vector<double>>();
  p.score = j.at("score").get<double>();
  return p;
}

Json signal_json(const SignalBox& s) {
  return {{"class", to_string(s.cls)}, {"box", box_json(s.box)}, {"score", s.score}};
}

SignalBox signal_from_json(const Json& j) {
  return {signal_class(j.at("class")), box_from_json(j.at("box")), j.at("score").get<double>()};
}

namespace {

Json status_json(const SlideStatus& s) {
  return {{"status", to_string(s.status)},     {"evaluable_count", s.evaluable_count},
          {"her2_total", s.her2_total},        {"cep17_total", s.cep17_total},
          {"mean_ratio", opt(s.mean_ratio)},   {"mean_her2", opt(s.mean_her2)}};
}

SlideStatus status_from_json(const Json& j) {
  SlideStatus s;
  s.status = her_status(j.at("status"));
  s.evaluable_count = j.at("evaluable_count").get<int>();
  s.her2_total = j.at("her2_total").get<long>();
  s.cep17_total = j.at("cep17_total").get<long>();
  s.mean_ratio = opt_double(j.at("mean_ratio"));
  s.mean_her2 = opt_double(j.at("mean_her2"));
  return s;
}

Json record_json(const NucleusRecord& r) {
  Json j;
  j["id"] = r.id;
  j["polygon"] = polygon_json(r.polygon);
  j["crop"] = {{"x", r.crop_x}, {"y", r.crop_y}, {"width", r.crop_width}, {"height", r.crop_height}};
  Json cls = {{"class", to_string(r.classifier.cls)},
              {"source", r.classifier.source},
              {"rationale", r.classifier.rationale},
              {"screen", r.classifier.screen ? Json(to_string(*r.classifier.screen)) : Json(nullptr)}};
  cls["probabilities"] = r.classifier.probabilities ? Json(*r.classifier.probabilities) : Json(nullptr);
  j["classifier"] = cls;
  j["detector_class"] = to_string(r.detector_class);
  if (r.opinion)
    j["opinion"] = {{"consistent", r.opinion->consistent},
                    {"classifier", to_string(r.opinion->classifier)},
                    {"detector", to_string(r.opinion->detector)}};
  else
    j["opinion"] = nullptr;
  Json sig = Json::array();
  for (const auto& s : r.signals) sig.push_back(signal_json(s));
  j["signals"] = sig;
  j["score"] = {{"her2_copies", r.score.her2_copies},
                {"cep17_copies", r.score.cep17_copies},
                {"ratio", opt(r.score.ratio)},
                {"evaluable", r.score.evaluable},
                {"exclusion_reason", r.score.exclusion_reason}};
  if (r.cam) {
    std::vector<float> v(r.cam->values().begin(), r.cam->values().end());
    j["cam"] = {{"width", r.cam->width()}, {"height", r.cam->height()}, {"values", v}};
  } else {
    j["cam"] = nullptr;
  }
  j["cam_note"] = r.cam_note;
  j["review"] = {{"class", r.review.cls ? Json(to_string(*r.review.cls)) : Json(nullptr)},
                 {"inclusion", to_string(r.review.inclusion)}};
  j["effective_class"] = to_string(r.effective_class());
  j["error"] = r.error;
  return j;
}

NucleusRecord record_from_json(const Json& j) {
  NucleusRecord r;
  r.id = j.at("id").get<int>();
  r.polygon = polygon_from_json(j.at("polygon"));
  const Json& crop = j.at("crop");
  r.crop_x = crop.at("x").get<int>();
  r.crop_y = crop.at("y").get<int>();
  r.crop_width = crop.at("width").get<int>();
  r.crop_height = crop.at("height").get<int>();
  const Json& cls = j.at("classifier");
  r.classifier.cls = nucleus_class(cls.at("class"));
  r.classifier.source = cls.at("source").get<std::string>();
  r.classifier.rationale = cls.at("rationale").get<std::string>();
  if (!cls.at("screen").is_null()) r.classifier.screen = nucleus_class(cls.at("screen"));
  if (!cls.at("probabilities").is_null())
    r.classifier.probabilities = cls.at("probabilities").get<std::array<double, kNucleusClassCount>>();
  r.detector_class = nucleus_class(j.at("detector_class"));
  if (const Json& o = j.at("opinion"); !o.is_null())
    r.opinion = SecondOpinion{o.at("consistent").get<bool>(), nucleus_class(o.at("classifier")),
                              nucleus_class(o.at("detector"))};
  for (const auto& s : j.at("signals"))
    r.signals.push_back(signal_from_json(s));
  const Json& sc = j.at("score");
  r.score.her2_copies = sc.at("her2_copies").get<int>();
  r.score.cep17_copies = sc.at("cep17_copies").get<int>();
  r.score.ratio = opt_double(sc.at("ratio"));
  r.score.evaluable = sc.at("evaluable").get<bool>();
  r.score.exclusion_reason = sc.at("exclusion_reason").get<std::string>();
  if (const Json& c = j.at("cam"); !c.is_null()) {
    FloatGrid g(c.at("width").get<int>(), c.at("height").get<int>(), 0.0f);
    const auto v = c.at("values").get<std::vector<float>>();
    if (v.size() != g.storage().size()) throw InputError("cam values do not match its dims");
    std::copy(v.begin(), v.end(), g.storage().begin());
    r.cam = std::move(g);
  }
  r.cam_note = j.at("cam_note").get<std::string>();
  const Json& rv = j.at("review");
  if (!rv.at("class").is_null()) r.review.cls = nucleus_class(rv.at("class"));
  const std::string inc = rv.at("inclusion").get<std::string>();
  if (inc == "excluded")
    r.review.inclusion = Inclusion::Excluded;
  else if (inc == "included")
    r.review.inclusion = Inclusion::Included;
  else if (inc != "default")
    throw InputError("unknown inclusion " + inc);
  r.error = j.at("error").get<std::string>();
  return r;
}

MetricsReport metrics_from_json(const Json& j) {
  MetricsReport m;
  const Json& n = j.at("nuclei");
  m.nucleus_iou = n.at("iou").get<double>();
  m.nucleus_gt = n.at("gt").get<int>();
  m.nucleus_pred = n.at("pred").get<int>();
  m.nucleus_tp = n.at("tp").get<int>();
  m.nucleus_precision = opt_double(n.at("precision"));
  m.nucleus_recall = opt_double(n.at("recall"));
  m.signal_iou = j.at("signal_iou").get<double>();
  for (const auto& s : j.at("signals"))
    m.signals.push_back({signal_class(s.at("class")), s.at("gt").get<int>(), s.at("pred").get<int>(),
                         s.at("tp").get<int>(), opt_double(s.at("precision")), opt_double(s.at("recall")),
                         opt_double(s.at("ap"))});
  m.mean_ap = opt_double(j.at("mean_ap"));
  const Json& st = j.at("status");
  m.predicted_status = her_status(st.at("predicted"));
  m.true_status = her_status(st.at("truth"));
  m.status_agrees = st.at("agrees").get<bool>();
  return m;
}

Json parse_text(const std::string& text, const char* what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::string slurp(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

}  // namespace

Json to_json(const MetricsReport& m) {
  Json sig = Json::array();
  for (const auto& c : m.signals)
    sig.push_back({{"class", to_string(c.cls)},
                   {"gt", c.n_gt},
                   {"pred", c.n_pred},
                   {"tp", c.tp},
                   {"precision", opt(c.precision)},
                   {"recall", opt(c.recall)},
                   {"ap", opt(c.ap)}});
  return {{"nuclei",
           {{"iou", m.nucleus_iou},
            {"gt", m.nucleus_gt},
            {"pred", m.nucleus_pred},
            {"tp", m.nucleus_tp},
            {"precision", opt(m.nucleus_precision)},
            {"recall", opt(m.nucleus_recall)}}},
          {"signal_iou", m.signal_iou},
          {"signals", sig},
          {"mean_ap", opt(m.mean_ap)},
          {"status",
           {{"predicted", to_string(m.predicted_status)},
            {"truth", to_string(m.true_status)},
            {"agrees", m.status_agrees}}}};
}

Json to_json(const SlideReport& r) {
  Json j;
  j["schema"] = kSchema;
  j["tool_version"] = kToolVersion;
  j["generated_at"] = r.generated_at;
  j["slide"] = {{"width", r.slide.width}, {"height", r.slide.height}, {"input_sha256", r.slide.input_sha256}};
  j["config"] = to_json(r.config);
  j["reference_singleton_area"] = r.reference_area;
  j["status"] = status_json(r.status);
  Json nuclei = Json::array();
  for (const auto& n : r.nuclei) nuclei.push_back(record_json(n));
  j["nuclei"] = nuclei;
  if (r.metrics) j["metrics"] = to_json(*r.metrics);
  return j;
}

SlideReport report_from_json(const Json& j) {
  try {
    if (j.at("schema").get<std::string>() != kSchema)
      throw InputError("unsupported report schema " + j.at("schema").get<std::string>());
    SlideReport r;
    r.generated_at = j.at("generated_at").get<std::string>();
    const Json& s = j.at("slide");
    r.slide = {s.at("width").get<int>(), s.at("height").get<int>(), s.at("input_sha256").get<std::string>()};
    r.config = pipeline_config_from_json(j.at("config"));
    r.reference_area = j.at("reference_singleton_area").get<double>();
    r.status = status_from_json(j.at("status"));
    for (const auto& n : j.at("nuclei")) r.nuclei.push_back(record_from_json(n));
    if (j.contains("metrics")) r.metrics = metrics_from_json(j.at("metrics"));
    return r;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed report: ") + e.what());
  }
}

std::string write_report_json(const SlideReport& r) { return to_json(r).dump(2) + "\n"; }

SlideReport parse_report(const std::string& text) { return report_from_json(parse_text(text, "report")); }

SlideReport load_report(const std::filesystem::path& path) { return parse_report(slurp(path)); }

Json to_json(const GroundTruth& gt) {
  Json nuclei = Json::array();
  for (const auto& n : gt.nuclei) {
    Json sig = Json::array();
    for (const auto& s : n.signals)
      sig.push_back({{"class", to_string(s.cls)}, {"box", box_json(s.box)}, {"true_copies", s.true_copies}});
    nuclei.push_back({{"polygon", polygon_json(n.polygon)}, {"class", to_string(n.cls)}, {"signals", sig}});
  }
  return {{"schema", kSchema},
          {"kind", "ground_truth"},
          {"width", gt.width},
          {"height", gt.height},
          {"status", to_string(gt.status)},
          {"evaluable_count", gt.evaluable_count},
          {"nuclei", nuclei}};
}

GroundTruth ground_truth_from_json(const Json& j) {
  try {
    if (j.at("kind").get<std::string>() != "ground_truth") throw InputError("not a ground-truth file");
    GroundTruth gt;
    gt.width = j.at("width").get<int>();
    gt.height = j.at("height").get<int>();
    gt.status = her_status(j.at("status"));
    gt.evaluable_count = j.at("evaluable_count").get<int>();
    for (const auto& n : j.at("nuclei")) {
      GtNucleus g{polygon_from_json(n.at("polygon")), nucleus_class(n.at("class")), {}};
      for (const auto& s : n.at("signals"))
        g.signals.push_back({signal_class(s.at("class")), box_from_json(s.at("box")), s.at("true_copies").get<int>()});
      gt.nuclei.push_back(std::move(g));
    }
    return gt;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed ground truth: ") + e.what());
  }
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  return ground_truth_from_json(parse_text(slurp(path), "ground truth"));
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<OverlayLayer> parse_overlay_layer(std::string_view s) {
  if (s == "all") return OverlayLayer::All;
  if (s == "nuclei") return OverlayLayer::Nuclei;
  if (s == "signals") return OverlayLayer::Signals;
  if (s == "cam") return OverlayLayer::Cam;
  return std::nullopt;
}

namespace {

cv::Scalar class_colour(NucleusClass c) {  // BGR
  switch (c) {
    case NucleusClass::Normal:
      return {0, 200, 0};
    case NucleusClass::LowAmp:
      return {0, 220, 220};
    case NucleusClass::HighAmp:
      return {0, 0, 255};
    case NucleusClass::Artifact:
      return {160, 160, 160};
    case NucleusClass::Background:
      return {255, 128, 0};
  }
  return {255, 255, 255};
}

cv::Scalar signal_colour(SignalClass c) {
  switch (c) {
    case SignalClass::Her2:
      return {255, 0, 255};
    case SignalClass::Her2Cluster:
      return {0, 128, 255};
    case SignalClass::Cep17:
      return {255, 255, 0};
  }
  return {255, 255, 255};
}

cv::Mat to_bgr8(const MultiChannelImage& image) {
  cv::Mat m(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      auto q = [&](Channel c) { return static_cast<uchar>(std::lround(image.at(c, x, y) * 255.0f)); };
      row[x] = {q(Channel::Dapi), q(Channel::Cep17), q(Channel::Her2)};
    }
  }
  return m;
}

cv::Point px(double x, double y) { return {static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))}; }

Bytes encode(const cv::Mat& m) {
  std::vector<uchar> out;
  if (!cv::imencode(".png", m, out)) throw InputError("PNG encoding failed");
  return Bytes(out.begin(), out.end());
}

}  // namespace

Overlay render_overlay(const MultiChannelImage& image, const SlideReport& report, const OverlayOptions& options) {
  Overlay out;
  cv::Mat canvas = to_bgr8(image);

  if (options.layer == OverlayLayer::Cam) {
    const NucleusRecord* rec = nullptr;
    for (const auto& r : report.nuclei)
      if (r.id == options.nucleus_id) rec = &r;
    if (!rec) throw NotFoundError("no nucleus " + std::to_string(options.nucleus_id));
    if (!rec->cam) throw NotFoundError("no CAM stored for nucleus " + std::to_string(rec->id) + ": " + rec->cam_note);
    const cv::Rect roi = cv::Rect(rec->crop_x, rec->crop_y, rec->crop_width, rec->crop_height) &
                         cv::Rect(0, 0, canvas.cols, canvas.rows);
    if (roi.empty()) throw NotFoundError("nucleus crop lies outside the image");
    const FloatGrid up = upsample_bilinear(*rec->cam, roi.width, roi.height);
    cv::Mat heat8(roi.height, roi.width, CV_8U);
    for (int y = 0; y < roi.height; ++y)
      for (int x = 0; x < roi.width; ++x) heat8.at<uchar>(y, x) = static_cast<uchar>(std::lround(up.at(x, y) * 255.0f));
    cv::Mat heat;
    cv::applyColorMap(heat8, heat, cv::COLORMAP_JET);
    cv::Mat blended;
    cv::addWeighted(canvas(roi), 0.5, heat, 0.5, 0.0, blended);
    out.png = encode(blended);
    return out;
  }

  const bool nuclei = options.layer == OverlayLayer::All || options.layer == OverlayLayer::Nuclei;
  const bool signals = options.layer == OverlayLayer::All || options.layer == OverlayLayer::Signals;
  for (const auto& r : report.nuclei) {
    if (nuclei && !r.polygon.degenerate()) {
      std::vector<cv::Point> pts;
      for (const auto& v : polygon_from_rays(r.polygon)) pts.push_back(px(v.x, v.y));
      cv::polylines(canvas, pts, true, class_colour(r.effective_class()), 1, cv::LINE_8);
      ++out.polygons_drawn;
    }
    if (signals)
      for (const auto& s : r.signals) {
        cv::rectangle(canvas, px(s.box.x0, s.box.y0), px(s.box.x1, s.box.y1), signal_colour(s.cls), 1, cv::LINE_8);
        ++out.boxes_drawn;
      }
  }
  if (options.banner) {
    std::ostringstream text;
    text << "HER2 " << to_string(report.status.status) << "  n=" << report.status.evaluable_count;
    if (report.status.mean_ratio) text << "  ratio=" << std::round(*report.status.mean_ratio * 100.0) / 100.0;
    const int h = std::max(18, canvas.rows / 40);
    cv::rectangle(canvas, cv::Rect(0, 0, canvas.cols, h), cv::Scalar(0, 0, 0), cv::FILLED);
    cv::putText(canvas, text.str(), {4, h - 5}, cv::FONT_HERSHEY_SIMPLEX, h / 30.0, cv::Scalar(255, 255, 255), 1);
  }
  out.png = encode(canvas);
  return out;
}

}  // namespace fishgrade
