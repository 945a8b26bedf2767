#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fishgrade/config.hpp"
#include "fishgrade/evaluation.hpp"
#include "fishgrade/image.hpp"
#include "fishgrade/image_io.hpp"
#include "fishgrade/record.hpp"
#include "fishgrade/simulator.hpp"

namespace fishgrade {

inline constexpr const char* kSchema = "fishgrade/1";
inline constexpr const char* kToolVersion = "0.1.0";

struct SlideInfo {
  int width = 0;
  int height = 0;
  std::string input_sha256;
};

struct SlideReport {
  std::string generated_at;  // the only field that varies between identical runs
  SlideInfo slide;
  PipelineConfig config;
  double reference_area = 0.0;  // singleton HER2 box area used for clusters
  SlideStatus status;
  std::vector<NucleusRecord> nuclei;
  std::optional<MetricsReport> metrics;

  NucleusRecord* find(int id);
};

// Recompute counts, rule-classifier grades, opinions, exclusions and the
// slide status from stored signals under report.config. Never re-detects.
void regrade(SlideReport& report);

Json to_json(const SlideReport& r);
SlideReport report_from_json(const Json& j);
std::string write_report_json(const SlideReport& r);
SlideReport parse_report(const std::string& text);
SlideReport load_report(const std::filesystem::path& path);

Json to_json(const MetricsReport& m);
Json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const Json& j);
GroundTruth load_ground_truth(const std::filesystem::path& path);

Json polygon_json(const StarPolygon& p);
StarPolygon polygon_from_json(const Json& j);
Json signal_json(const SignalBox& s);
SignalBox signal_from_json(const Json& j);

std::string utc_timestamp();

enum class OverlayLayer { All, Nuclei, Signals, Cam };
std::optional<OverlayLayer> parse_overlay_layer(std::string_view s);

struct OverlayOptions {
  OverlayLayer layer = OverlayLayer::All;
  int nucleus_id = -1;  // required for the CAM layer
  bool banner = true;
};

struct Overlay {
  Bytes png;
  int polygons_drawn = 0;
  int boxes_drawn = 0;
};

// RGB rendering of the slide (R = HER2, G = CEP17, B = DAPI) with polygon
// outlines coloured by effective class, signal boxes and a status banner.
// The CAM layer renders the nucleus crop with its heat map blended in and
// throws NotFoundError when no CAM is stored.
Overlay render_overlay(const MultiChannelImage& image, const SlideReport& report, const OverlayOptions& options);

}  // namespace fishgrade
