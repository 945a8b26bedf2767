#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fishgrade/classification.hpp"
#include "fishgrade/scoring.hpp"
#include "fishgrade/segmentation.hpp"
#include "fishgrade/signals.hpp"

namespace fishgrade {

using Json = nlohmann::ordered_json;

// Where each learned stage gets its predictions. "reference" uses the
// built-in algorithmic stand-ins; "external" reads tensors from disk.
struct SegmentationSource {
  bool external = false;
  std::string prob_path;  // FGT1 [H, W] at working resolution
  std::string dist_path;  // FGT1 [R, H, W]
  friend bool operator==(const SegmentationSource&, const SegmentationSource&) = default;
};

struct SignalSource {
  bool external = false;
  std::string descriptor;  // heads sidecar with a "nuclei" map
  friend bool operator==(const SignalSource&, const SignalSource&) = default;
};

// External classifier sidecar:
//   {"nucleus_ids": [...], "logits": "l.fgt",          [N, 5]
//    "features": "f.fgt", "weights": "w.fgt"}          [N, C, h, w], [5, C]
struct ClassifierSource {
  bool external = false;
  std::string descriptor;
  friend bool operator==(const ClassifierSource&, const ClassifierSource&) = default;
};

struct PipelineConfig {
  int downscale = 2;
  int tile_size = 1024;
  int tile_overlap = 128;
  int crop_margin = 10;
  SegConfig segmentation;
  ReferenceSegConfig reference_segmentation;
  DetectorConfig detector;
  ClassifierConfig classifier;
  ScoringConfig scoring;
  SegmentationSource segmentation_source;
  SignalSource signal_source;
  ClassifierSource classifier_source;

  void validate() const;
};

// Strict readers: unknown keys and wrong types raise ConfigError naming the
// dotted key path. Missing keys keep their defaults.
Json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const Json& j);
Json to_json(const ScoringConfig& c);
ScoringConfig scoring_config_from_json(const Json& j, const ScoringConfig& base = {});

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace fishgrade
