#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "fishgrade/grid.hpp"
#include "fishgrade/scoring.hpp"
#include "fishgrade/segmentation.hpp"
#include "fishgrade/tensor_io.hpp"
#include "fishgrade/types.hpp"

namespace fishgrade {

struct ClassifierConfig {
  double min_dapi_coverage = 0.5;   // fraction of polygon pixels above dapi_level
  double dapi_level = 0.1;
  double saturation_level = 0.98;   // any channel at or above counts as saturated
  double max_saturated_fraction = 0.05;
  double max_area_px = 9000.0;      // polygon pixels at slide resolution
  double max_aspect_ratio = 3.0;    // major/minor axis from second moments

  void validate() const;
};

struct RuleVerdict {
  NucleusClass cls;
  std::string rationale;
};

// Background/Artifact screen on the masked crop alone; nullopt means the
// nucleus is gradable and the count rule decides.
std::optional<RuleVerdict> screen_crop(const NucleusCrop& crop, const ClassifierConfig& config);

RuleVerdict classify_by_rules(const NucleusCrop& crop, std::span<const SignalBox> signals,
                              const ClassifierConfig& config, const ScoringConfig& scoring,
                              double reference_area);

struct ScoreVerdict {
  NucleusClass cls;
  std::array<double, kNucleusClassCount> probabilities;
};

// Softmax + argmax over external classifier logits (ties -> lowest class).
ScoreVerdict classify_by_scores(std::span<const double> logits);

// Class activation map: weighted sum of feature channels, min-max
// normalised (constant maps become all zeros). `features` is [C, h, w].
FloatGrid cam_low_res(const Tensor& features, std::span<const double> class_weights);

// Bilinear resampling with half-pixel centres, edges clamped.
FloatGrid upsample_bilinear(const FloatGrid& src, int width, int height);

FloatGrid compute_cam(const Tensor& features, std::span<const double> class_weights, int crop_width,
                      int crop_height);

struct SecondOpinion {
  bool consistent = true;
  NucleusClass classifier = NucleusClass::Normal;
  NucleusClass detector = NucleusClass::Normal;
  friend bool operator==(const SecondOpinion&, const SecondOpinion&) = default;
};

SecondOpinion second_opinion(NucleusClass classifier, NucleusClass detector);

}  // namespace fishgrade
