#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fishgrade/classification.hpp"
#include "fishgrade/grid.hpp"
#include "fishgrade/scoring.hpp"
#include "fishgrade/star_polygon.hpp"
#include "fishgrade/types.hpp"

namespace fishgrade {

enum class Inclusion { Default, Excluded, Included };
std::string_view to_string(Inclusion i);

// Reviewer decisions. Machine fields on the record are never modified.
struct ReviewOverride {
  std::optional<NucleusClass> cls;
  Inclusion inclusion = Inclusion::Default;
  friend bool operator==(const ReviewOverride&, const ReviewOverride&) = default;
};

struct ClassifierOpinion {
  NucleusClass cls = NucleusClass::Background;
  std::string source;  // "rules" or "logits"
  std::string rationale;
  // Rule classifier: the crop screen verdict (Artifact/Background) when it
  // fired; re-grading keeps it and only re-derives gradable classes.
  std::optional<NucleusClass> screen;
  std::optional<std::array<double, kNucleusClassCount>> probabilities;
  friend bool operator==(const ClassifierOpinion&, const ClassifierOpinion&) = default;
};

struct NucleusRecord {
  int id = 0;
  StarPolygon polygon;  // slide coordinates
  int crop_x = 0, crop_y = 0, crop_width = 0, crop_height = 0;
  ClassifierOpinion classifier;
  NucleusClass detector_class = NucleusClass::Normal;  // signal-count opinion
  std::optional<SecondOpinion> opinion;                // only when classifier is gradable
  std::vector<SignalBox> signals;                      // slide coordinates
  NucleusScore score;
  std::optional<FloatGrid> cam;  // normalised low-resolution CAM
  std::string cam_note;          // why no CAM is stored
  ReviewOverride review;
  std::string error;             // stage failure; record is Artifact-by-error

  NucleusClass machine_class() const { return classifier.cls; }
  NucleusClass effective_class() const { return review.cls.value_or(classifier.cls); }

  friend bool operator==(const NucleusRecord&, const NucleusRecord&) = default;
};

}  // namespace fishgrade
