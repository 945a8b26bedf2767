#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "fishgrade/types.hpp"

namespace fishgrade {

struct NucleusRecord;

// Cluster boxes count as area / reference-singleton-area copies, clamped.
struct ClusterCopyRule {
  enum class ReferenceSource { MedianSingles, Fixed };
  ReferenceSource source = ReferenceSource::MedianSingles;
  double fixed_reference_area = 36.0;  // used when source == Fixed
  int floor = 4;
  int cap = 20;
  friend bool operator==(const ClusterCopyRule&, const ClusterCopyRule&) = default;
};

struct ScoringConfig {
  double ratio_threshold = 2.0;
  double high_amp_mean_her2_copies = 6.0;
  int min_evaluable_nuclei = 20;
  ClusterCopyRule cluster;
  bool include_discrepant = false;

  void validate() const;
  friend bool operator==(const ScoringConfig&, const ScoringConfig&) = default;
};

int estimate_cluster_copies(double cluster_area, double reference_area, const ScoringConfig& config);

struct CopyCounts {
  int her2 = 0;
  int cep17 = 0;
  // Undefined without a CEP17 reference signal.
  std::optional<double> ratio() const;
  friend bool operator==(const CopyCounts&, const CopyCounts&) = default;
};

CopyCounts nucleus_counts(std::span<const SignalBox> signals, const ScoringConfig& config,
                          double reference_area);

// Median HER2-single box area over `singles`; `fallback` when empty.
double reference_singleton_area(std::span<const double> single_areas, double fallback);

// Per-nucleus grading rule shared by the rule classifier and the signal
// opinion: ratio below threshold -> Normal, else HighAmp when HER2 copies
// reach the high-amp threshold, else LowAmp. An undefined ratio grades
// Normal unless HER2 alone reaches the high-amp threshold.
struct GradeVerdict {
  NucleusClass cls;
  std::string rationale;
};
GradeVerdict grade_nucleus(const CopyCounts& counts, const ScoringConfig& config);

struct NucleusScore {
  int her2_copies = 0;
  int cep17_copies = 0;
  std::optional<double> ratio;
  bool evaluable = false;
  std::string exclusion_reason;
  friend bool operator==(const NucleusScore&, const NucleusScore&) = default;
};

enum class HerStatus { Negative, PositiveLow, PositiveHigh, Indeterminate };
std::string_view to_string(HerStatus s);
std::optional<HerStatus> parse_her_status(std::string_view s);

struct SlideStatus {
  HerStatus status = HerStatus::Indeterminate;
  int evaluable_count = 0;
  long her2_total = 0;
  long cep17_total = 0;
  std::optional<double> mean_ratio;
  std::optional<double> mean_her2;
  friend bool operator==(const SlideStatus&, const SlideStatus&) = default;
};

// Whether a record enters slide aggregates; empty reason means evaluable.
std::string exclusion_reason(const NucleusRecord& record, const ScoringConfig& config);

SlideStatus slide_status(std::span<const NucleusRecord> records, const ScoringConfig& config);

// Status from already-selected evaluable copy counts (pooled ratio).
SlideStatus status_from_counts(std::span<const CopyCounts> evaluable, const ScoringConfig& config);

}  // namespace fishgrade
