#include "fishgrade/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "fishgrade/error.hpp"
#include "fishgrade/record.hpp"

namespace fishgrade {

void ScoringConfig::validate() const {
  if (!(ratio_threshold > 0.0)) throw ConfigError("scoring.ratio_threshold", "must be > 0");
  if (!(high_amp_mean_her2_copies > 0.0)) throw ConfigError("scoring.high_amp_mean_her2_copies", "must be > 0");
  if (min_evaluable_nuclei < 1) throw ConfigError("scoring.min_evaluable_nuclei", "must be >= 1");
  if (cluster.floor < 1) throw ConfigError("scoring.cluster.floor", "must be >= 1");
  if (cluster.cap < cluster.floor) throw ConfigError("scoring.cluster.cap", "must be >= floor");
  if (!(cluster.fixed_reference_area > 0.0))
    throw ConfigError("scoring.cluster.fixed_reference_area", "must be > 0");
}

int estimate_cluster_copies(double cluster_area, double reference_area, const ScoringConfig& config) {
  if (!(cluster_area > 0.0) || !(reference_area > 0.0))
    throw InputError("cluster copy estimate needs positive areas");
  const double raw = std::round(cluster_area / reference_area);
  return static_cast<int>(std::clamp(raw, double(config.cluster.floor), double(config.cluster.cap)));
}

std::optional<double> CopyCounts::ratio() const {
  if (cep17 < 1) return std::nullopt;
  return static_cast<double>(her2) / static_cast<double>(cep17);
}

CopyCounts nucleus_counts(std::span<const SignalBox> signals, const ScoringConfig& config, double reference_area) {
  CopyCounts c;
  for (const auto& s : signals) {
    switch (s.cls) {
      case SignalClass::Her2:
        ++c.her2;
        break;
      case SignalClass::Her2Cluster:
        c.her2 += estimate_cluster_copies(s.box.area(), reference_area, config);
        break;
      case SignalClass::Cep17:
        ++c.cep17;
        break;
    }
  }
  return c;
}

double reference_singleton_area(std::span<const double> single_areas, double fallback) {
  if (single_areas.empty()) return fallback;
  std::vector<double> v(single_areas.begin(), single_areas.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

GradeVerdict grade_nucleus(const CopyCounts& counts, const ScoringConfig& config) {
  std::ostringstream why;
  why << "HER2 " << counts.her2 << " / CEP17 " << counts.cep17;
  const auto ratio = counts.ratio();
  if (!ratio) {
    if (counts.her2 >= config.high_amp_mean_her2_copies) {
      why << ", ratio undefined, HER2 >= " << config.high_amp_mean_her2_copies;
      return {NucleusClass::HighAmp, why.str()};
    }
    why << ", ratio undefined";
    return {NucleusClass::Normal, why.str()};
  }
  why << ", ratio " << *ratio;
  if (*ratio < config.ratio_threshold) {
    why << " < " << config.ratio_threshold;
    return {NucleusClass::Normal, why.str()};
  }
  why << " >= " << config.ratio_threshold;
  if (counts.her2 >= config.high_amp_mean_her2_copies) {
    why << ", HER2 >= " << config.high_amp_mean_her2_copies;
    return {NucleusClass::HighAmp, why.str()};
  }
  why << ", HER2 < " << config.high_amp_mean_her2_copies;
  return {NucleusClass::LowAmp, why.str()};
}

std::string_view to_string(HerStatus s) {
  switch (s) {
    case HerStatus::Negative:
      return "Negative";
    case HerStatus::PositiveLow:
      return "PositiveLow";
    case HerStatus::PositiveHigh:
      return "PositiveHigh";
    case HerStatus::Indeterminate:
      return "Indeterminate";
  }
  return "?";
}

std::optional<HerStatus> parse_her_status(std::string_view s) {
  for (auto v : {HerStatus::Negative, HerStatus::PositiveLow, HerStatus::PositiveHigh, HerStatus::Indeterminate})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::string_view to_string(Inclusion i) {
  switch (i) {
    case Inclusion::Default:
      return "default";
    case Inclusion::Excluded:
      return "excluded";
    case Inclusion::Included:
      return "included";
  }
  return "?";
}

std::string exclusion_reason(const NucleusRecord& r, const ScoringConfig& config) {
  if (!r.error.empty()) return "stage error";
  if (r.review.inclusion == Inclusion::Excluded) return "excluded by reviewer";
  if (!is_gradable(r.effective_class())) return "filter class " + std::string(to_string(r.effective_class()));
  if (r.score.cep17_copies < 1) return "no CEP17 signal";
  if (r.review.inclusion == Inclusion::Included || r.review.cls) return {};
  if (r.opinion && !r.opinion->consistent && !config.include_discrepant) return "discrepant opinions";
  return {};
}

SlideStatus status_from_counts(std::span<const CopyCounts> evaluable, const ScoringConfig& config) {
  SlideStatus s;
  s.evaluable_count = static_cast<int>(evaluable.size());
  for (const auto& c : evaluable) {
    s.her2_total += c.her2;
    s.cep17_total += c.cep17;
  }
  if (s.evaluable_count < config.min_evaluable_nuclei) {
    s.status = HerStatus::Indeterminate;
    if (s.cep17_total > 0) s.mean_ratio = double(s.her2_total) / double(s.cep17_total);
    if (s.evaluable_count > 0) s.mean_her2 = double(s.her2_total) / s.evaluable_count;
    return s;
  }
  s.mean_ratio = double(s.her2_total) / double(s.cep17_total);
  s.mean_her2 = double(s.her2_total) / s.evaluable_count;
  if (*s.mean_ratio < config.ratio_threshold)
    s.status = HerStatus::Negative;
  else if (*s.mean_her2 >= config.high_amp_mean_her2_copies)
    s.status = HerStatus::PositiveHigh;
  else
    s.status = HerStatus::PositiveLow;
  return s;
}

SlideStatus slide_status(std::span<const NucleusRecord> records, const ScoringConfig& config) {
  // Records enter in id order so the pooled sums never depend on list order.
  std::vector<const NucleusRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<CopyCounts> counts;
  for (const auto* r : sorted)
    if (exclusion_reason(*r, config).empty()) counts.push_back({r->score.her2_copies, r->score.cep17_copies});
  return status_from_counts(counts, config);
}

}  // namespace fishgrade
