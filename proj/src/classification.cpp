#include "fishgrade/classification.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fishgrade/error.hpp"

namespace fishgrade {

void ClassifierConfig::validate() const {
  auto frac = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(name, "must lie in [0,1]");
  };
  frac(min_dapi_coverage, "classifier.min_dapi_coverage");
  frac(dapi_level, "classifier.dapi_level");
  frac(saturation_level, "classifier.saturation_level");
  frac(max_saturated_fraction, "classifier.max_saturated_fraction");
  if (!(max_area_px > 0.0)) throw ConfigError("classifier.max_area_px", "must be > 0");
  if (!(max_aspect_ratio >= 1.0)) throw ConfigError("classifier.max_aspect_ratio", "must be >= 1");
}

std::optional<RuleVerdict> screen_crop(const NucleusCrop& crop, const ClassifierConfig& config) {
  const auto& m = crop.mask;
  long inside = 0, covered = 0, saturated = 0;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      ++inside;
      if (crop.image.at(Channel::Dapi, x, y) > config.dapi_level) ++covered;
      for (Channel c : kAllChannels)
        if (crop.image.at(c, x, y) >= config.saturation_level) {
          ++saturated;
          break;
        }
      sx += x;
      sy += y;
      sxx += double(x) * x;
      syy += double(y) * y;
      sxy += double(x) * y;
    }

  std::ostringstream why;
  const double coverage = inside ? double(covered) / double(inside) : 0.0;
  if (coverage < config.min_dapi_coverage) {
    why << "DAPI coverage " << coverage << " < " << config.min_dapi_coverage;
    return RuleVerdict{NucleusClass::Background, why.str()};
  }
  const double sat = double(saturated) / double(inside);
  if (sat > config.max_saturated_fraction) {
    why << "saturated fraction " << sat << " > " << config.max_saturated_fraction;
    return RuleVerdict{NucleusClass::Artifact, why.str()};
  }
  if (double(inside) > config.max_area_px) {
    why << "area " << inside << " px > " << config.max_area_px;
    return RuleVerdict{NucleusClass::Artifact, why.str()};
  }
  const double n = double(inside);
  const double cxx = sxx / n - (sx / n) * (sx / n), cyy = syy / n - (sy / n) * (sy / n);
  const double cxy = sxy / n - (sx / n) * (sy / n);
  const double tr = cxx + cyy, det = cxx * cyy - cxy * cxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
  const double l1 = tr / 2 + disc, l2 = tr / 2 - disc;
  const double aspect = l2 > 1e-12 ? std::sqrt(l1 / l2) : INFINITY;
  if (aspect > config.max_aspect_ratio) {
    why << "aspect ratio " << aspect << " > " << config.max_aspect_ratio;
    return RuleVerdict{NucleusClass::Artifact, why.str()};
  }
  return std::nullopt;
}

RuleVerdict classify_by_rules(const NucleusCrop& crop, std::span<const SignalBox> signals,
                              const ClassifierConfig& config, const ScoringConfig& scoring, double reference_area) {
  if (auto screened = screen_crop(crop, config)) return *screened;
  const auto grade = grade_nucleus(nucleus_counts(signals, scoring, reference_area), scoring);
  return {grade.cls, grade.rationale};
}

ScoreVerdict classify_by_scores(std::span<const double> logits) {
  if (logits.size() != kNucleusClassCount)
    throw InputError("classifier logits must have " + std::to_string(kNucleusClassCount) + " entries");
  for (double v : logits)
    if (!std::isfinite(v)) throw InputError("classifier logits must be finite");
  const double mx = *std::max_element(logits.begin(), logits.end());
  ScoreVerdict out{};
  double sum = 0.0;
  for (int i = 0; i < kNucleusClassCount; ++i) sum += out.probabilities[i] = std::exp(logits[i] - mx);
  for (double& p : out.probabilities) p /= sum;
  int best = 0;
  for (int i = 1; i < kNucleusClassCount; ++i)
    if (logits[i] > logits[best]) best = i;
  out.cls = static_cast<NucleusClass>(best);
  return out;
}

FloatGrid cam_low_res(const Tensor& features, std::span<const double> class_weights) {
  if (features.rank() != 3 || features.dims[0] < 1 || features.dims[1] < 1 || features.dims[2] < 1)
    throw ShapeError("CAM features must be [C, h, w] with positive dims");
  const std::uint32_t C = features.dims[0], h = features.dims[1], w = features.dims[2];
  if (class_weights.size() != C)
    throw ShapeError("CAM weights have " + std::to_string(class_weights.size()) + " entries, features have " +
                     std::to_string(C) + " channels");
  std::vector<double> raw(static_cast<std::size_t>(h) * w, 0.0);
  for (std::uint32_t c = 0; c < C; ++c)
    for (std::uint32_t y = 0; y < h; ++y)
      for (std::uint32_t x = 0; x < w; ++x) raw[y * w + x] += class_weights[c] * features.at({c, y, x});
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  FloatGrid out(static_cast<int>(w), static_cast<int>(h), 0.0f);
  const double range = *hi - *lo;
  if (range > 0.0)
    for (std::size_t i = 0; i < raw.size(); ++i) out.storage()[i] = static_cast<float>((raw[i] - *lo) / range);
  return out;
}

FloatGrid upsample_bilinear(const FloatGrid& src, int width, int height) {
  FloatGrid out(width, height, 0.0f);
  if (src.empty()) return out;
  const double sx = double(src.width()) / width, sy = double(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy)), y1 = std::min(y0 + 1, src.height() - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx)), x1 = std::min(x0 + 1, src.width() - 1);
      const double ax = fx - x0;
      const double v = (1 - ay) * ((1 - ax) * src.at(x0, y0) + ax * src.at(x1, y0)) +
                       ay * ((1 - ax) * src.at(x0, y1) + ax * src.at(x1, y1));
      out.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

FloatGrid compute_cam(const Tensor& features, std::span<const double> class_weights, int crop_width,
                      int crop_height) {
  return upsample_bilinear(cam_low_res(features, class_weights), crop_width, crop_height);
}

SecondOpinion second_opinion(NucleusClass classifier, NucleusClass detector) {
  return {classifier == detector, classifier, detector};
}

}  // namespace fishgrade
