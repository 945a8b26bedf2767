#include "fishgrade/types.hpp"

#include <algorithm>

namespace fishgrade {

std::string_view to_string(SignalClass c) {
  switch (c) {
    case SignalClass::Her2:
      return "HER2";
    case SignalClass::Her2Cluster:
      return "HER2Cluster";
    case SignalClass::Cep17:
      return "CEP17";
  }
  return "?";
}

std::optional<SignalClass> parse_signal_class(std::string_view s) {
  for (auto c : kAllSignalClasses)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::string_view to_string(NucleusClass c) {
  switch (c) {
    case NucleusClass::Artifact:
      return "Artifact";
    case NucleusClass::Background:
      return "Background";
    case NucleusClass::Normal:
      return "Normal";
    case NucleusClass::LowAmp:
      return "LowAmp";
    case NucleusClass::HighAmp:
      return "HighAmp";
  }
  return "?";
}

std::optional<NucleusClass> parse_nucleus_class(std::string_view s) {
  for (int i = 0; i < kNucleusClassCount; ++i) {
    const auto c = static_cast<NucleusClass>(i);
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace fishgrade
