#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "fishgrade/star_polygon.hpp"

namespace fishgrade {

enum class SignalClass { Her2 = 0, Her2Cluster = 1, Cep17 = 2 };
inline constexpr int kSignalClassCount = 3;
inline constexpr std::array<SignalClass, 3> kAllSignalClasses = {
    SignalClass::Her2, SignalClass::Her2Cluster, SignalClass::Cep17};

std::string_view to_string(SignalClass c);
std::optional<SignalClass> parse_signal_class(std::string_view s);

// Order matters: classify_by_scores breaks ties by this order.
enum class NucleusClass { Artifact = 0, Background = 1, Normal = 2, LowAmp = 3, HighAmp = 4 };
inline constexpr int kNucleusClassCount = 5;

std::string_view to_string(NucleusClass c);
std::optional<NucleusClass> parse_nucleus_class(std::string_view s);

// Normal/LowAmp/HighAmp take part in grading; Artifact/Background filter.
constexpr bool is_gradable(NucleusClass c) {
  return c == NucleusClass::Normal || c == NucleusClass::LowAmp || c == NucleusClass::HighAmp;
}

// Axis-aligned box in pixel-center coordinates.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const noexcept { return x1 - x0; }
  double height() const noexcept { return y1 - y0; }
  double area() const noexcept { return width() * height(); }
  Point center() const noexcept { return {(x0 + x1) * 0.5, (y0 + y1) * 0.5}; }
  Box translated(double dx, double dy) const noexcept { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }
  friend bool operator==(const Box&, const Box&) = default;
};

double box_iou(const Box& a, const Box& b);

struct SignalBox {
  SignalClass cls = SignalClass::Her2;
  Box box;
  double score = 1.0;
  friend bool operator==(const SignalBox&, const SignalBox&) = default;
};

}  // namespace fishgrade
