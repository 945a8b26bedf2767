#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fishgrade/image.hpp"
#include "fishgrade/rng.hpp"
#include "fishgrade/scoring.hpp"
#include "fishgrade/star_polygon.hpp"
#include "fishgrade/types.hpp"

namespace fishgrade {

struct ClassMix {
  double normal = 0.45;
  double low_amp = 0.20;
  double high_amp = 0.25;
  double artifact = 0.10;
};

// Synthetic slide knobs. Defaults give a 1600 x 1200 canvas with ~30
// nuclei, mild shot noise and a few out-of-channel smears.
struct SimConfig {
  int width = 1600;
  int height = 1200;
  int min_nuclei = 25;
  int max_nuclei = 35;
  double min_radius = 24.0;
  double max_radius = 34.0;
  int n_rays = 32;
  double shape_jitter = 0.12;  // relative radial perturbation before smoothing
  ClassMix mix;
  double cluster_fraction = 0.5;  // HighAmp nuclei drawn with a HER2 cluster
  double psf_sigma = 1.5;
  double signal_amplitude_min = 0.55;
  double signal_amplitude_max = 0.9;
  double dapi_min = 0.35;
  double dapi_max = 0.7;
  double noise_sigma = 0.03;
  double artifact_density = 4.0;  // smears per megapixel, outside nuclei
  bool allow_overlap = false;
  double min_gap = 6.0;                 // px between non-overlapping nuclei
  double min_signal_separation = 8.0;   // px between single-signal centres
  double cluster_spot_spacing = 4.5;    // px between copies inside a cluster

  void validate() const;

  // Same geometry, no noise and no smears.
  static SimConfig noiseless();
};

struct GtSignal {
  SignalClass cls = SignalClass::Her2;
  Box box;
  int true_copies = 1;
  friend bool operator==(const GtSignal&, const GtSignal&) = default;
};

struct GtNucleus {
  StarPolygon polygon;
  NucleusClass cls = NucleusClass::Normal;
  std::vector<GtSignal> signals;

  int her2_copies() const;
  int cep17_copies() const;
  friend bool operator==(const GtNucleus&, const GtNucleus&) = default;
};

struct GroundTruth {
  int width = 0;
  int height = 0;
  std::vector<GtNucleus> nuclei;
  HerStatus status = HerStatus::Indeterminate;
  int evaluable_count = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct SimulatedSlide {
  MultiChannelImage image;
  GroundTruth truth;
};

SimulatedSlide simulate_slide(const SimConfig& config, std::uint64_t seed);

// Signals for one nucleus, centres strictly inside the polygon.
//   Normal:  1-2 CEP17, HER2 singles keeping the ratio below 2.
//   LowAmp:  1-2 CEP17, HER2 singles with ratio >= 2 and fewer than 6.
//   HighAmp: 1-2 CEP17 and either 6-10 HER2 singles or one HER2 cluster of
//            6-12 copies plus two singles.
// Throws PlacementError when the polygon cannot hold them.
std::vector<GtSignal> place_signals(const StarPolygon& polygon, NucleusClass cls, Rng& rng,
                                    const SimConfig& config);

// Slide status by the simulator's own tally of true copies under the
// default thresholds; kept separate from the scoring module on purpose.
HerStatus tally_status(const std::vector<GtNucleus>& nuclei, int* evaluable = nullptr);

struct AugmentSpec {
  int rot90 = 0;  // counter-clockwise quarter turns, 0..3
  bool hflip = false;
  bool vflip = false;
  double brightness = 0.0;  // additive
  double contrast = 1.0;    // multiplicative about 0.5
};

MultiChannelImage augment(const MultiChannelImage& image, const AugmentSpec& spec);

// Rendered spot used by both the simulator and tests.
void add_gaussian_spot(FloatGrid& plane, Point center, double sigma, double amplitude);

}  // namespace fishgrade
