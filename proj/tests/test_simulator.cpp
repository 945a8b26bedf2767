#include <doctest.h>

#include <cmath>

#include "fishgrade/error.hpp"
#include "fishgrade/simulator.hpp"
#include "oracles.hpp"

using namespace fishgrade;

namespace {

struct Tally {
  int her2_singles = 0, cep17 = 0, clusters = 0, cluster_copies = 0;
};

Tally tally(const std::vector<GtSignal>& s) {
  Tally t;
  for (const auto& g : s) {
    if (g.cls == SignalClass::Her2) ++t.her2_singles;
    if (g.cls == SignalClass::Cep17) ++t.cep17;
    if (g.cls == SignalClass::Her2Cluster) ++t.clusters, t.cluster_copies += g.true_copies;
  }
  return t;
}

// |hits - n p| within 3 binomial standard deviations
bool within_3_sigma(int hits, int n, double p) {
  return std::abs(hits - n * p) <= 3 * std::sqrt(n * p * (1 - p));
}

bool same_image(const MultiChannelImage& a, const MultiChannelImage& b) { return a == b; }

MultiChannelImage random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  MultiChannelImage img(w, h);
  for (Channel c : kAllChannels)
    for (float& v : img.plane(c).values()) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("simulate_slide: empty and default canvas") {
  SimConfig sc;
  sc.min_nuclei = sc.max_nuclei = 0;
  const auto s = simulate_slide(sc, 1);
  CHECK(s.truth.nuclei.empty());
  CHECK(s.truth.status == HerStatus::Indeterminate);
  CHECK(s.image.width() == 1600);
  CHECK(s.image.height() == 1200);
  double dapi = 0;
  for (float v : s.image.plane(Channel::Dapi).values()) dapi += v;
  CHECK(dapi / (1600.0 * 1200) < 0.05);  // noise around zero, clamped

  const auto d = simulate_slide(SimConfig{}, 2);
  CHECK(d.image.width() == 1600);
  CHECK(d.image.height() == 1200);
  CHECK(d.truth.nuclei.size() >= 25);
  CHECK(d.truth.nuclei.size() <= 35);
}

TEST_CASE("simulate_slide: 25 nuclei, every signal centre inside its polygon") {
  SimConfig sc;
  sc.min_nuclei = sc.max_nuclei = 25;
  const auto s = simulate_slide(sc, 7);
  REQUIRE(s.truth.nuclei.size() == 25);
  for (const auto& n : s.truth.nuclei) {
    const auto v = oracle::vertices(n.polygon);
    for (const auto& g : n.signals) CHECK(oracle::inside(v, g.box.center()));
  }
}

TEST_CASE("simulate_slide: deterministic, seed-sensitive, image in range") {
  const SimConfig sc;
  const auto a = simulate_slide(sc, 42), b = simulate_slide(sc, 42), c = simulate_slide(sc, 43);
  CHECK(same_image(a.image, b.image));
  CHECK(a.truth == b.truth);
  CHECK_FALSE(a.truth == c.truth);
  CHECK_NOTHROW(a.image.validate());
}

TEST_CASE("simulate_slide: ground truth re-grades to its own classes and status") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SimConfig sc;
    sc.mix = {0.3, 0.3, 0.3, 0.1};
    const auto s = simulate_slide(sc, seed);
    std::vector<std::pair<int, int>> evaluable;
    for (const auto& n : s.truth.nuclei) {
      if (n.cls == NucleusClass::Artifact) {
        CHECK(n.signals.empty());
        continue;
      }
      const int h = n.her2_copies(), c = n.cep17_copies();
      REQUIRE(c >= 1);
      const double ratio = double(h) / c;
      const NucleusClass want = ratio < 2.0 ? NucleusClass::Normal
                                : h >= 6    ? NucleusClass::HighAmp
                                            : NucleusClass::LowAmp;
      CHECK(n.cls == want);
      evaluable.push_back({h, c});
    }
    CHECK(static_cast<int>(s.truth.status) == static_cast<int>(oracle::grade(evaluable)));
    CHECK(s.truth.evaluable_count == static_cast<int>(evaluable.size()));
  }
}

TEST_CASE("simulate_slide: non-overlapping nuclei") {
  const auto s = simulate_slide(SimConfig{}, 9);
  for (std::size_t i = 0; i < s.truth.nuclei.size(); ++i)
    for (std::size_t j = i + 1; j < s.truth.nuclei.size(); ++j)
      CHECK(oracle::grid_iou(s.truth.nuclei[i].polygon, s.truth.nuclei[j].polygon, 1.0) == 0.0);
}

TEST_CASE("place_signals: class rules") {
  const StarPolygon big{{100, 100}, std::vector<double>(32, 30.0)};
  const SimConfig sc;
  Rng rng(1);
  for (int t = 0; t < 300; ++t) {
    const auto n = tally(place_signals(big, NucleusClass::Normal, rng, sc));
    CHECK(n.clusters == 0);
    CHECK(n.her2_singles >= 1);
    CHECK(n.her2_singles <= 2);
    CHECK(double(n.her2_singles) / n.cep17 < 2.0);

    const auto l = tally(place_signals(big, NucleusClass::LowAmp, rng, sc));
    CHECK(l.clusters == 0);
    CHECK(double(l.her2_singles) / l.cep17 >= 2.0);
    CHECK(l.her2_singles < 6);

    const auto h = tally(place_signals(big, NucleusClass::HighAmp, rng, sc));
    if (h.clusters) {
      CHECK(h.clusters == 1);
      CHECK(h.cluster_copies >= 6);
    } else {
      CHECK(h.her2_singles >= 6);
    }
    CHECK(place_signals(big, NucleusClass::Artifact, rng, sc).empty());
  }
  CHECK_THROWS_AS(place_signals(big, NucleusClass::Background, rng, sc), InputError);
  const StarPolygon tiny{{10, 10}, std::vector<double>(32, 3.0)};
  CHECK_THROWS_AS(place_signals(tiny, NucleusClass::HighAmp, rng, sc), PlacementError);
}

TEST_CASE("place_signals: Monte Carlo tally against the generative rule") {
  const StarPolygon big{{100, 100}, std::vector<double>(32, 30.0)};
  const SimConfig sc;
  const int n = 1000;
  Rng rng(2024);
  int cep1 = 0, normal_her2_2 = 0, low_her2_5 = 0, high_cluster = 0, cluster_6 = 0, clusters = 0;
  for (int t = 0; t < n; ++t) {
    const auto a = tally(place_signals(big, NucleusClass::Normal, rng, sc));
    cep1 += a.cep17 == 1;
    normal_her2_2 += a.her2_singles == 2;
    low_her2_5 += tally(place_signals(big, NucleusClass::LowAmp, rng, sc)).her2_singles == 5;
    const auto h = tally(place_signals(big, NucleusClass::HighAmp, rng, sc));
    high_cluster += h.clusters;
    if (h.clusters) ++clusters, cluster_6 += h.cluster_copies == 6;
  }
  CHECK(within_3_sigma(cep1, n, 0.5));
  CHECK(within_3_sigma(normal_her2_2, n, 0.25));          // cep 2 then her2 2: 1/2 * 1/2
  CHECK(within_3_sigma(low_her2_5, n, 0.5 / 4 + 0.5 / 2));  // cep 1: 2..5, cep 2: 4..5
  CHECK(within_3_sigma(high_cluster, n, sc.cluster_fraction));
  CHECK(within_3_sigma(cluster_6, clusters, 1.0 / 7));      // copies 6..12
}

TEST_CASE("augment: group laws and identities") {
  const auto img = random_image(7, 4, 3);
  auto r = img;
  for (int i = 0; i < 4; ++i) r = augment(r, {1});
  CHECK(same_image(r, img));
  const auto rot = augment(img, {1});
  CHECK(rot.width() == 4);
  CHECK(rot.height() == 7);
  CHECK(same_image(augment(augment(img, {0, true}), {0, true}), img));
  CHECK(same_image(augment(augment(img, {0, false, true}), {0, false, true}), img));
  CHECK(same_image(augment(img, {2}), augment(img, {0, true, true})));
  CHECK(same_image(augment(img, {0, false, false, 0.0, 1.0}), img));
  // counter-clockwise quarter turn: out(x, y) = in(w - 1 - y, x)
  for (int y = 0; y < rot.height(); ++y)
    for (int x = 0; x < rot.width(); ++x) CHECK(rot.at(Channel::Her2, x, y) == img.at(Channel::Her2, 6 - y, x));
  const auto bright = augment(img, {0, false, false, 0.5, 3.0});
  for (Channel c : kAllChannels)
    for (float v : bright.plane(c).values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  CHECK_THROWS_AS(augment(img, {4}), InputError);
}

TEST_CASE("sim config validation names the field") {
  SimConfig sc;
  sc.mix = {0.5, 0.5, 0.5, 0.0};
  CHECK_THROWS_WITH_AS(sc.validate(), doctest::Contains("sim.mix"), ConfigError);
  sc = {};
  sc.psf_sigma = 0;
  CHECK_THROWS_WITH_AS(sc.validate(), doctest::Contains("sim.psf_sigma"), ConfigError);
  sc = {};
  sc.min_radius = -1;
  CHECK_THROWS_WITH_AS(simulate_slide(sc, 1), doctest::Contains("sim.radius"), ConfigError);
}
