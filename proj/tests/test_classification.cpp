#include <doctest.h>

#include <cmath>

#include "fishgrade/classification.hpp"
#include "fishgrade/error.hpp"
#include "fishgrade/rng.hpp"
#include "oracles.hpp"

using namespace fishgrade;

namespace {

NucleusCrop crop_with(float dapi, const StarPolygon& poly = {{40, 40}, std::vector<double>(32, 25.0)}) {
  MultiChannelImage img(80, 80);
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 80; ++x) img.at(Channel::Dapi, x, y) = dapi;
  return extract_crop(img, poly, 10);
}

std::vector<SignalBox> signals(int her2, int cep17, int clusters = 0, double cluster_area = 0) {
  std::vector<SignalBox> s;
  for (int i = 0; i < her2; ++i) s.push_back({SignalClass::Her2, {0, 0, 6, 6}, 1});
  for (int i = 0; i < cep17; ++i) s.push_back({SignalClass::Cep17, {0, 0, 6, 6}, 1});
  for (int i = 0; i < clusters; ++i) s.push_back({SignalClass::Her2Cluster, {0, 0, cluster_area / 6, 6}, 1});
  return s;
}

Tensor features(std::uint32_t c, std::uint32_t h, std::uint32_t w, std::vector<float> v) {
  Tensor t({c, h, w});
  t.data = std::move(v);
  return t;
}

}  // namespace

TEST_CASE("classify_by_rules: Background, Normal, HighAmp") {
  const ClassifierConfig cc;
  const ScoringConfig sc;
  const auto empty = classify_by_rules(crop_with(0.0f), signals(2, 2), cc, sc, 36);
  CHECK(empty.cls == NucleusClass::Background);
  CHECK_FALSE(empty.rationale.empty());

  const auto normal = classify_by_rules(crop_with(0.5f), signals(2, 2), cc, sc, 36);
  CHECK(normal.cls == NucleusClass::Normal);
  CHECK(normal.rationale.find("ratio 1") != std::string::npos);

  // a cluster of 8 reference areas plus 2 CEP17
  const auto high = classify_by_rules(crop_with(0.5f), signals(0, 2, 1, 8 * 36), cc, sc, 36);
  CHECK(high.cls == NucleusClass::HighAmp);

  CHECK(classify_by_rules(crop_with(0.5f), signals(5, 2), cc, sc, 36).cls == NucleusClass::LowAmp);
}

TEST_CASE("classify_by_rules: artifact screens") {
  const ClassifierConfig cc;
  const ScoringConfig sc;
  const auto sat = classify_by_rules(crop_with(1.0f), signals(2, 2), cc, sc, 36);
  CHECK(sat.cls == NucleusClass::Artifact);
  CHECK(sat.rationale.find("saturated") != std::string::npos);

  // long thin ellipse-like star polygon: aspect well above 3
  StarPolygon thin{{40, 40}, {}};
  for (int k = 0; k < 32; ++k) {
    const double th = 2 * M_PI * k / 32;
    thin.distances.push_back(1.0 / std::sqrt(std::pow(std::cos(th) / 30, 2) + std::pow(std::sin(th) / 5, 2)));
  }
  const auto a = classify_by_rules(crop_with(0.5f, thin), signals(2, 2), cc, sc, 36);
  CHECK(a.cls == NucleusClass::Artifact);
  CHECK(a.rationale.find("aspect") != std::string::npos);

  ClassifierConfig small = cc;
  small.max_area_px = 100;
  CHECK(classify_by_rules(crop_with(0.5f), signals(2, 2), small, sc, 36).cls == NucleusClass::Artifact);
}

TEST_CASE("classify_by_scores: uniform tie, argmax, shift invariance, softmax oracle") {
  const auto u = classify_by_scores(std::vector<double>(5, 0.0));
  CHECK(u.cls == NucleusClass::Artifact);
  for (double p : u.probabilities) CHECK(p == doctest::Approx(0.2));
  CHECK(classify_by_scores(std::vector<double>{0, 0, 3, 1, 1}).cls == NucleusClass::Normal);

  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> z(5);
    for (double& v : z) v = rng.uniform(-30, 30);
    const auto v = classify_by_scores(z);
    const auto want = oracle::softmax(z);
    long double sum = 0;
    for (int k = 0; k < 5; ++k) {
      CHECK(std::abs(v.probabilities[k] - static_cast<double>(want[k])) < 1e-12);
      sum += v.probabilities[k];
    }
    CHECK(std::abs(static_cast<double>(sum) - 1.0) < 1e-9);
    auto shifted = z;
    const double shift = std::round(rng.uniform(-100, 100));  // integral, so the ordering survives rounding
    for (double& x : shifted) x += shift;
    CHECK(classify_by_scores(shifted).cls == v.cls);
  }
  CHECK_THROWS_AS(classify_by_scores(std::vector<double>{0, NAN, 0, 0, 0}), InputError);
  CHECK_THROWS_AS(classify_by_scores(std::vector<double>{0, 0, 0}), InputError);
}

TEST_CASE("CAM: hand-computed 2x2 case") {
  // f0 = [[1,2],[3,4]], f1 = [[0,1],[0,1]], w = (2, -1)
  // raw = [[2,3],[6,7]] -> (raw - 2) / 5 = [[0, .2],[.8, 1]]
  const auto f = features(2, 2, 2, {1, 2, 3, 4, 0, 1, 0, 1});
  const auto cam = cam_low_res(f, std::vector<double>{2, -1});
  CHECK(cam.at(0, 0) == 0.0f);
  CHECK(cam.at(1, 0) == doctest::Approx(0.2));
  CHECK(cam.at(0, 1) == doctest::Approx(0.8));
  CHECK(cam.at(1, 1) == 1.0f);
}

TEST_CASE("CAM: one-hot selection, constant maps, bounds, weight mismatch") {
  Rng rng(2);
  std::vector<float> v(3 * 4 * 5);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  const auto f = features(3, 4, 5, v);
  const auto cam = cam_low_res(f, std::vector<double>{0, 1, 0});
  float lo = 1e9f, hi = -1e9f;
  for (int i = 0; i < 20; ++i) lo = std::min(lo, v[20 + i]), hi = std::max(hi, v[20 + i]);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      CHECK(cam.at(x, y) == doctest::Approx((v[20 + y * 5 + x] - lo) / (hi - lo)).epsilon(1e-6));

  const auto flat = cam_low_res(features(2, 3, 3, std::vector<float>(18, 0.7f)), std::vector<double>{1, 2});
  for (float x : flat.values()) CHECK(x == 0.0f);

  const auto up = compute_cam(f, std::vector<double>{0.3, -1, 2}, 37, 29);
  CHECK(up.width() == 37);
  CHECK(up.height() == 29);
  for (float x : up.values()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  CHECK_THROWS_AS(cam_low_res(f, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("upsample_bilinear: constant stays constant, same size is identity") {
  FloatGrid g(3, 2, 0.4f);
  const auto up = upsample_bilinear(g, 17, 9);
  for (float x : up.values()) CHECK(x == doctest::Approx(0.4f));
  g.at(1, 1) = 0.9f;
  CHECK(upsample_bilinear(g, 3, 2) == g);
}

TEST_CASE("second_opinion") {
  CHECK(second_opinion(NucleusClass::Normal, NucleusClass::Normal).consistent);
  const auto d = second_opinion(NucleusClass::HighAmp, NucleusClass::Normal);
  CHECK_FALSE(d.consistent);
  CHECK(d.classifier == NucleusClass::HighAmp);
  CHECK(d.detector == NucleusClass::Normal);
}

TEST_CASE("classifier config validation") {
  ClassifierConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_dapi_coverage = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
