#include "fishgrade/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fishgrade/error.hpp"

namespace fishgrade {

namespace {

// Walks one JSON object, remembering which keys were consumed.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void integer(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void size(const std::string& key, std::size_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(key_path(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class F>
  void object(const std::string& key, F&& f) {
    if (const Json* v = find(key)) {
      Reader sub(*v, key_path(key));
      f(sub);
      sub.finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string kind_of(Reader& r) {
  std::string kind = "reference";
  r.string("kind", kind);
  if (kind != "reference" && kind != "external")
    throw ConfigError(r.key_path("kind"), "expected \"reference\" or \"external\"");
  return kind;
}

void read_scoring(Reader& r, ScoringConfig& c) {
  r.number("ratio_threshold", c.ratio_threshold);
  r.number("high_amp_mean_her2_copies", c.high_amp_mean_her2_copies);
  r.integer("min_evaluable_nuclei", c.min_evaluable_nuclei);
  r.boolean("include_discrepant", c.include_discrepant);
  r.object("cluster", [&](Reader& k) {
    std::string source = c.cluster.source == ClusterCopyRule::ReferenceSource::Fixed ? "fixed" : "median_singles";
    k.string("reference_source", source);
    if (source == "fixed")
      c.cluster.source = ClusterCopyRule::ReferenceSource::Fixed;
    else if (source == "median_singles")
      c.cluster.source = ClusterCopyRule::ReferenceSource::MedianSingles;
    else
      throw ConfigError(k.key_path("reference_source"), "expected \"median_singles\" or \"fixed\"");
    k.number("fixed_reference_area", c.cluster.fixed_reference_area);
    k.integer("floor", c.cluster.floor);
    k.integer("cap", c.cluster.cap);
  });
}

}  // namespace

void PipelineConfig::validate() const {
  if (downscale < 1) throw ConfigError("downscale", "must be >= 1");
  if (tile_size < 1) throw ConfigError("tile_size", "must be >= 1");
  if (tile_overlap < 0 || tile_overlap >= tile_size) throw ConfigError("tile_overlap", "must satisfy 0 <= overlap < tile_size");
  if (crop_margin < 0) throw ConfigError("crop_margin", "must be >= 0");
  segmentation.validate();
  reference_segmentation.validate();
  detector.validate();
  classifier.validate();
  scoring.validate();
  if (segmentation_source.external && (segmentation_source.prob_path.empty() || segmentation_source.dist_path.empty()))
    throw ConfigError("predictors.segmentation", "external maps need prob and dist paths");
  if (signal_source.external && signal_source.descriptor.empty())
    throw ConfigError("predictors.signals", "external heads need a descriptor path");
  if (classifier_source.external && classifier_source.descriptor.empty())
    throw ConfigError("predictors.classifier", "external classifier needs a descriptor path");
}

Json to_json(const ScoringConfig& c) {
  Json j;
  j["ratio_threshold"] = c.ratio_threshold;
  j["high_amp_mean_her2_copies"] = c.high_amp_mean_her2_copies;
  j["min_evaluable_nuclei"] = c.min_evaluable_nuclei;
  j["include_discrepant"] = c.include_discrepant;
  j["cluster"] = {
      {"reference_source",
       c.cluster.source == ClusterCopyRule::ReferenceSource::Fixed ? "fixed" : "median_singles"},
      {"fixed_reference_area", c.cluster.fixed_reference_area},
      {"floor", c.cluster.floor},
      {"cap", c.cluster.cap},
  };
  return j;
}

ScoringConfig scoring_config_from_json(const Json& j, const ScoringConfig& base) {
  ScoringConfig c = base;
  Reader r(j, "scoring");
  read_scoring(r, c);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const PipelineConfig& c) {
  Json j;
  j["downscale"] = c.downscale;
  j["tile_size"] = c.tile_size;
  j["tile_overlap"] = c.tile_overlap;
  j["crop_margin"] = c.crop_margin;
  j["segmentation"] = {
      {"prob_threshold", c.segmentation.prob_threshold}, {"nms_iou", c.segmentation.nms_iou},
      {"supersample", c.segmentation.supersample},       {"candidate_cap", c.segmentation.candidate_cap},
      {"n_rays", c.segmentation.n_rays},
  };
  j["reference_segmentation"] = {
      {"smoothing_sigma", c.reference_segmentation.smoothing_sigma},
      {"foreground_threshold", c.reference_segmentation.foreground_threshold},
      {"min_area_px", c.reference_segmentation.min_area_px},
      {"ray_step", c.reference_segmentation.ray_step},
  };
  j["detector"] = {
      {"log_sigma", c.detector.log_sigma},
      {"peak_threshold", c.detector.peak_threshold},
      {"cluster_merge_iou", c.detector.cluster_merge_iou},
      {"cluster_min_peaks", c.detector.cluster_min_peaks},
      {"box_nms_iou", c.detector.box_nms_iou},
      {"score_threshold", c.detector.score_threshold},
  };
  j["classifier"] = {
      {"min_dapi_coverage", c.classifier.min_dapi_coverage},
      {"dapi_level", c.classifier.dapi_level},
      {"saturation_level", c.classifier.saturation_level},
      {"max_saturated_fraction", c.classifier.max_saturated_fraction},
      {"max_area_px", c.classifier.max_area_px},
      {"max_aspect_ratio", c.classifier.max_aspect_ratio},
  };
  j["scoring"] = to_json(c.scoring);
  Json seg = {{"kind", c.segmentation_source.external ? "external" : "reference"}};
  if (c.segmentation_source.external) {
    seg["prob"] = c.segmentation_source.prob_path;
    seg["dist"] = c.segmentation_source.dist_path;
  }
  Json sig = {{"kind", c.signal_source.external ? "external" : "reference"}};
  if (c.signal_source.external) sig["descriptor"] = c.signal_source.descriptor;
  Json cls = {{"kind", c.classifier_source.external ? "external" : "reference"}};
  if (c.classifier_source.external) cls["descriptor"] = c.classifier_source.descriptor;
  j["predictors"] = {{"segmentation", seg}, {"signals", sig}, {"classifier", cls}};
  return j;
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  Reader r(j, "");
  r.integer("downscale", c.downscale);
  r.integer("tile_size", c.tile_size);
  r.integer("tile_overlap", c.tile_overlap);
  r.integer("crop_margin", c.crop_margin);
  r.object("segmentation", [&](Reader& s) {
    s.number("prob_threshold", c.segmentation.prob_threshold);
    s.number("nms_iou", c.segmentation.nms_iou);
    s.integer("supersample", c.segmentation.supersample);
    s.size("candidate_cap", c.segmentation.candidate_cap);
    s.integer("n_rays", c.segmentation.n_rays);
  });
  r.object("reference_segmentation", [&](Reader& s) {
    s.number("smoothing_sigma", c.reference_segmentation.smoothing_sigma);
    s.number("foreground_threshold", c.reference_segmentation.foreground_threshold);
    s.integer("min_area_px", c.reference_segmentation.min_area_px);
    s.number("ray_step", c.reference_segmentation.ray_step);
  });
  r.object("detector", [&](Reader& s) {
    s.number("log_sigma", c.detector.log_sigma);
    s.number("peak_threshold", c.detector.peak_threshold);
    s.number("cluster_merge_iou", c.detector.cluster_merge_iou);
    s.integer("cluster_min_peaks", c.detector.cluster_min_peaks);
    s.number("box_nms_iou", c.detector.box_nms_iou);
    s.number("score_threshold", c.detector.score_threshold);
  });
  r.object("classifier", [&](Reader& s) {
    s.number("min_dapi_coverage", c.classifier.min_dapi_coverage);
    s.number("dapi_level", c.classifier.dapi_level);
    s.number("saturation_level", c.classifier.saturation_level);
    s.number("max_saturated_fraction", c.classifier.max_saturated_fraction);
    s.number("max_area_px", c.classifier.max_area_px);
    s.number("max_aspect_ratio", c.classifier.max_aspect_ratio);
  });
  r.object("scoring", [&](Reader& s) { read_scoring(s, c.scoring); });
  r.object("predictors", [&](Reader& p) {
    p.object("segmentation", [&](Reader& s) {
      c.segmentation_source.external = kind_of(s) == "external";
      s.string("prob", c.segmentation_source.prob_path);
      s.string("dist", c.segmentation_source.dist_path);
    });
    p.object("signals", [&](Reader& s) {
      c.signal_source.external = kind_of(s) == "external";
      s.string("descriptor", c.signal_source.descriptor);
    });
    p.object("classifier", [&](Reader& s) {
      c.classifier_source.external = kind_of(s) == "external";
      s.string("descriptor", c.classifier_source.descriptor);
    });
  });
  r.finish();
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return pipeline_config_from_json(j);
}

}  // namespace fishgrade
