#include "fishgrade/cli.hpp"

#include <csignal>
#include <cmath>
#include <cstdio>
#include <map>

#include <CLI11.hpp>
#include <pthread.h>

#include "fishgrade/error.hpp"
#include "fishgrade/pipeline.hpp"
#include "fishgrade/report.hpp"
#include "fishgrade/service.hpp"

namespace fishgrade {

namespace {

const char* name_of(CommandKind k) {
  switch (k) {
    case CommandKind::Simulate: return "simulate";
    case CommandKind::Segment: return "segment";
    case CommandKind::Detect: return "detect";
    case CommandKind::Classify: return "classify";
    case CommandKind::Score: return "score";
    case CommandKind::Run: return "run";
    case CommandKind::Evaluate: return "evaluate";
    case CommandKind::Serve: return "serve";
  }
  return "?";
}

PipelineConfig load_config(const Command& cmd) {
  return cmd.config.empty() ? PipelineConfig{} : load_pipeline_config(cmd.config);
}

ChannelMap channels(const Command& cmd) {
  return cmd.channel_map.empty() ? ChannelMap{} : parse_channel_map(cmd.channel_map);
}

void write_json(const std::string& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

Json read_json(const std::string& path, const char* what) {
  const Bytes b = read_file(path);
  try {
    return Json::parse(b.begin(), b.end());
  } catch (const Json::exception& e) {
    throw InputError(std::string(what) + " " + path + " is not valid JSON: " + e.what());
  }
}

std::vector<StarPolygon> nuclei_from_file(const std::string& path) {
  const Json j = read_json(path, "nuclei file");
  std::vector<StarPolygon> out;
  try {
    for (const auto& n : j.at("nuclei")) out.push_back(polygon_from_json(n.at("polygon")));
  } catch (const Json::exception& e) {
    throw InputError("nuclei file " + path + ": " + e.what());
  }
  return out;
}

std::vector<std::vector<SignalBox>> signals_from_file(const std::string& path) {
  const Json j = read_json(path, "signals file");
  std::vector<std::vector<SignalBox>> out;
  try {
    for (const auto& n : j.at("nuclei")) {
      auto& list = out.emplace_back();
      for (const auto& s : n.at("signals")) list.push_back(signal_from_json(s));
    }
  } catch (const Json::exception& e) {
    throw InputError("signals file " + path + ": " + e.what());
  }
  return out;
}

std::string status_line(const SlideStatus& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "status %s, %d evaluable nuclei, ratio %s", std::string(to_string(s.status)).c_str(),
                s.evaluable_count, s.mean_ratio ? std::to_string(*s.mean_ratio).c_str() : "n/a");
  return buf;
}

int do_simulate(const Command& cmd, std::ostream& out) {
  SimConfig sc = cmd.noiseless ? SimConfig::noiseless() : SimConfig{};
  if (cmd.width > 0) sc.width = cmd.width;
  if (cmd.height > 0) sc.height = cmd.height;
  if (!cmd.mix.empty()) {
    if (cmd.mix.size() != 4) throw ConfigError("--mix", "expects four weights: normal,low_amp,high_amp,artifact");
    sc.mix = {cmd.mix[0], cmd.mix[1], cmd.mix[2], cmd.mix[3]};
  }
  const SimulatedSlide slide = simulate_slide(sc, cmd.seed);
  write_png16(cmd.out, slide.image);
  write_json(cmd.out_truth, to_json(slide.truth));
  if (!cmd.maps_dir.empty()) {
    // GT maps at the pipeline's working resolution, for the external segmentation path.
    const PipelineConfig pc = load_config(cmd);
    const int f = pc.downscale;
    std::vector<StarPolygon> working;
    for (const auto& n : slide.truth.nuclei) working.push_back(n.polygon.scaled(1.0 / f, -(f - 1) / (2.0 * f)));
    const ProbDistMaps maps =
        render_maps(working, (sc.width + f - 1) / f, (sc.height + f - 1) / f, pc.segmentation.n_rays);
    std::filesystem::create_directories(cmd.maps_dir);
    write_tensor(std::filesystem::path(cmd.maps_dir) / "prob.fgt", prob_to_tensor(maps));
    write_tensor(std::filesystem::path(cmd.maps_dir) / "dist.fgt", dist_to_tensor(maps));
  }
  out << cmd.out << ": " << slide.truth.nuclei.size() << " nuclei, true status " << to_string(slide.truth.status)
      << "\n";
  return 0;
}

int do_segment(const Command& cmd, std::ostream& out) {
  const PipelineConfig config = load_config(cmd);
  const MultiChannelImage image = read_image(cmd.input, channels(cmd));
  const auto polygons = segment_slide(image, config);
  Json nuclei = Json::array();
  for (std::size_t i = 0; i < polygons.size(); ++i) nuclei.push_back({{"id", i}, {"polygon", polygon_json(polygons[i])}});
  write_json(cmd.out, Json{{"schema", kSchema}, {"width", image.width()}, {"height", image.height()}, {"nuclei", nuclei}});
  out << cmd.out << ": " << polygons.size() << " nuclei\n";
  return 0;
}

SlideReport stage_report(const Command& cmd, const MultiChannelImage& image, const PipelineConfig& config,
                         bool with_signals) {
  RunOptions ro;
  ro.threads = cmd.threads;
  const auto polygons = cmd.nuclei.empty() ? segment_slide(image, config) : nuclei_from_file(cmd.nuclei);
  if (with_signals && !cmd.signals.empty()) {
    const auto sig = signals_from_file(cmd.signals);
    return grade_polygons(image, polygons, config, ro, &sig);
  }
  return grade_polygons(image, polygons, config, ro);
}

int do_detect(const Command& cmd, std::ostream& out) {
  const PipelineConfig config = load_config(cmd);
  const MultiChannelImage image = read_image(cmd.input, channels(cmd));
  const SlideReport r = stage_report(cmd, image, config, false);
  Json nuclei = Json::array();
  std::size_t total = 0;
  for (const auto& n : r.nuclei) {
    Json sig = Json::array();
    for (const auto& s : n.signals) sig.push_back(signal_json(s));
    total += n.signals.size();
    nuclei.push_back({{"id", n.id},
                      {"crop", {{"x", n.crop_x}, {"y", n.crop_y}, {"width", n.crop_width}, {"height", n.crop_height}}},
                      {"signals", sig},
                      {"error", n.error}});
  }
  write_json(cmd.out, Json{{"schema", kSchema}, {"nuclei", nuclei}});
  out << cmd.out << ": " << total << " signals in " << r.nuclei.size() << " nuclei\n";
  return 0;
}

int do_classify(const Command& cmd, std::ostream& out) {
  const PipelineConfig config = load_config(cmd);
  const MultiChannelImage image = read_image(cmd.input, channels(cmd));
  const SlideReport r = stage_report(cmd, image, config, true);
  Json nuclei = Json::array();
  for (const auto& n : r.nuclei) {
    Json j = {{"id", n.id},
              {"class", to_string(n.classifier.cls)},
              {"source", n.classifier.source},
              {"rationale", n.classifier.rationale},
              {"detector_class", to_string(n.detector_class)}};
    j["consistent"] = n.opinion ? Json(n.opinion->consistent) : Json(nullptr);
    j["error"] = n.error;
    nuclei.push_back(j);
  }
  write_json(cmd.out, Json{{"schema", kSchema}, {"reference_area", r.reference_area}, {"nuclei", nuclei}});
  out << cmd.out << ": " << r.nuclei.size() << " nuclei classified\n";
  return 0;
}

int do_score(const Command& cmd, std::ostream& out) {
  SlideReport r = load_report(cmd.report);
  ScoringConfig s = cmd.config.empty() ? r.config.scoring : load_config(cmd).scoring;
  if (cmd.ratio_threshold) s.ratio_threshold = *cmd.ratio_threshold;
  if (cmd.high_amp_copies) s.high_amp_mean_her2_copies = *cmd.high_amp_copies;
  if (cmd.min_nuclei) s.min_evaluable_nuclei = *cmd.min_nuclei;
  if (cmd.include_discrepant) s.include_discrepant = *cmd.include_discrepant;
  s.validate();
  r.config.scoring = s;
  regrade(r);
  r.generated_at = utc_timestamp();
  write_file(cmd.out, write_report_json(r));
  out << cmd.out << ": " << status_line(r.status) << "\n";
  return 0;
}

int do_run(const Command& cmd, std::ostream& out) {
  const PipelineConfig config = load_config(cmd);
  const Bytes bytes = read_file(cmd.input);
  const MultiChannelImage image = decode_image(bytes, channels(cmd));
  std::optional<GroundTruth> truth;
  if (!cmd.truth.empty()) truth = load_ground_truth(cmd.truth);
  RunOptions ro;
  ro.input_sha256 = sha256_hex(bytes);
  ro.threads = cmd.threads;
  ro.truth = truth ? &*truth : nullptr;
  const SlideReport r = run_pipeline(image, config, ro);
  write_file(cmd.out, write_report_json(r));
  if (!cmd.overlay.empty()) write_file(cmd.overlay, render_overlay(image, r, {}).png);
  out << cmd.out << ": " << r.nuclei.size() << " nuclei, " << status_line(r.status) << "\n";
  return 0;
}

int do_evaluate(const Command& cmd, std::ostream& out, std::ostream& err) {
  const SlideReport r = load_report(cmd.report);
  const GroundTruth truth = load_ground_truth(cmd.truth);
  EvalConfig ec;
  ec.nucleus_iou = cmd.nucleus_iou;
  ec.signal_iou = cmd.signal_iou;
  const MetricsReport m = evaluate_slide(r, truth, ec);
  if (!cmd.out.empty()) write_json(cmd.out, to_json(m));
  out << "nuclei: " << m.nucleus_tp << "/" << m.nucleus_gt << " matched, " << m.nucleus_pred << " predicted\n";
  out << "status: predicted " << to_string(m.predicted_status) << ", true " << to_string(m.true_status) << "\n";

  int code = 0;
  auto gate = [&](const char* name, const std::optional<double>& value, const std::optional<double>& min) {
    if (!min) return;
    if (!value || *value < *min) {
      err << "gate failed: " << name << " " << (value ? std::to_string(*value) : "undefined") << " < " << *min << "\n";
      code = 1;
    }
  };
  gate("nucleus precision", m.nucleus_precision, cmd.min_precision);
  gate("nucleus recall", m.nucleus_recall, cmd.min_recall);
  gate("mean AP", m.mean_ap, cmd.min_map);
  if (cmd.require_status && !m.status_agrees) {
    err << "gate failed: status disagrees with ground truth\n";
    code = 1;
  }
  return code;
}

int do_serve(const Command& cmd, std::ostream& out) {
  ServiceOptions so;
  so.data_dir = cmd.data_dir;
  so.token = cmd.token;
  so.default_config = load_config(cmd);
  so.channel_map = channels(cmd);
  so.threads = cmd.threads;

  // Workers inherit the mask, so only this thread sees SIGINT/SIGTERM.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(so);
  const int port = service.start(cmd.host, cmd.port);
  out << "listening on http://" << cmd.host << ":" << port << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  service.stop();
  return 0;
}

}  // namespace

ParseResult parse_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Command cmd;
  CLI::App app{"HER2 FISH grading engine", "fishgrade"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::map<std::string, CommandKind> kinds;
  auto sub = [&](CommandKind k, const std::string& help) {
    CLI::App* s = app.add_subcommand(name_of(k), help);
    kinds[name_of(k)] = k;
    return s;
  };
  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", cmd.config, "pipeline config JSON")->envname("FISHGRADE_CONFIG");
  };
  auto add_image = [&](CLI::App* s) {
    s->add_option("--input", cmd.input, "slide image (8/16-bit PNG or TIFF)")->required();
    s->add_option("--channel-map", cmd.channel_map, "e.g. R=HER2,G=CEP17,B=DAPI");
    add_config(s);
  };
  auto add_threads = [&](CLI::App* s) { s->add_option("--threads", cmd.threads, "worker cap (0 = all cores)"); };

  auto* sim = sub(CommandKind::Simulate, "render a synthetic slide and its ground truth");
  sim->add_option("--out", cmd.out, "slide PNG (16-bit)")->required();
  sim->add_option("--truth", cmd.out_truth, "ground-truth JSON")->required();
  sim->add_option("--seed", cmd.seed, "simulator seed");
  sim->add_flag("--noiseless", cmd.noiseless, "no noise, no smears");
  sim->add_option("--width", cmd.width)->check(CLI::PositiveNumber);
  sim->add_option("--height", cmd.height)->check(CLI::PositiveNumber);
  sim->add_option("--mix", cmd.mix, "class weights normal,low_amp,high_amp,artifact")->delimiter(',');
  sim->add_option("--maps-dir", cmd.maps_dir, "also write GT prob/dist tensors at working resolution");
  add_config(sim);

  auto* seg = sub(CommandKind::Segment, "nucleus polygons only");
  add_image(seg);
  seg->add_option("--out", cmd.out, "nuclei JSON")->required();

  auto* det = sub(CommandKind::Detect, "per-nucleus FISH signals");
  add_image(det);
  add_threads(det);
  det->add_option("--nuclei", cmd.nuclei, "nuclei JSON from `segment` (segments when omitted)");
  det->add_option("--out", cmd.out, "signals JSON")->required();

  auto* cls = sub(CommandKind::Classify, "nucleus classes with both opinions");
  add_image(cls);
  add_threads(cls);
  cls->add_option("--nuclei", cmd.nuclei, "nuclei JSON from `segment`");
  cls->add_option("--signals", cmd.signals, "signals JSON from `detect`");
  cls->add_option("--out", cmd.out, "classes JSON")->required();

  auto* score = sub(CommandKind::Score, "re-grade an existing report without re-detection");
  score->add_option("--report", cmd.report, "report JSON")->required();
  score->add_option("--out", cmd.out, "re-graded report JSON")->required();
  score->add_option("--ratio-threshold", cmd.ratio_threshold);
  score->add_option("--high-amp-copies", cmd.high_amp_copies);
  score->add_option("--min-nuclei", cmd.min_nuclei);
  score->add_option("--include-discrepant", cmd.include_discrepant);
  add_config(score);

  auto* run = sub(CommandKind::Run, "full pipeline to a report");
  add_image(run);
  add_threads(run);
  run->add_option("--out", cmd.out, "report JSON")->required();
  run->add_option("--truth", cmd.truth, "ground truth; adds a metrics section");
  run->add_option("--overlay", cmd.overlay, "overlay PNG");

  auto* ev = sub(CommandKind::Evaluate, "metrics of a report against ground truth");
  ev->add_option("--report", cmd.report)->required();
  ev->add_option("--truth", cmd.truth)->required();
  ev->add_option("--out", cmd.out, "metrics JSON");
  ev->add_option("--nucleus-iou", cmd.nucleus_iou)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--signal-iou", cmd.signal_iou)->check(CLI::Range(0.0, 1.0));
  ev->add_option("--min-precision", cmd.min_precision, "fail below this nucleus precision");
  ev->add_option("--min-recall", cmd.min_recall, "fail below this nucleus recall");
  ev->add_option("--min-map", cmd.min_map, "fail below this signal mean AP");
  ev->add_flag("--require-status", cmd.require_status, "fail when the status disagrees");
  add_config(ev);

  auto* srv = sub(CommandKind::Serve, "review service");
  srv->add_option("--host", cmd.host);
  srv->add_option("--port", cmd.port)->check(CLI::Range(0, 65535));
  srv->add_option("--data-dir", cmd.data_dir, "session storage");
  srv->add_option("--token", cmd.token, "require this bearer token");
  srv->add_option("--channel-map", cmd.channel_map);
  add_threads(srv);
  add_config(srv);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return {std::nullopt, code == 0 ? 0 : 2};
  }
  cmd.kind = kinds.at(app.get_subcommands().front()->get_name());
  return {cmd, 0};
}

int execute(const Command& cmd, std::ostream& out, std::ostream& err) {
  try {
    switch (cmd.kind) {
      case CommandKind::Simulate: return do_simulate(cmd, out);
      case CommandKind::Segment: return do_segment(cmd, out);
      case CommandKind::Detect: return do_detect(cmd, out);
      case CommandKind::Classify: return do_classify(cmd, out);
      case CommandKind::Score: return do_score(cmd, out);
      case CommandKind::Run: return do_run(cmd, out);
      case CommandKind::Evaluate: return do_evaluate(cmd, out, err);
      case CommandKind::Serve: return do_serve(cmd, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << name_of(cmd.kind) << ": " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const ParseResult p = parse_args(args, out, err);
  if (!p.command) return p.exit_code;
  return execute(*p.command, out, err);
}

}  // namespace fishgrade
