#include "fishgrade/service.hpp"

#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "fishgrade/error.hpp"
#include "fishgrade/pipeline.hpp"
#include "fishgrade/report.hpp"

namespace fishgrade {

namespace {

enum class State { Processing, Ready, Failed };

struct Session {
  std::string id;
  Bytes input;
  MultiChannelImage image;
  PipelineConfig config;

  std::mutex mu;  // guards everything below
  State state = State::Processing;
  double progress = 0.0;
  std::string failure;
  SlideReport machine;  // pipeline output, never modified after the run
  SlideReport current;  // machine + replayed review log
  std::vector<Json> log;
};

// Applies one logged event to `report`. Throws NotFoundError / InputError /
// ConfigError for invalid events, leaving `report` untouched.
void apply_event(SlideReport& report, const Json& ev) {
  const std::string type = ev.at("type").get<std::string>();
  if (type == "config") {
    report.config.scoring = scoring_config_from_json(ev.at("scoring"), report.config.scoring);
    regrade(report);
    return;
  }
  if (type != "override") throw InputError("unknown event type " + type);
  const int nid = ev.at("nucleus").get<int>();
  NucleusRecord* rec = report.find(nid);
  if (!rec) throw NotFoundError("no nucleus " + std::to_string(nid));
  const std::string action = ev.at("action").get<std::string>();
  ReviewOverride next = rec->review;
  if (action == "set_class") {
    if (!ev.contains("class") || !ev.at("class").is_string()) throw ConfigError("class", "set_class needs a class");
    const auto c = parse_nucleus_class(ev.at("class").get<std::string>());
    if (!c) throw ConfigError("class", "unknown nucleus class " + ev.at("class").get<std::string>());
    next.cls = *c;
  } else if (action == "exclude") {
    next.inclusion = Inclusion::Excluded;
  } else if (action == "include") {
    next.inclusion = Inclusion::Included;
  } else if (action == "reset") {
    next = ReviewOverride{};
  } else {
    throw ConfigError("action", "expected set_class, exclude, include or reset");
  }
  rec->review = next;
  regrade(report);
}

void json_reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void error_reply(httplib::Response& res, int status, const std::string& msg) {
  json_reply(res, status, Json{{"error", msg}});
}

}  // namespace

struct Service::Impl {
  ServiceOptions options;
  httplib::Server server;
  std::thread listener;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::condition_variable idle_cv;
  int running = 0;
  std::vector<std::thread> workers;

  explicit Impl(ServiceOptions o) : options(std::move(o)) {}

  std::filesystem::path dir_of(const std::string& id) const { return options.data_dir / id; }

  void persist_new(const Session& s) {
    if (options.data_dir.empty()) return;
    std::filesystem::create_directories(dir_of(s.id));
    write_file(dir_of(s.id) / "input.bin", s.input);
    write_file(dir_of(s.id) / "config.json", to_json(s.config).dump(2) + "\n");
  }

  void persist_event(const Session& s, const Json& ev) {
    if (options.data_dir.empty()) return;
    std::ofstream out(dir_of(s.id) / "review.jsonl", std::ios::app);
    out << ev.dump() << "\n";
  }

  void launch(std::shared_ptr<Session> s) {
    {
      std::lock_guard lock(sessions_mu);
      ++running;
    }
    workers.emplace_back([this, s] {
      try {
        RunOptions ro;
        ro.input_sha256 = s->id;
        ro.threads = options.threads;
        ro.progress = [s](double f) {
          std::lock_guard lock(s->mu);
          s->progress = f;
        };
        SlideReport report = run_pipeline(s->image, s->config, ro);
        std::lock_guard lock(s->mu);
        s->machine = report;
        s->current = report;
        for (const auto& ev : s->log) apply_event(s->current, ev);
        s->state = State::Ready;
      } catch (const std::exception& e) {
        std::lock_guard lock(s->mu);
        s->state = State::Failed;
        s->failure = e.what();
      }
      std::lock_guard lock(sessions_mu);
      --running;
      idle_cv.notify_all();
    });
  }

  void load_persisted() {
    if (options.data_dir.empty()) return;
    std::filesystem::create_directories(options.data_dir);
    for (const auto& entry : std::filesystem::directory_iterator(options.data_dir)) {
      if (!entry.is_directory() || !std::filesystem::exists(entry.path() / "input.bin")) continue;
      auto s = std::make_shared<Session>();
      s->id = entry.path().filename().string();
      s->input = read_file(entry.path() / "input.bin");
      try {
        s->image = decode_image(s->input, options.channel_map);
        s->config = load_pipeline_config(entry.path() / "config.json");
      } catch (const std::exception&) {
        continue;  // unreadable session directory; leave it on disk
      }
      if (std::ifstream in(entry.path() / "review.jsonl"); in)
        for (std::string line; std::getline(in, line);)
          if (!line.empty()) s->log.push_back(Json::parse(line));
      sessions[s->id] = s;
      launch(s);
    }
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(sessions_mu);
    auto it = sessions.find(id);
    return it == sessions.end() ? nullptr : it->second;
  }

  // Runs `f` with the session locked when Ready, replying 404/409 otherwise.
  template <class F>
  void with_ready(const httplib::Request& req, httplib::Response& res, F&& f) {
    auto s = find(req.path_params.at("id"));
    if (!s) return error_reply(res, 404, "unknown slide");
    std::lock_guard lock(s->mu);
    if (s->state == State::Processing) return error_reply(res, 409, "slide is still processing");
    if (s->state == State::Failed) return error_reply(res, 409, "slide processing failed: " + s->failure);
    f(*s);
  }

  void record_event(Session& s, Json ev, httplib::Response& res) {
    ev["seq"] = s.log.size();
    ev["time"] = utc_timestamp();
    SlideReport next = s.current;
    try {
      apply_event(next, ev);
    } catch (const NotFoundError& e) {
      return error_reply(res, 404, e.what());
    } catch (const ConfigError& e) {
      return error_reply(res, 422, e.what());
    } catch (const Error& e) {
      return error_reply(res, 400, e.what());
    } catch (const Json::exception& e) {
      return error_reply(res, 400, e.what());
    }
    s.current = std::move(next);
    s.log.push_back(ev);
    persist_event(s, ev);
    res.status = 200;
    res.set_content(write_report_json(s.current), "application/json");
  }

  void routes() {
    // Auth runs inside the handlers, after httplib has read the body: a 401
    // from pre-routing leaves an unread upload and resets the connection.
    server.set_pre_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header(kSchemaHeader, kSchema);
      return httplib::Server::HandlerResponse::Unhandled;
    });
    auto guard = [this](httplib::Server::Handler h) -> httplib::Server::Handler {
      return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
        if (!options.token.empty() && req.get_header_value("Authorization") != "Bearer " + options.token)
          return error_reply(res, 401, "missing or invalid bearer token");
        h(req, res);
      };
    };
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        error_reply(res, 500, e.what());
      } catch (...) {
        error_reply(res, 500, "internal error");
      }
    });

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

    server.Post("/slides", guard([this](const httplib::Request& req, httplib::Response& res) {
      Bytes input;
      PipelineConfig config = options.default_config;
      try {
        if (req.is_multipart_form_data()) {
          if (!req.has_file("image")) return error_reply(res, 400, "multipart body needs an \"image\" part");
          const auto& img = req.get_file_value("image").content;
          input.assign(img.begin(), img.end());
          if (req.has_file("config")) config = pipeline_config_from_json(Json::parse(req.get_file_value("config").content));
        } else {
          input.assign(req.body.begin(), req.body.end());
        }
      } catch (const Json::exception& e) {
        return error_reply(res, 400, std::string("config is not valid JSON: ") + e.what());
      } catch (const ConfigError& e) {
        return error_reply(res, 422, e.what());
      }
      MultiChannelImage image;
      try {
        image = decode_image(input, options.channel_map);
      } catch (const Error& e) {
        return error_reply(res, 400, e.what());
      }
      const std::string id = sha256_hex(input);
      {
        std::lock_guard lock(sessions_mu);
        if (sessions.count(id)) return json_reply(res, 200, Json{{"id", id}, {"existing", true}});
      }
      auto s = std::make_shared<Session>();
      s->id = id;
      s->input = std::move(input);
      s->image = std::move(image);
      s->config = config;
      {
        std::lock_guard lock(sessions_mu);
        if (sessions.count(id)) return json_reply(res, 200, Json{{"id", id}, {"existing", true}});
        sessions[id] = s;
      }
      persist_new(*s);
      launch(s);
      json_reply(res, 202, Json{{"id", id}, {"existing", false}});
    }));

    server.Get("/slides/:id/report", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.path_params.at("id"));
      if (!s) return error_reply(res, 404, "unknown slide");
      std::lock_guard lock(s->mu);
      switch (s->state) {
        case State::Processing:
          return json_reply(res, 202, Json{{"state", "processing"}, {"progress", s->progress}});
        case State::Failed:
          return json_reply(res, 422, Json{{"state", "failed"}, {"error", s->failure}});
        case State::Ready:
          res.set_content(write_report_json(s->current), "application/json");
          return;
      }
    }));

    server.Get("/slides/:id/events", guard([this](const httplib::Request& req, httplib::Response& res) {
      auto s = find(req.path_params.at("id"));
      if (!s) return error_reply(res, 404, "unknown slide");
      std::lock_guard lock(s->mu);
      json_reply(res, 200, Json(s->log));
    }));

    server.Patch("/slides/:id/nuclei/:nid", guard([this](const httplib::Request& req, httplib::Response& res) {
      with_ready(req, res, [&](Session& s) {
        int nid = 0;
        try {
          nid = std::stoi(req.path_params.at("nid"));
        } catch (const std::exception&) {
          return error_reply(res, 404, "no nucleus " + req.path_params.at("nid"));
        }
        Json body;
        try {
          body = Json::parse(req.body);
        } catch (const Json::exception& e) {
          return error_reply(res, 400, std::string("body is not valid JSON: ") + e.what());
        }
        if (!body.is_object() || !body.contains("action") || !body.at("action").is_string())
          return error_reply(res, 422, "body needs an \"action\" string");
        Json ev = {{"type", "override"}, {"nucleus", nid}, {"action", body.at("action")}};
        if (body.contains("class")) ev["class"] = body.at("class");
        ev["actor"] = body.value("actor", std::string("anonymous"));
        record_event(s, ev, res);
      });
    }));

    server.Put("/slides/:id/config", guard([this](const httplib::Request& req, httplib::Response& res) {
      with_ready(req, res, [&](Session& s) {
        Json body;
        try {
          body = Json::parse(req.body);
        } catch (const Json::exception& e) {
          return error_reply(res, 400, std::string("body is not valid JSON: ") + e.what());
        }
        std::string actor = "anonymous";
        if (body.is_object() && body.contains("actor")) {
          actor = body.value("actor", actor);
          body.erase("actor");
        }
        record_event(s, Json{{"type", "config"}, {"scoring", body}, {"actor", actor}}, res);
      });
    }));

    server.Get("/slides/:id/overlay", guard([this](const httplib::Request& req, httplib::Response& res) {
      with_ready(req, res, [&](Session& s) {
        OverlayOptions opt;
        const std::string layer = req.has_param("layer") ? req.get_param_value("layer") : "all";
        const auto parsed = parse_overlay_layer(layer);
        if (!parsed) return error_reply(res, 400, "unknown layer " + layer);
        opt.layer = *parsed;
        if (req.has_param("nucleus")) {
          try {
            opt.nucleus_id = std::stoi(req.get_param_value("nucleus"));
          } catch (const std::exception&) {
            return error_reply(res, 400, "nucleus must be an integer");
          }
        } else if (opt.layer == OverlayLayer::Cam) {
          return error_reply(res, 400, "cam layer needs ?nucleus=");
        }
        try {
          const Overlay o = render_overlay(s.image, s.current, opt);
          res.set_header("X-Fishgrade-Polygons", std::to_string(o.polygons_drawn));
          res.set_header("X-Fishgrade-Boxes", std::to_string(o.boxes_drawn));
          res.set_content(std::string(o.png.begin(), o.png.end()), "image/png");
        } catch (const NotFoundError& e) {
          error_reply(res, 404, e.what());
        }
      });
    }));
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  impl_->routes();
  impl_->load_persisted();
}

Service::~Service() {
  stop();
  drain();
  for (auto& w : impl_->workers)
    if (w.joinable()) w.join();
}

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw InputError("cannot bind " + host + ":" + std::to_string(port));
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::wait() {
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

void Service::drain() {
  std::unique_lock lock(impl_->sessions_mu);
  impl_->idle_cv.wait(lock, [&] { return impl_->running == 0; });
}

}  // namespace fishgrade
