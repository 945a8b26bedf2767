#include <doctest.h>

#include <filesystem>
#include <httplib.h>

#include "fishgrade/image_io.hpp"
#include "fishgrade/report.hpp"
#include "fishgrade/service.hpp"
#include "fishgrade/simulator.hpp"

using namespace fishgrade;
namespace fs = std::filesystem;

namespace {

const std::string& slide_png(std::uint64_t seed = 3) {
  static std::map<std::uint64_t, std::string> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    const auto png = encode_png16(simulate_slide(SimConfig{}, seed).image);
    it = cache.emplace(seed, std::string(png.begin(), png.end())).first;
  }
  return it->second;
}

struct Server {
  Service service;
  int port;
  httplib::Client client;
  explicit Server(ServiceOptions o = {})
      : service(std::move(o)), port(service.start("127.0.0.1", 0)), client("127.0.0.1", port) {
    client.set_read_timeout(60, 0);
  }

  std::string upload(const std::string& body = slide_png()) {
    auto r = client.Post("/slides", body, "application/octet-stream");
    REQUIRE(r);
    REQUIRE((r->status == 202 || r->status == 200));
    return Json::parse(r->body)["id"].get<std::string>();
  }

  Json report(const std::string& id) {
    service.drain();
    auto r = client.Get("/slides/" + id + "/report");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    return Json::parse(r->body);
  }

  httplib::Result patch(const std::string& id, int nid, const Json& body) {
    return client.Patch("/slides/" + id + "/nuclei/" + std::to_string(nid), body.dump(), "application/json");
  }
  httplib::Result put_config(const std::string& id, const Json& body) {
    return client.Put("/slides/" + id + "/config", body.dump(), "application/json");
  }
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("fishgrade_svc_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int first_evaluable(const Json& report) {
  for (const auto& n : report["nuclei"])
    if (n["score"]["evaluable"].get<bool>()) return n["id"].get<int>();
  return -1;
}

}  // namespace

TEST_CASE("service: health, schema header, upload and report") {
  Server s;
  auto h = s.client.Get("/healthz");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(h->body == "ok");
  CHECK(h->get_header_value(kSchemaHeader) == "fishgrade/1");

  auto post = s.client.Post("/slides", slide_png(), "image/png");
  REQUIRE(post);
  CHECK(post->status == 202);
  const auto created = Json::parse(post->body);
  const auto id = created["id"].get<std::string>();
  const auto png = slide_png();
  CHECK(id == sha256_hex({reinterpret_cast<const std::uint8_t*>(png.data()), png.size()}));
  CHECK_FALSE(created["existing"].get<bool>());

  const auto rep = s.report(id);
  CHECK(rep["schema"] == "fishgrade/1");
  CHECK(rep["slide"]["input_sha256"] == id);
  CHECK(rep["nuclei"].size() > 20);

  // same bytes again: same session
  auto again = s.client.Post("/slides", slide_png(), "image/png");
  REQUIRE(again);
  CHECK(again->status == 200);
  CHECK(Json::parse(again->body)["id"] == id);
  CHECK(Json::parse(again->body)["existing"].get<bool>());

  auto missing = s.client.Get("/slides/deadbeef/report");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(missing->get_header_value(kSchemaHeader) == "fishgrade/1");
}

TEST_CASE("service: bad uploads") {
  Server s;
  auto junk = s.client.Post("/slides", std::string("definitely not a png"), "image/png");
  REQUIRE(junk);
  CHECK(junk->status == 400);
  auto cut = s.client.Post("/slides", slide_png().substr(0, slide_png().size() / 3), "image/png");
  REQUIRE(cut);
  CHECK(cut->status == 400);

  httplib::MultipartFormDataItems bad_cfg = {
      {"image", slide_png(), "s.png", "image/png"},
      {"config", R"({"scoring": {"ratio_threshold": -2}})", "", "application/json"}};
  auto r = s.client.Post("/slides", bad_cfg);
  REQUIRE(r);
  CHECK(r->status == 422);
  CHECK(Json::parse(r->body)["error"].get<std::string>().find("scoring.ratio_threshold") != std::string::npos);
}

TEST_CASE("service: multipart config is applied") {
  Server s;
  httplib::MultipartFormDataItems items = {
      {"image", slide_png(), "s.png", "image/png"},
      {"config", R"({"scoring": {"ratio_threshold": 50}})", "", "application/json"}};
  auto r = s.client.Post("/slides", items);
  REQUIRE(r);
  REQUIRE(r->status == 202);
  const auto rep = s.report(Json::parse(r->body)["id"].get<std::string>());
  CHECK(rep["config"]["scoring"]["ratio_threshold"].get<double>() == 50.0);
  CHECK(rep["status"]["status"] == "Negative");
}

TEST_CASE("service: 202 with progress while processing, 409 for edits") {
  Server s;
  SimConfig big;
  big.width = 3200, big.height = 2400, big.min_nuclei = 100, big.max_nuclei = 110;
  const auto png = encode_png16(simulate_slide(big, 77).image);
  const auto id = s.upload(std::string(png.begin(), png.end()));
  auto r = s.client.Get("/slides/" + id + "/report");
  REQUIRE(r);
  CHECK(r->status == 202);
  const auto body = Json::parse(r->body);
  CHECK(body["state"] == "processing");
  CHECK(body["progress"].get<double>() >= 0.0);
  CHECK(body["progress"].get<double>() <= 1.0);
  auto p = s.patch(id, 0, {{"action", "exclude"}});
  REQUIRE(p);
  CHECK(p->status == 409);
  CHECK(s.report(id)["nuclei"].size() >= 100);
}

TEST_CASE("service: exclude then include restores the aggregates") {
  Server s;
  const auto id = s.upload();
  const auto base = s.report(id);
  const int nid = first_evaluable(base);
  REQUIRE(nid >= 0);

  auto ex = s.patch(id, nid, {{"action", "exclude"}, {"actor", "dr-a"}});
  REQUIRE(ex);
  REQUIRE(ex->status == 200);
  const auto after = Json::parse(ex->body);
  CHECK(after["status"]["evaluable_count"].get<int>() == base["status"]["evaluable_count"].get<int>() - 1);

  auto in = s.patch(id, nid, {{"action", "reset"}});
  REQUIRE(in);
  REQUIRE(in->status == 200);
  CHECK(Json::parse(in->body)["status"] == base["status"]);
  CHECK(Json::parse(in->body)["nuclei"] == base["nuclei"]);

  auto ev = s.client.Get("/slides/" + id + "/events");
  REQUIRE(ev);
  const auto log = Json::parse(ev->body);
  REQUIRE(log.size() == 2);
  CHECK(log[0]["action"] == "exclude");
  CHECK(log[0]["actor"] == "dr-a");
  CHECK(log[0]["seq"].get<int>() < log[1]["seq"].get<int>());
  CHECK(log[1]["actor"] == "anonymous");
}

TEST_CASE("service: set_class keeps the machine class") {
  Server s;
  const auto id = s.upload();
  const auto base = s.report(id);
  const int nid = first_evaluable(base);
  auto r = s.patch(id, nid, {{"action", "set_class"}, {"class", "Artifact"}});
  REQUIRE(r);
  REQUIRE(r->status == 200);
  const auto rep = Json::parse(r->body);
  const auto& n = rep["nuclei"][nid];
  CHECK(n["classifier"] == base["nuclei"][nid]["classifier"]);
  CHECK(n["review"]["class"] == "Artifact");
  CHECK_FALSE(n["score"]["evaluable"].get<bool>());

  auto bad = s.patch(id, nid, {{"action", "set_class"}, {"class", "Purple"}});
  REQUIRE(bad);
  CHECK(bad->status == 422);
  auto nope = s.patch(id, 99999, {{"action", "exclude"}});
  REQUIRE(nope);
  CHECK(nope->status == 404);
  auto verb = s.patch(id, nid, {{"action", "shred"}});
  REQUIRE(verb);
  CHECK(verb->status == 422);
  auto garbage = s.client.Patch("/slides/" + id + "/nuclei/0", std::string("{"), "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  // failed edits are not logged
  CHECK(Json::parse(s.client.Get("/slides/" + id + "/events")->body).size() == 1);
}

TEST_CASE("service: config PUT re-grades, identical config is a no-op") {
  Server s;
  const auto id = s.upload();
  const auto base = s.report(id);
  auto same = s.put_config(id, base["config"]["scoring"]);
  REQUIRE(same);
  REQUIRE(same->status == 200);
  CHECK(Json::parse(same->body)["status"] == base["status"]);

  auto neg = s.put_config(id, {{"ratio_threshold", 50}});
  REQUIRE(neg);
  REQUIRE(neg->status == 200);
  const auto rep = Json::parse(neg->body);
  CHECK(rep["status"]["status"] == "Negative");
  for (std::size_t i = 0; i < rep["nuclei"].size(); ++i)
    CHECK(rep["nuclei"][i]["signals"] == base["nuclei"][i]["signals"]);

  auto bad = s.put_config(id, {{"ratio_treshold", 3}});
  REQUIRE(bad);
  CHECK(bad->status == 422);
  CHECK(s.report(id)["status"]["status"] == "Negative");
}

TEST_CASE("service: overlays") {
  Server s;
  const auto id = s.upload();
  const auto rep = s.report(id);
  std::size_t total = 0;
  for (const auto& n : rep["nuclei"]) total += n["signals"].size();

  auto all = s.client.Get("/slides/" + id + "/overlay");
  REQUIRE(all);
  CHECK(all->status == 200);
  CHECK(all->get_header_value("Content-Type") == "image/png");
  CHECK(all->body.substr(1, 3) == "PNG");
  CHECK(std::stoul(all->get_header_value("X-Fishgrade-Polygons")) == rep["nuclei"].size());
  CHECK(std::stoul(all->get_header_value("X-Fishgrade-Boxes")) == total);

  auto sig = s.client.Get("/slides/" + id + "/overlay?layer=signals");
  REQUIRE(sig);
  CHECK(sig->get_header_value("X-Fishgrade-Polygons") == "0");
  CHECK(std::stoul(sig->get_header_value("X-Fishgrade-Boxes")) == total);

  CHECK(s.client.Get("/slides/" + id + "/overlay?layer=cam")->status == 400);
  CHECK(s.client.Get("/slides/" + id + "/overlay?layer=cam&nucleus=0")->status == 404);
  CHECK(s.client.Get("/slides/" + id + "/overlay?layer=xray")->status == 400);
}

TEST_CASE("service: bearer token") {
  ServiceOptions o;
  o.token = "s3cret";
  Server s(o);
  CHECK(s.client.Get("/healthz")->status == 200);
  auto no = s.client.Post("/slides", slide_png(), "image/png");
  REQUIRE(no);
  CHECK(no->status == 401);
  auto wrong = s.client.Get("/slides/x/report", {{"Authorization", "Bearer nope"}});
  CHECK(wrong->status == 401);
  s.client.set_bearer_token_auth("s3cret");
  auto ok = s.client.Post("/slides", slide_png(), "image/png");
  REQUIRE(ok);
  CHECK(ok->status == 202);
}

TEST_CASE("service: sessions survive a restart with their review log") {
  TempDir dir("persist");
  ServiceOptions o;
  o.data_dir = dir.path;
  Json before;
  std::string id;
  {
    Server s(o);
    id = s.upload();
    const int nid = first_evaluable(s.report(id));
    REQUIRE(s.patch(id, nid, {{"action", "exclude"}})->status == 200);
    REQUIRE(s.put_config(id, {{"ratio_threshold", 2.5}})->status == 200);
    before = s.report(id);
  }
  Server s(o);
  auto after = s.report(id);
  after["generated_at"] = before["generated_at"];
  CHECK(after == before);
  CHECK(Json::parse(s.client.Get("/slides/" + id + "/events")->body).size() == 2);
}
