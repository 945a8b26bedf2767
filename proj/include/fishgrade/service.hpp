#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "fishgrade/config.hpp"
#include "fishgrade/image_io.hpp"

namespace fishgrade {

struct ServiceOptions {
  std::filesystem::path data_dir;  // sessions persist here when set
  std::string token;               // bearer token; empty disables auth
  PipelineConfig default_config;
  ChannelMap channel_map;
  unsigned threads = 0;
};

// Review sessions over HTTP/1.1:
//   POST  /slides                       image body (or multipart image+config) -> 202 {id}
//   GET   /slides/{id}/report           200 report | 202 progress | 404
//   PATCH /slides/{id}/nuclei/{nid}     {"action": set_class|exclude|include|reset, "class": ...}
//   PUT   /slides/{id}/config           scoring config -> re-graded report
//   GET   /slides/{id}/overlay          ?layer=all|nuclei|signals|cam&nucleus=N -> PNG
//   GET   /slides/{id}/events           review log
//   GET   /healthz                      "ok"
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds (port 0 picks a free one), starts serving on a background thread
  // and returns the bound port.
  int start(const std::string& host, int port);
  // Blocks until stop() is called or the listener fails.
  void wait();
  void stop();

  // Blocks until no session is processing (tests and shutdown).
  void drain();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

inline constexpr const char* kSchemaHeader = "X-Fishgrade-Schema";

}  // namespace fishgrade
