#pragma once

#include <cstddef>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "winocirc/app.hpp"

namespace winocirc {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Largest number of interchanges one /sweep request may ask for.
  std::size_t cell_budget = 20000;
  std::size_t cache_capacity = 64;  // InterchangeContexts kept
  unsigned threads = 0;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

class ApiService {
 public:
  ApiService(Workspace workspace, ServiceOptions options = {});

  // Routes one request; every body carries "manifest_digest".
  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::string& body = {}) const;

  const RunManifest& manifest() const { return manifest_; }
  const std::string& manifest_digest() const { return digest_; }
  const ServiceOptions& options() const { return options_; }

  // Number of interchanges a single-pair sweep of `kind` would run.
  std::size_t sweep_cost(const WinogradPair& pair, SweepKind kind, const SweepOptions& o) const;

  // Binds the socket; port 0 picks a free one. Returns the port or -1.
  int bind();
  // Serves until stop(); binds first if needed. False when binding fails.
  bool listen();
  bool running() const;
  void stop();

 private:
  nlohmann::json health() const;
  nlohmann::json list_pairs() const;
  nlohmann::json pair_document(const WinogradPair& pair) const;
  nlohmann::json score(const nlohmann::json& req) const;
  nlohmann::json interchange(const nlohmann::json& req) const;
  nlohmann::json sweep(const nlohmann::json& req) const;

  const WinogradPair& find_pair(const std::string& id, Condition condition) const;
  std::shared_ptr<const InterchangeContext> context_for(const WinogradPair& pair) const;

  Workspace ws_;
  ServiceOptions options_;
  RunManifest manifest_;
  std::string digest_;

  mutable std::mutex cache_mutex_;
  mutable std::list<std::pair<std::string, std::shared_ptr<const InterchangeContext>>> cache_;

  struct Server;
  std::shared_ptr<Server> server_;
  int bound_port_ = -1;
};

}  // namespace winocirc
