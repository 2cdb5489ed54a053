#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpred/bayesnet.hpp"
#include "finpred/registry.hpp"

namespace httplib {
class Server;
}

namespace finpred {

/// Loaded artifacts. Immutable once built; a reload replaces the whole set.
struct ArtifactSet {
  std::map<std::string, std::shared_ptr<const ModelArtifact>> models;  // by name
  std::shared_ptr<const BayesNet> bn;
  std::string source;

  /// Every *.model.json in `dir` (name = artifact name, else file stem) and
  /// bn.json if present.
  static ArtifactSet load_directory(const std::string& dir);
};

struct HttpResult {
  int status = 200;
  nlohmann::ordered_json body;
};

class Service {
 public:
  explicit Service(ArtifactSet artifacts);

  /// Atomically replaces the artifact set; in-flight requests keep the old one.
  void reload(ArtifactSet artifacts);
  std::shared_ptr<const ArtifactSet> snapshot() const;

  /// Dispatch by method and path; `body` is the raw request text.
  HttpResult handle(const std::string& method, const std::string& path, const std::string& body) const;

  HttpResult models() const;
  HttpResult predict(const nlohmann::json& req) const;
  HttpResult whatif(const nlohmann::json& req) const;
  HttpResult bn_query(const nlohmann::json& req) const;
  HttpResult bn_batch(const nlohmann::json& req) const;

  /// Blocks serving HTTP until stop() or failure. Returns false if the bind fails.
  bool serve(const std::string& host, int port);
  void stop();

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const ArtifactSet> artifacts_;
  httplib::Server* server_ = nullptr;  // set while serving
};

/// {"error": {"code", "message", "fields"}}
nlohmann::ordered_json error_body(const std::string& code, const std::string& message,
                                  const std::vector<std::string>& fields = {});

}  // namespace finpred
