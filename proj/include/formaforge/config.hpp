#pragma once

// Pipeline configuration file: named chat endpoints and the syntax checker.
//
//   {
//     "endpoints": [
//       {"name": "policy", "kind": "http", "base_url": "http://localhost:8000/v1",
//        "model": "formal-7b", "api_key_env": "POLICY_KEY", "supports_n": true,
//        "max_in_flight": 8, "timeout_s": 300},
//       {"name": "judge", "kind": "mock", "script": "judge_script.json"}
//     ],
//     "lean": {"kind": "repl", "command": ["lake", "exe", "repl"],
//              "project_dir": "/opt/lean-project", "workers": 4,
//              "timeout_s": 120, "reuse_header_env": true}
//   }
//
// Relative paths are resolved against the config file's directory.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "formaforge/chat.hpp"
#include "formaforge/datastore.hpp"
#include "formaforge/lean_check.hpp"

namespace formaforge {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EndpointSpec {
  std::string name;
  std::string kind = "http";  // http | mock
  HttpEndpointConfig http;
  std::filesystem::path script;
  int max_in_flight = 0;  // 0: unthrottled
};

struct LeanSpec {
  std::string kind = "mock";  // repl | mock
  ReplConfig repl;
  Seconds timeout{120.0};
};

class PipelineConfig {
 public:
  static PipelineConfig from_json(const json& j,
                                  const std::filesystem::path& base_dir = ".");
  static PipelineConfig load(const std::filesystem::path& path);

  /// Built on first use and cached; the same name yields the same object.
  ChatEndpoint& endpoint(const std::string& name);
  SyntaxChecker& checker();
  const LeanSpec& lean() const { return lean_; }
  bool has_endpoint(const std::string& name) const { return specs_.count(name) != 0; }

 private:
  std::map<std::string, EndpointSpec> specs_;
  LeanSpec lean_;
  std::map<std::string, std::unique_ptr<ChatEndpoint>> inner_;
  std::map<std::string, std::unique_ptr<ChatEndpoint>> built_;
  std::unique_ptr<SyntaxChecker> checker_;
};

}  // namespace formaforge
