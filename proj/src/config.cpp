#include "formaforge/config.hpp"

#include <fstream>

#include "formaforge/mock.hpp"

namespace formaforge {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: field '") + key + "' has the wrong type");
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  PipelineConfig cfg;
  for (const auto& e : j.value("endpoints", json::array())) {
    EndpointSpec s;
    if (!e.contains("name")) throw ConfigError("config: endpoint without 'name'");
    s.name = e["name"].get<std::string>();
    s.kind = get_or<std::string>(e, "kind", "http");
    s.max_in_flight = get_or<int>(e, "max_in_flight", 0);
    if (s.kind == "http") {
      s.http.name = s.name;
      s.http.base_url = get_or<std::string>(e, "base_url", "");
      s.http.model = get_or<std::string>(e, "model", "");
      s.http.api_key_env = get_or<std::string>(e, "api_key_env", "");
      s.http.supports_n = get_or<bool>(e, "supports_n", false);
      s.http.timeout_s = get_or<double>(e, "timeout_s", 300.0);
      if (s.http.base_url.empty() || s.http.model.empty()) {
        throw ConfigError("config: http endpoint '" + s.name + "' needs base_url and model");
      }
    } else if (s.kind == "mock") {
      const auto script = get_or<std::string>(e, "script", "");
      if (script.empty()) throw ConfigError("config: mock endpoint '" + s.name + "' needs script");
      s.script = resolve(base_dir, script);
    } else {
      throw ConfigError("config: endpoint '" + s.name + "' has unknown kind '" + s.kind + "'");
    }
    if (!cfg.specs_.emplace(s.name, s).second) {
      throw ConfigError("config: duplicate endpoint '" + s.name + "'");
    }
  }
  if (j.contains("lean")) {
    const json& l = j["lean"];
    cfg.lean_.kind = get_or<std::string>(l, "kind", "mock");
    if (cfg.lean_.kind != "repl" && cfg.lean_.kind != "mock") {
      throw ConfigError("config: lean.kind must be repl or mock");
    }
    cfg.lean_.repl.command = get_or<std::vector<std::string>>(l, "command", cfg.lean_.repl.command);
    cfg.lean_.repl.project_dir = resolve(base_dir, get_or<std::string>(l, "project_dir", "."));
    cfg.lean_.repl.workers = get_or<std::size_t>(l, "workers", 0);
    cfg.lean_.repl.reuse_header_env = get_or<bool>(l, "reuse_header_env", true);
    cfg.lean_.repl.startup_timeout = Seconds(get_or<double>(l, "startup_timeout_s", 600.0));
    cfg.lean_.timeout = Seconds(get_or<double>(l, "timeout_s", 120.0));
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path().empty() ? "." : path.parent_path());
}

ChatEndpoint& PipelineConfig::endpoint(const std::string& name) {
  if (auto it = built_.find(name); it != built_.end()) return *it->second;
  const auto spec = specs_.find(name);
  if (spec == specs_.end()) throw ConfigError("config: no endpoint named '" + name + "'");
  const EndpointSpec& s = spec->second;
  std::unique_ptr<ChatEndpoint> ep;
  if (s.kind == "mock") {
    ep = std::make_unique<mock::MockChatEndpoint>(mock::Script::load(s.script), s.name);
  } else {
    ep = std::make_unique<HttpChatEndpoint>(s.http);
  }
  if (s.max_in_flight > 0) {
    auto throttled = std::make_unique<ThrottledEndpoint>(*ep, s.max_in_flight);
    inner_[name] = std::move(ep);
    ep = std::move(throttled);
  }
  return *(built_[name] = std::move(ep));
}

SyntaxChecker& PipelineConfig::checker() {
  if (!checker_) {
    if (lean_.kind == "repl") {
      checker_ = std::make_unique<ReplPool>(lean_.repl);
    } else {
      checker_ = std::make_unique<mock::MockChecker>();
    }
  }
  return *checker_;
}

}  // namespace formaforge
