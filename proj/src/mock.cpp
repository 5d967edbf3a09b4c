#include "formaforge/mock.hpp"

#include <fstream>
#include <regex>

#include "formaforge/hash.hpp"

namespace formaforge::mock {

namespace {

ScriptedResponse response_from_json(const nlohmann::json& r) {
  if (r.is_string()) return {r.get<std::string>(), std::nullopt, false};
  if (!r.is_object()) throw MockError("script response must be a string or object");
  ScriptedResponse out;
  out.transport_error = r.value("transport_error", false);
  if (!out.transport_error) {
    if (!r.contains("text")) throw MockError("script response object needs 'text'");
    out.text = r.at("text").get<std::string>();
  }
  if (r.contains("token_logprobs") && !r["token_logprobs"].is_null()) {
    out.token_logprobs = r["token_logprobs"].get<std::vector<double>>();
  }
  return out;
}

nlohmann::json response_to_json(const ScriptedResponse& r) {
  if (r.transport_error) return {{"transport_error", true}};
  if (!r.token_logprobs) return r.text;
  return {{"text", r.text}, {"token_logprobs", *r.token_logprobs}};
}

}  // namespace

Script& Script::add(std::string_view template_name, std::string_view key,
                    std::vector<ScriptedResponse> responses) {
  return add_fingerprint(std::string(template_name) + ":" + sha256_hex(key),
                         std::move(responses));
}

Script& Script::add_fingerprint(std::string fp,
                                std::vector<ScriptedResponse> responses) {
  if (responses.empty()) throw MockError("script entry '" + fp + "' has no responses");
  auto& slot = entries_[fp];
  slot.insert(slot.end(), std::make_move_iterator(responses.begin()),
              std::make_move_iterator(responses.end()));
  return *this;
}

Script Script::from_json(const nlohmann::json& j) {
  Script s;
  const std::string ex = j.value("exhaustion", std::string("repeat_last"));
  if (ex == "repeat_last") {
    s.exhaustion = Exhaustion::repeat_last;
  } else if (ex == "error") {
    s.exhaustion = Exhaustion::error;
  } else {
    throw MockError("unknown exhaustion policy '" + ex + "'");
  }
  s.supports_n = j.value("supports_n", true);
  for (const auto& e : j.value("entries", nlohmann::json::array())) {
    std::vector<ScriptedResponse> responses;
    for (const auto& r : e.at("responses")) responses.push_back(response_from_json(r));
    if (e.contains("fingerprint")) {
      s.add_fingerprint(e["fingerprint"].get<std::string>(), std::move(responses));
    } else {
      const auto& key = e.at("key");
      std::string joined;
      if (key.is_array()) {
        const auto parts = key.get<std::vector<std::string>>();
        joined = join_key({parts.begin(), parts.end()});
      } else {
        joined = key.get<std::string>();
      }
      s.add(e.at("template").get<std::string>(), joined, std::move(responses));
    }
  }
  return s;
}

Script Script::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MockError("cannot open script " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw MockError(path.string() + ": " + e.what());
  }
}

nlohmann::json Script::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [fp, responses] : entries_) {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : responses) rs.push_back(response_to_json(r));
    entries.push_back({{"fingerprint", fp}, {"responses", std::move(rs)}});
  }
  return {{"exhaustion", exhaustion == Exhaustion::error ? "error" : "repeat_last"},
          {"supports_n", supports_n},
          {"entries", std::move(entries)}};
}

MockChatEndpoint::MockChatEndpoint(Script script, std::string name)
    : script_(std::move(script)), name_(std::move(name)) {}

ChatResponse MockChatEndpoint::complete(const ChatRequest& req) {
  const std::string fp = fingerprint(req);
  const int n = req.n < 1 ? 1 : req.n;
  if (n > 1 && !script_.supports_n) {
    throw MockError("mock endpoint '" + name_ + "' does not support n > 1");
  }
  std::vector<const ScriptedResponse*> picked;
  {
    std::lock_guard lock(mutex_);
    log_.push_back(fp);
    auto it = script_.entries().find(fp);
    if (it == script_.entries().end()) {
      throw MockError("mock endpoint '" + name_ + "': unknown request fingerprint " + fp);
    }
    const auto& responses = it->second;
    std::size_t& cursor = cursors_[fp];
    for (int i = 0; i < n; ++i) {
      if (cursor >= responses.size()) {
        if (script_.exhaustion == Exhaustion::error) {
          throw MockError("mock endpoint '" + name_ + "': script exhausted for " + fp);
        }
        picked.push_back(&responses.back());
      } else {
        picked.push_back(&responses[cursor++]);
      }
    }
  }
  ChatResponse out;
  for (const ScriptedResponse* r : picked) {
    if (r->transport_error) {
      throw TransportError("mock endpoint '" + name_ + "': scripted transport failure");
    }
    out.choices.push_back({r->text, r->token_logprobs});
  }
  return out;
}

std::vector<std::string> MockChatEndpoint::call_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::size_t MockChatEndpoint::calls_for_template(std::string_view template_name) const {
  const std::string prefix = std::string(template_name) + ":";
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& fp : log_) n += fp.starts_with(prefix) ? 1 : 0;
  return n;
}

std::size_t MockChatEndpoint::total_calls() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

SyntaxVerdict mock_check(std::string_view code) {
  static const std::regex decl(R"(\b(theorem|example|lemma)\b)");
  auto fail = [](std::string text) {
    return SyntaxVerdict{SyntaxStatus::fail,
                         {{Severity::error, SourcePosition{1, 0}, std::move(text)}}};
  };
  if (code.find("SCFAIL") != std::string_view::npos) return fail("SCFAIL marker");
  if (code.find("SCTIMEOUT") != std::string_view::npos) {
    return {SyntaxStatus::timeout, {{Severity::error, std::nullopt, "SCTIMEOUT marker"}}};
  }
  if (code.find("SCCRASH") != std::string_view::npos) {
    return {SyntaxStatus::worker_error, {{Severity::error, std::nullopt, "SCCRASH marker"}}};
  }
  if (code.find(":= sorry") != std::string_view::npos &&
      std::regex_search(code.begin(), code.end(), decl)) {
    return {SyntaxStatus::pass,
            {{Severity::warning, SourcePosition{1, 0}, "declaration uses 'sorry'"}}};
  }
  return fail("not a sorry-terminated declaration");
}

SyntaxVerdict MockChecker::check(const CheckRequest& req) {
  ++calls_;
  return mock_check(req.code);
}

}  // namespace formaforge::mock
