#pragma once

// Deterministic offline stand-ins for the inference endpoint, the judge and
// the Lean checker.
//
// A Script maps request fingerprints to ordered canned responses. Each
// fingerprint has its own cursor; a request asking for n choices consumes n
// consecutive responses atomically. Two concurrent requests with the same
// fingerprint race for the cursor, so a fingerprint that may be requested
// concurrently should have a single (repeated) response.

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "formaforge/chat.hpp"
#include "formaforge/lean_check.hpp"

namespace formaforge::mock {

/// Script misuse: unknown fingerprint, exhausted script, malformed file.
/// Deliberately not a TransportError, so retries never hide it.
class MockError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ScriptedResponse {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  /// Simulates a transport failure; consumed like any other response.
  bool transport_error = false;
};

enum class Exhaustion { repeat_last, error };

class Script {
 public:
  Exhaustion exhaustion = Exhaustion::repeat_last;
  bool supports_n = true;

  /// Adds responses under fingerprint "<template_name>:<sha256(key)>".
  Script& add(std::string_view template_name, std::string_view key,
              std::vector<ScriptedResponse> responses);
  Script& add_fingerprint(std::string fingerprint,
                          std::vector<ScriptedResponse> responses);

  const std::map<std::string, std::vector<ScriptedResponse>>& entries() const {
    return entries_;
  }

  /// File format:
  ///   {"exhaustion": "repeat_last"|"error", "supports_n": bool,
  ///    "entries": [{"template": str, "key": str|[str], "responses": [R, ...]},
  ///                {"fingerprint": str, "responses": [R, ...]}]}
  /// An array key is joined with join_key(). R is a string, {"text": str, "token_logprobs": [num]} or
  /// {"transport_error": true}.
  static Script from_json(const nlohmann::json& j);
  static Script load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::vector<ScriptedResponse>> entries_;
};

class MockChatEndpoint : public ChatEndpoint {
 public:
  explicit MockChatEndpoint(Script script, std::string name = "mock");

  ChatResponse complete(const ChatRequest& req) override;
  std::string identity() const override { return "mock:" + name_; }
  bool supports_n() const override { return script_.supports_n; }

  /// Fingerprints of every request, in arrival order.
  std::vector<std::string> call_log() const;
  std::size_t calls_for_template(std::string_view template_name) const;
  std::size_t total_calls() const;

 private:
  const Script script_;
  std::string name_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> cursors_;
  std::vector<std::string> log_;
};

/// Rule-based syntax verdicts:
///   contains "SCFAIL"                             -> fail
///   contains "SCTIMEOUT"                          -> timeout
///   contains "SCCRASH"                            -> worker_error
///   contains ":= sorry" and theorem/example/lemma -> pass
///   anything else                                 -> fail
SyntaxVerdict mock_check(std::string_view code);

class MockChecker : public SyntaxChecker {
 public:
  SyntaxVerdict check(const CheckRequest& req) override;
  std::string identity() const override { return "mock-checker"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::atomic<std::size_t> calls_{0};
};

}  // namespace formaforge::mock
