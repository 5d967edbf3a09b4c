#pragma once

// Chat-completions endpoints: the policy being trained, CC judges, and the
// curation extractor/validator all sit behind ChatEndpoint.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace formaforge {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  /// Template that produced the messages; part of the mock fingerprint.
  std::string template_name;
  /// Semantic input of the request (e.g. the statement being translated).
  /// Mock scripts are keyed by template_name plus a hash of this.
  std::string fingerprint_key;
  std::vector<ChatMessage> messages;
  double temperature = 0.6;
  std::optional<double> min_p;
  int max_tokens = 2048;
  int n = 1;
  bool logprobs = false;
  std::optional<std::uint64_t> seed;
};

struct ChatChoice {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
};

struct ChatResponse {
  std::vector<ChatChoice> choices;
};

/// Network or protocol failure. Retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual ChatResponse complete(const ChatRequest& req) = 0;
  /// Stable description recorded in run manifests.
  virtual std::string identity() const = 0;
  /// True if one request may ask for n > 1 choices.
  virtual bool supports_n() const { return false; }
};

/// "<template_name>:<sha256(fingerprint_key)>".
std::string fingerprint(const ChatRequest& req);

/// Joins the parts of a multi-input fingerprint key with "\n---\n".
std::string join_key(const std::vector<std::string_view>& parts);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{500};
};

/// Calls fn() up to policy.attempts times, sleeping base_delay * 2^i between
/// attempts, retrying only on TransportError. The last error is rethrown.
template <class Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  const int attempts = policy.attempts < 1 ? 1 : policy.attempts;
  for (int i = 0;; ++i) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (i + 1 >= attempts) throw;
      std::this_thread::sleep_for(policy.base_delay * (1 << i));
    }
  }
}

/// Caps the number of requests in flight to the wrapped endpoint.
class ThrottledEndpoint : public ChatEndpoint {
 public:
  ThrottledEndpoint(ChatEndpoint& inner, int max_in_flight);
  ChatResponse complete(const ChatRequest& req) override;
  std::string identity() const override { return inner_.identity(); }
  bool supports_n() const override { return inner_.supports_n(); }

 private:
  ChatEndpoint& inner_;
  std::counting_semaphore<4096> slots_;
};

struct HttpEndpointConfig {
  std::string name;
  /// e.g. "http://localhost:8000/v1"; requests go to <base_url>/chat/completions.
  std::string base_url;
  std::string model;
  /// Environment variable holding the API key; empty for none.
  std::string api_key_env;
  bool supports_n = false;
  double timeout_s = 300.0;
};

class HttpChatEndpoint : public ChatEndpoint {
 public:
  explicit HttpChatEndpoint(HttpEndpointConfig cfg);
  ChatResponse complete(const ChatRequest& req) override;
  std::string identity() const override;
  bool supports_n() const override { return cfg_.supports_n; }

  /// Request body sent for `req`.
  nlohmann::json request_body(const ChatRequest& req) const;
  /// Parses a chat-completions response body. Throws TransportError when
  /// the body does not follow the convention.
  static ChatResponse parse_response(const nlohmann::json& body);

 private:
  HttpEndpointConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace formaforge
