#include "formaforge/chat.hpp"

#include <cstdlib>

#include <httplib.h>

#include "formaforge/hash.hpp"

namespace formaforge {

std::string fingerprint(const ChatRequest& req) {
  return req.template_name + ":" + sha256_hex(req.fingerprint_key);
}

std::string join_key(const std::vector<std::string_view>& parts) {
  std::string key;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i != 0) key += "\n---\n";
    key.append(parts[i]);
  }
  return key;
}

ThrottledEndpoint::ThrottledEndpoint(ChatEndpoint& inner, int max_in_flight)
    : inner_(inner), slots_(max_in_flight < 1 ? 1 : max_in_flight) {}

ChatResponse ThrottledEndpoint::complete(const ChatRequest& req) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<4096>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_.complete(req);
}

HttpChatEndpoint::HttpChatEndpoint(HttpEndpointConfig cfg) : cfg_(std::move(cfg)) {
  const std::string& url = cfg_.base_url;
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("endpoint '" + cfg_.name +
                                "': base_url needs a scheme: " + url);
  }
  const std::size_t path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpChatEndpoint::identity() const {
  return cfg_.name + " (" + cfg_.model + " @ " + cfg_.base_url + ")";
}

nlohmann::json HttpChatEndpoint::request_body(const ChatRequest& req) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  nlohmann::json body{{"model", cfg_.model},
                      {"messages", std::move(messages)},
                      {"temperature", req.temperature},
                      {"max_tokens", req.max_tokens},
                      {"n", req.n}};
  if (req.min_p) body["min_p"] = *req.min_p;
  if (req.logprobs) body["logprobs"] = true;
  if (req.seed) body["seed"] = *req.seed;
  return body;
}

ChatResponse HttpChatEndpoint::parse_response(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array()) {
    throw TransportError("response has no choices array");
  }
  ChatResponse out;
  for (const auto& choice : body["choices"]) {
    ChatChoice c;
    const auto& msg = choice.value("message", nlohmann::json::object());
    if (msg.contains("content") && msg["content"].is_string()) {
      c.text = msg["content"].get<std::string>();
    }
    if (choice.contains("logprobs") && choice["logprobs"].is_object()) {
      const auto& lp = choice["logprobs"];
      if (lp.contains("content") && lp["content"].is_array()) {
        std::vector<double> values;
        for (const auto& tok : lp["content"]) {
          if (tok.contains("logprob") && tok["logprob"].is_number()) {
            values.push_back(tok["logprob"].get<double>());
          }
        }
        c.token_logprobs = std::move(values);
      }
    }
    out.choices.push_back(std::move(c));
  }
  return out;
}

ChatResponse HttpChatEndpoint::complete(const ChatRequest& req) {
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  client.set_connection_timeout(secs < 10 ? secs : 10, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);

  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  const auto res = client.Post(path_prefix_ + "/chat/completions", headers,
                               request_body(req).dump(), "application/json");
  if (!res) {
    throw TransportError("endpoint '" + cfg_.name +
                         "': " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("endpoint '" + cfg_.name + "': HTTP " +
                         std::to_string(res->status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw TransportError("endpoint '" + cfg_.name + "': invalid JSON body");
  }
  return parse_response(body);
}

}  // namespace formaforge
