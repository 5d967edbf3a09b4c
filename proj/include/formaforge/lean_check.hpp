#pragma once

// Syntax check (SC): elaborate a sorry-terminated statement against Mathlib
// through the Lean REPL and classify the messages it returns.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "formaforge/datastore.hpp"

namespace formaforge {

using Seconds = std::chrono::duration<double>;

struct CheckRequest {
  std::string candidate_id;
  std::string code;  // statement without the header
  Seconds timeout{120.0};
};

enum class SyntaxStatus { pass, fail, timeout, worker_error };

std::string_view to_string(SyntaxStatus s);

struct SyntaxVerdict {
  SyntaxStatus status = SyntaxStatus::worker_error;
  std::vector<Diagnostic> diagnostics;
};

class SyntaxChecker {
 public:
  virtual ~SyntaxChecker() = default;
  /// Never throws for a well-formed request; failures are verdicts.
  virtual SyntaxVerdict check(const CheckRequest& req) = 0;
  virtual std::string identity() const = 0;
};

/// Verdicts in input order; at most `parallelism` requests in flight.
std::vector<SyntaxVerdict> check_batch(SyntaxChecker& checker,
                                       std::span<const CheckRequest> reqs,
                                       std::size_t parallelism);

/// The fixed Mathlib environment every statement is checked in.
std::string_view lean_header();

/// lean_header(), a blank line, then `code` unmodified. Throws
/// std::invalid_argument on empty code.
std::string wrap_with_header(std::string_view code);

/// Drops `import ` and `set_option ` lines that precede the first
/// declaration keyword. Everything else is kept byte-for-byte.
std::string strip_imports(std::string_view code);

/// Classifies one REPL response object. Any error-severity message fails;
/// warnings (including "declaration uses 'sorry'") pass; a response without
/// a message list or env is a worker error. `line_offset` is subtracted from
/// reported line numbers.
SyntaxVerdict classify_repl_response(const nlohmann::json& response,
                                     int line_offset = 0);

struct ReplConfig {
  /// REPL command line, run inside project_dir.
  std::vector<std::string> command{"lake", "exe", "repl"};
  std::filesystem::path project_dir = ".";
  std::size_t workers = 0;  // 0: hardware concurrency
  /// Elaborate the header once per worker and check each statement in a
  /// fresh command on top of that environment. When false every request
  /// carries the full wrapped source.
  bool reuse_header_env = true;
  Seconds startup_timeout{600.0};
};

/// One REPL child process speaking JSON commands over stdin/stdout.
class ReplSession {
 public:
  explicit ReplSession(const ReplConfig& cfg);
  ~ReplSession();
  ReplSession(const ReplSession&) = delete;
  ReplSession& operator=(const ReplSession&) = delete;

  enum class Outcome { ok, timeout, io_error };
  struct Reply {
    Outcome outcome = Outcome::io_error;
    nlohmann::json body;
    std::string error;
  };

  /// Sends one command object and waits for its response.
  Reply send(const nlohmann::json& command, Seconds timeout);
  bool alive() const { return pid_ > 0; }
  /// Environment id holding the header, when reuse_header_env is on.
  std::optional<int> header_env() const { return header_env_; }
  void kill();

 private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::optional<int> header_env_;
};

/// Pool of REPL sessions. Requests beyond the pool size wait for a free
/// session. A session that timed out or failed is killed and restarted before
/// its next use.
class ReplPool : public SyntaxChecker {
 public:
  explicit ReplPool(ReplConfig cfg);
  ~ReplPool() override;

  SyntaxVerdict check(const CheckRequest& req) override;
  std::string identity() const override;
  std::size_t size() const { return slots_.size(); }
  /// Number of sessions started so far, restarts included.
  std::size_t sessions_started() const;

 private:
  std::size_t acquire();
  void release(std::size_t slot);
  bool ensure_started(std::size_t slot, std::string& error);

  ReplConfig cfg_;
  std::vector<std::unique_ptr<ReplSession>> slots_;
  std::vector<bool> busy_;
  mutable std::mutex mutex_;
  std::condition_variable free_;
  std::size_t started_ = 0;
};

}  // namespace formaforge
