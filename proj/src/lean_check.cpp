#include "formaforge/lean_check.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <regex>
#include <stdexcept>
#include <thread>

#include "formaforge/parallel.hpp"

namespace formaforge {

namespace {

constexpr std::string_view kHeader =
    "import Mathlib\n"
    "import Aesop\n"
    "set_option maxHeartbeats 0\n"
    "open Topology\n"
    "open BigOperators\n"
    "open Nat\n"
    "open Real\n"
    "open Rat";

// Lines before the candidate code in wrap_with_header output.
constexpr int kHeaderLines = 9;

bool starts_with_decl_keyword(std::string_view line) {
  static const std::regex decl(
      R"(^\s*(@\[|(private|protected|noncomputable|nonrec|unsafe|partial)\s|(theorem|lemma|example|def|abbrev|instance|structure|class|inductive|axiom|opaque|namespace|section|variable)\b))");
  return std::regex_search(line.begin(), line.end(), decl);
}

void ignore_sigpipe_once() {
  static const bool done = [] {
    struct sigaction sa {};
    sa.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &sa, nullptr);
    return true;
  }();
  (void)done;
}

}  // namespace

std::string_view to_string(SyntaxStatus s) {
  switch (s) {
    case SyntaxStatus::pass: return "pass";
    case SyntaxStatus::fail: return "fail";
    case SyntaxStatus::timeout: return "timeout";
    case SyntaxStatus::worker_error: return "worker_error";
  }
  return "worker_error";
}

std::string_view lean_header() { return kHeader; }

std::string wrap_with_header(std::string_view code) {
  if (code.empty()) throw std::invalid_argument("wrap_with_header: empty code");
  std::string out(kHeader);
  out.append("\n\n");
  out.append(code);
  return out;
}

std::string strip_imports(std::string_view code) {
  std::string out;
  out.reserve(code.size());
  std::size_t pos = 0;
  bool in_preamble = true;
  while (pos < code.size()) {
    std::size_t eol = code.find('\n', pos);
    const std::size_t next = eol == std::string_view::npos ? code.size() : eol + 1;
    const std::string_view line = code.substr(pos, next - pos);
    if (in_preamble && starts_with_decl_keyword(line)) in_preamble = false;
    const bool drop = in_preamble && (line.starts_with("import ") ||
                                      line.starts_with("set_option "));
    if (!drop) out.append(line);
    pos = next;
  }
  return out;
}

SyntaxVerdict classify_repl_response(const nlohmann::json& response,
                                     int line_offset) {
  SyntaxVerdict v;
  if (!response.is_object()) {
    v.status = SyntaxStatus::worker_error;
    v.diagnostics.push_back({Severity::error, std::nullopt, "REPL response is not an object"});
    return v;
  }
  const bool has_messages = response.contains("messages");
  if (!has_messages && !response.contains("env")) {
    v.status = SyntaxStatus::worker_error;
    std::string text = "malformed REPL response";
    if (auto it = response.find("message"); it != response.end() && it->is_string()) {
      text = it->get<std::string>();
    }
    v.diagnostics.push_back({Severity::error, std::nullopt, std::move(text)});
    return v;
  }
  bool any_error = false;
  if (has_messages) {
    const auto& msgs = response["messages"];
    if (!msgs.is_array()) {
      v.status = SyntaxStatus::worker_error;
      v.diagnostics.push_back({Severity::error, std::nullopt, "'messages' is not an array"});
      return v;
    }
    for (const auto& m : msgs) {
      Diagnostic d;
      const std::string sev = m.value("severity", std::string("error"));
      try {
        d.severity = parse_severity(sev);
      } catch (const DataError&) {
        d.severity = Severity::error;
      }
      d.text = m.value("data", std::string());
      if (auto it = m.find("pos"); it != m.end() && it->is_object()) {
        d.position = SourcePosition{it->value("line", 0) - line_offset,
                                    it->value("column", 0)};
      }
      any_error = any_error || d.severity == Severity::error;
      v.diagnostics.push_back(std::move(d));
    }
  }
  v.status = any_error ? SyntaxStatus::fail : SyntaxStatus::pass;
  return v;
}

std::vector<SyntaxVerdict> check_batch(SyntaxChecker& checker,
                                       std::span<const CheckRequest> reqs,
                                       std::size_t parallelism) {
  if (parallelism < 1) throw std::invalid_argument("check_batch: parallelism must be >= 1");
  std::vector<SyntaxVerdict> out(reqs.size());
  parallel_for(reqs.size(), parallelism, [&](std::size_t i) {
    try {
      out[i] = checker.check(reqs[i]);
    } catch (const std::exception& e) {
      out[i] = SyntaxVerdict{SyntaxStatus::worker_error,
                             {{Severity::error, std::nullopt, e.what()}}};
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// ReplSession

ReplSession::ReplSession(const ReplConfig& cfg) {
  ignore_sigpipe_once();
  if (cfg.command.empty()) throw std::invalid_argument("REPL command is empty");

  int in_pipe[2];
  int out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw std::runtime_error("pipe failed");
  }

  std::vector<std::string> args = cfg.command;
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  const std::string dir = cfg.project_dir.string();

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    throw std::runtime_error("fork failed");
  }
  if (pid == 0) {
    // Child: only async-signal-safe calls until exec.
    setpgid(0, 0);
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    if (chdir(dir.c_str()) != 0) _exit(127);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  if (cfg.reuse_header_env) {
    Reply r = send({{"cmd", std::string(kHeader)}}, cfg.startup_timeout);
    if (r.outcome != Outcome::ok) {
      kill();
      throw std::runtime_error("REPL header load failed: " + r.error);
    }
    const SyntaxVerdict hv = classify_repl_response(r.body);
    if (hv.status != SyntaxStatus::pass || !r.body.contains("env")) {
      kill();
      std::string why = "REPL header did not elaborate";
      if (!hv.diagnostics.empty()) why += ": " + hv.diagnostics.front().text;
      throw std::runtime_error(why);
    }
    header_env_ = r.body["env"].get<int>();
  }
}

ReplSession::~ReplSession() { kill(); }

void ReplSession::kill() {
  if (pid_ > 0) {
    ::kill(-pid_, SIGKILL);
    ::kill(pid_, SIGKILL);
    int status = 0;
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  buffer_.clear();
}

ReplSession::Reply ReplSession::send(const nlohmann::json& command, Seconds timeout) {
  Reply reply;
  if (!alive()) {
    reply.error = "REPL session is not running";
    return reply;
  }
  // The REPL reads commands separated by blank lines.
  const std::string payload = command.dump() + "\n\n";
  std::size_t written = 0;
  while (written < payload.size()) {
    const ssize_t n = write(to_child_, payload.data() + written, payload.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      reply.error = std::string("write to REPL failed: ") + std::strerror(errno);
      return reply;
    }
    written += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
  std::string accumulated;
  for (;;) {
    // Consume complete lines already buffered. The response is complete as
    // soon as the accumulated text parses, whether the REPL pretty-prints it
    // over several lines or emits a single line.
    std::size_t nl;
    while ((nl = buffer_.find('\n')) != std::string::npos) {
      const std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (accumulated.empty() && line.find_first_not_of(" \t\r") == std::string::npos) {
        continue;
      }
      accumulated += line;
      accumulated += '\n';
      if (nlohmann::json::accept(accumulated)) {
        reply.outcome = Outcome::ok;
        reply.body = nlohmann::json::parse(accumulated);
        return reply;
      }
    }

    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      reply.outcome = Outcome::timeout;
      reply.error = "REPL did not answer within the timeout";
      return reply;
    }
    const auto wait_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    pollfd pfd{from_child_, POLLIN, 0};
    const int pr = poll(&pfd, 1, static_cast<int>(std::min<long long>(wait_ms + 1, 1 << 30)));
    if (pr < 0) {
      if (errno == EINTR) continue;
      reply.error = std::string("poll failed: ") + std::strerror(errno);
      return reply;
    }
    if (pr == 0) continue;
    char chunk[65536];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      reply.error = std::string("read from REPL failed: ") + std::strerror(errno);
      return reply;
    }
    if (n == 0) {
      reply.error = "REPL process exited";
      return reply;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

// ---------------------------------------------------------------------------
// ReplPool

ReplPool::ReplPool(ReplConfig cfg) : cfg_(std::move(cfg)) {
  std::size_t n = cfg_.workers;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  slots_.resize(n);
  busy_.assign(n, false);
}

ReplPool::~ReplPool() = default;

std::string ReplPool::identity() const {
  std::string cmd;
  for (const auto& a : cfg_.command) {
    if (!cmd.empty()) cmd += ' ';
    cmd += a;
  }
  return "lean-repl (" + cmd + " @ " + cfg_.project_dir.string() + ")";
}

std::size_t ReplPool::sessions_started() const {
  std::lock_guard lock(mutex_);
  return started_;
}

std::size_t ReplPool::acquire() {
  std::unique_lock lock(mutex_);
  for (;;) {
    for (std::size_t i = 0; i < busy_.size(); ++i) {
      if (!busy_[i]) {
        busy_[i] = true;
        return i;
      }
    }
    free_.wait(lock);
  }
}

void ReplPool::release(std::size_t slot) {
  {
    std::lock_guard lock(mutex_);
    busy_[slot] = false;
  }
  free_.notify_one();
}

bool ReplPool::ensure_started(std::size_t slot, std::string& error) {
  auto& session = slots_[slot];
  if (session && session->alive()) return true;
  session.reset();
  try {
    session = std::make_unique<ReplSession>(cfg_);
  } catch (const std::exception& e) {
    error = e.what();
    return false;
  }
  std::lock_guard lock(mutex_);
  ++started_;
  return true;
}

SyntaxVerdict ReplPool::check(const CheckRequest& req) {
  if (req.code.empty()) {
    return {SyntaxStatus::fail, {{Severity::error, std::nullopt, "empty code"}}};
  }
  if (!(req.timeout.count() > 0.0)) throw std::invalid_argument("timeout must be > 0");

  const std::size_t slot = acquire();
  struct Guard {
    ReplPool& pool;
    std::size_t slot;
    ~Guard() { pool.release(slot); }
  } guard{*this, slot};

  std::string error;
  if (!ensure_started(slot, error)) {
    return {SyntaxStatus::worker_error, {{Severity::error, std::nullopt, error}}};
  }
  ReplSession& session = *slots_[slot];

  nlohmann::json command;
  int line_offset = 0;
  if (auto env = session.header_env()) {
    command = {{"cmd", req.code}, {"env", *env}};
  } else {
    command = {{"cmd", wrap_with_header(req.code)}};
    line_offset = kHeaderLines;
  }

  const ReplSession::Reply reply = session.send(command, req.timeout);
  switch (reply.outcome) {
    case ReplSession::Outcome::ok: {
      SyntaxVerdict v = classify_repl_response(reply.body, line_offset);
      if (v.status == SyntaxStatus::worker_error) session.kill();
      return v;
    }
    case ReplSession::Outcome::timeout:
      session.kill();
      return {SyntaxStatus::timeout, {{Severity::error, std::nullopt, reply.error}}};
    case ReplSession::Outcome::io_error:
      session.kill();
      return {SyntaxStatus::worker_error, {{Severity::error, std::nullopt, reply.error}}};
  }
  return {SyntaxStatus::worker_error, {}};
}

}  // namespace formaforge
