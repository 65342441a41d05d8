#include "autotune/evaluator.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <numbers>

#include "autotune/space_io.hpp"

namespace autotune {
namespace {

using nlohmann::json;

constexpr std::size_t kExcerptBytes = 4096;

std::optional<double> numeric(const Configuration& config, const std::string& name) {
  auto it = config.find(name);
  if (it == config.end()) return std::nullopt;
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  return std::nullopt;
}

bool has_exactly(const Configuration& config, std::initializer_list<const char*> names) {
  if (config.size() != names.size()) return false;
  for (const char* n : names)
    if (!config.contains(n)) return false;
  return true;
}

std::string excerpt(const std::string& s) {
  return s.size() <= kExcerptBytes ? s : s.substr(0, kExcerptBytes);
}

}  // namespace

std::string EvalResponse::error() const {
  if (ok()) return {};
  if (meta.is_object() && meta.contains("error") && meta["error"].is_string())
    return meta["error"].get<std::string>();
  return "failed";
}

EvalResponse EvalResponse::success(double value, json meta) {
  EvalResponse r;
  r.value = value;
  r.meta = std::move(meta);
  return r;
}

EvalResponse EvalResponse::failure(std::string reason, json meta) {
  EvalResponse r;
  r.status = Status::failed;
  r.value = std::numeric_limits<double>::quiet_NaN();
  if (!meta.is_object()) meta = json::object();
  meta["error"] = std::move(reason);
  r.meta = std::move(meta);
  return r;
}

std::string request_line(const EvalRequest& request) {
  nlohmann::ordered_json j;
  j["run_id"] = request.run_id;
  j["index"] = request.index;
  j["config"] = config_to_json(request.config);
  j["epochs"] = request.epochs;
  if (request.architecture) j["architecture"] = architecture_to_json(*request.architecture);
  return j.dump();
}

EvalResponse parse_response_line(std::string_view line) {
  const json bad{{"bytes", excerpt(std::string(line))}};
  json doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("status") ||
      !doc["status"].is_string())
    return EvalResponse::failure("protocol", bad);
  json meta = doc.value("meta", json::object());
  if (!meta.is_object()) return EvalResponse::failure("protocol", bad);

  const auto status = doc["status"].get<std::string>();
  if (status == "failed") {
    if (!meta.contains("error")) meta["error"] = "child";
    EvalResponse r = EvalResponse::failure(meta["error"].is_string() ? meta["error"].get<std::string>() : "child", meta);
    return r;
  }
  if (status != "ok" || !doc.contains("value") || !doc["value"].is_number())
    return EvalResponse::failure("protocol", bad);
  const double value = doc["value"].get<double>();
  if (!std::isfinite(value)) return EvalResponse::failure("protocol", bad);
  return EvalResponse::success(value, std::move(meta));
}

double branin(double x1, double x2) {
  constexpr double pi = std::numbers::pi;
  const double b = 5.1 / (4.0 * pi * pi);
  const double c = 5.0 / pi;
  const double t = 1.0 / (8.0 * pi);
  const double q = x2 - b * x1 * x1 + c * x1 - 6.0;
  return -(q * q + 10.0 * (1.0 - t) * std::cos(x1) + 10.0);
}

double hartmann3(double x1, double x2, double x3) {
  static constexpr std::array<double, 4> alpha{1.0, 1.2, 3.0, 3.2};
  static constexpr double A[4][3] = {{3.0, 10.0, 30.0}, {0.1, 10.0, 35.0}, {3.0, 10.0, 30.0},
                                     {0.1, 10.0, 35.0}};
  static constexpr double P[4][3] = {{0.3689, 0.1170, 0.2673},
                                     {0.4699, 0.4387, 0.7470},
                                     {0.1091, 0.8732, 0.5547},
                                     {0.0381, 0.5743, 0.8828}};
  const double x[3] = {x1, x2, x3};
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    double e = 0.0;
    for (int j = 0; j < 3; ++j) e += A[i][j] * (x[j] - P[i][j]) * (x[j] - P[i][j]);
    sum += alpha[i] * std::exp(-e);
  }
  return sum;
}

double mixed_quadratic(const std::string& shape, double u, double v, double n) {
  double offset = 0.0;
  if (shape == "a") offset = -0.30;
  else if (shape == "b") offset = -0.15;
  else if (shape == "c") offset = 0.0;
  else if (shape == "d") offset = -0.45;
  else return std::numeric_limits<double>::quiet_NaN();
  const double du = u - 0.75;
  const double dv = (v - 4.0) / 4.0;
  const double dn = (n - 2.0) / 4.0;
  return offset - du * du - dv * dv - dn * dn - 0.5 * du * dn;
}

EvalResponse eval_synthetic(std::string_view name, const Configuration& config) {
  if (name == "branin") {
    if (!has_exactly(config, {"x1", "x2"})) return EvalResponse::failure("dimension");
    const auto x1 = numeric(config, "x1"), x2 = numeric(config, "x2");
    if (!x1 || !x2) return EvalResponse::failure("dimension");
    return EvalResponse::success(branin(*x1, *x2));
  }
  if (name == "hartmann3") {
    if (!has_exactly(config, {"x1", "x2", "x3"})) return EvalResponse::failure("dimension");
    const auto x1 = numeric(config, "x1"), x2 = numeric(config, "x2"), x3 = numeric(config, "x3");
    if (!x1 || !x2 || !x3) return EvalResponse::failure("dimension");
    return EvalResponse::success(hartmann3(*x1, *x2, *x3));
  }
  if (name == "mixed_quadratic") {
    if (!has_exactly(config, {"shape", "u", "v", "n"})) return EvalResponse::failure("dimension");
    const auto* shape = std::get_if<std::string>(&config.at("shape"));
    const auto u = numeric(config, "u"), v = numeric(config, "v"), n = numeric(config, "n");
    if (!shape || !u || !v || !n) return EvalResponse::failure("dimension");
    const double value = mixed_quadratic(*shape, *u, *v, *n);
    if (!std::isfinite(value)) return EvalResponse::failure("dimension");
    return EvalResponse::success(value);
  }
  return EvalResponse::failure("unknown synthetic function '" + std::string(name) + "'");
}

SyntheticEvaluator::SyntheticEvaluator(std::string name) : name_(std::move(name)) {
  bool known = false;
  for (const auto& n : kSyntheticNames) known = known || n == name_;
  if (!known) throw std::invalid_argument("unknown synthetic function '" + name_ + "'");
}

EvalResponse SyntheticEvaluator::evaluate(const EvalRequest& request) {
  return eval_synthetic(name_, request.config);
}

std::vector<std::string> split_command(std::string_view cmd) {
  std::vector<std::string> args;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (std::size_t i = 0; i < cmd.size(); ++i) {
    const char ch = cmd[i];
    if (quote == '\'') {
      if (ch == '\'') quote = 0;
      else cur += ch;
    } else if (ch == '\\' && i + 1 < cmd.size()) {
      cur += cmd[++i];
      in_word = true;
    } else if (quote == '"') {
      if (ch == '"') quote = 0;
      else cur += ch;
    } else if (ch == '\'' || ch == '"') {
      quote = ch;
      in_word = true;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      if (in_word) args.push_back(std::move(cur));
      cur.clear();
      in_word = false;
    } else {
      cur += ch;
      in_word = true;
    }
  }
  if (in_word) args.push_back(std::move(cur));
  return args;
}

namespace {

struct Pipe {
  int fd[2] = {-1, -1};
  ~Pipe() {
    for (int f : fd)
      if (f >= 0) ::close(f);
  }
  bool open() { return ::pipe2(fd, O_CLOEXEC) == 0; }
  void close(int i) {
    if (fd[i] >= 0) ::close(fd[i]);
    fd[i] = -1;
  }
};

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

}  // namespace

EvalResponse eval_external(const std::string& cmd, const EvalRequest& request,
                           std::chrono::duration<double> timeout) {
  const std::vector<std::string> args = split_command(cmd);
  if (args.empty()) return EvalResponse::failure("spawn", {{"detail", "empty command"}});

  ::signal(SIGPIPE, SIG_IGN);
  Pipe in, out, err, status;
  if (!in.open() || !out.open() || !err.open() || !status.open())
    return EvalResponse::failure("spawn", {{"detail", std::strerror(errno)}});

  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) return EvalResponse::failure("spawn", {{"detail", std::strerror(errno)}});
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in.fd[0], STDIN_FILENO);
    ::dup2(out.fd[1], STDOUT_FILENO);
    ::dup2(err.fd[1], STDERR_FILENO);
    ::execvp(argv[0], argv.data());
    const int e = errno;
    [[maybe_unused]] auto n = ::write(status.fd[1], &e, sizeof e);
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  in.close(0);
  out.close(1);
  err.close(1);
  status.close(1);

  int exec_errno = 0;
  if (::read(status.fd[0], &exec_errno, sizeof exec_errno) == sizeof exec_errno) {
    ::waitpid(pid, nullptr, 0);
    return EvalResponse::failure("spawn", {{"detail", std::strerror(exec_errno)}, {"command", cmd}});
  }

  std::string to_child = request_line(request) + "\n";
  std::size_t written = 0;
  std::string from_out, from_err;
  set_nonblocking(in.fd[1]);
  set_nonblocking(out.fd[0]);
  set_nonblocking(err.fd[0]);

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
  bool timed_out = false;
  while (out.fd[0] >= 0 || err.fd[0] >= 0) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    std::array<pollfd, 3> fds{};
    int n = 0;
    int idx_in = -1, idx_out = -1, idx_err = -1;
    if (in.fd[1] >= 0) {
      idx_in = n;
      fds[n++] = {in.fd[1], POLLOUT, 0};
    }
    if (out.fd[0] >= 0) {
      idx_out = n;
      fds[n++] = {out.fd[0], POLLIN, 0};
    }
    if (err.fd[0] >= 0) {
      idx_err = n;
      fds[n++] = {err.fd[0], POLLIN, 0};
    }
    const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1;
    if (::poll(fds.data(), n, static_cast<int>(std::min<long long>(wait, 1000))) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (idx_in >= 0 && fds[idx_in].revents) {
      const ssize_t w = ::write(in.fd[1], to_child.data() + written, to_child.size() - written);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 && errno != EAGAIN) written = to_child.size();
      if (written == to_child.size()) in.close(1);
    }
    auto drain = [](Pipe& p, std::string& sink, short revents) {
      if (!revents) return;
      char buf[4096];
      for (;;) {
        const ssize_t r = ::read(p.fd[0], buf, sizeof buf);
        if (r > 0) {
          sink.append(buf, static_cast<std::size_t>(r));
          continue;
        }
        if (r == 0 || (errno != EAGAIN && errno != EINTR)) p.close(0);
        break;
      }
    };
    if (idx_out >= 0) drain(out, from_out, fds[idx_out].revents);
    if (idx_err >= 0) drain(err, from_err, fds[idx_err].revents);
  }

  int wstatus = 0;
  if (timed_out) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &wstatus, 0);
    return EvalResponse::failure("timeout", {{"stderr", excerpt(from_err)},
                                              {"timeout_seconds", timeout.count()}});
  }
  // Both streams closed; the child may still be exiting.
  for (;;) {
    const pid_t r = ::waitpid(pid, &wstatus, WNOHANG);
    if (r == pid || r < 0) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &wstatus, 0);
      return EvalResponse::failure("timeout", {{"stderr", excerpt(from_err)},
                                                {"timeout_seconds", timeout.count()}});
    }
    ::usleep(1000);
  }

  const bool clean_exit = WIFEXITED(wstatus) && WEXITSTATUS(wstatus) == 0;
  if (!clean_exit) {
    json meta{{"stderr", excerpt(from_err)}};
    if (WIFEXITED(wstatus)) meta["exit_code"] = WEXITSTATUS(wstatus);
    if (WIFSIGNALED(wstatus)) meta["signal"] = WTERMSIG(wstatus);
    return EvalResponse::failure("exit", std::move(meta));
  }

  const auto nl = from_out.find('\n');
  const std::string line = nl == std::string::npos ? from_out : from_out.substr(0, nl);
  const std::string rest = nl == std::string::npos ? std::string{} : from_out.substr(nl + 1);
  EvalResponse r = parse_response_line(line);
  if (r.ok() && rest.find_first_not_of(" \t\r\n") != std::string::npos)
    r = EvalResponse::failure("protocol", {{"bytes", excerpt(from_out)}});
  if (!from_err.empty()) r.meta["stderr"] = excerpt(from_err);
  return r;
}

ExternalEvaluator::ExternalEvaluator(std::string cmd, std::chrono::duration<double> timeout)
    : cmd_(std::move(cmd)), timeout_(timeout) {}

EvalResponse ExternalEvaluator::evaluate(const EvalRequest& request) {
  return eval_external(cmd_, request, timeout_);
}

}  // namespace autotune
