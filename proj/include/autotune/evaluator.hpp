#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "autotune/architecture.hpp"
#include "autotune/search_space.hpp"

namespace autotune {

struct EvalRequest {
  std::string run_id;
  int index = 0;
  Configuration config;
  std::optional<ArchitectureSpec> architecture;
  int epochs = 50;
};

/// `meta["error"]` holds the failure reason of a failed response.
struct EvalResponse {
  enum class Status { ok, failed };

  double value = 0.0;
  Status status = Status::ok;
  nlohmann::json meta = nlohmann::json::object();

  bool ok() const noexcept { return status == Status::ok; }
  std::string error() const;

  static EvalResponse success(double value, nlohmann::json meta = nlohmann::json::object());
  static EvalResponse failure(std::string reason, nlohmann::json meta = nlohmann::json::object());
};

/// One request line, keys in wire order, no trailing newline.
std::string request_line(const EvalRequest& request);

/// Parses one response line. Anything that is not an object with a finite
/// numeric "value" (when ok) and a "status" of "ok" or "failed" becomes a
/// failed("protocol") response carrying the offending bytes.
EvalResponse parse_response_line(std::string_view line);

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalResponse evaluate(const EvalRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Synthetic landscapes, all in maximization form.

/// -branin(x1, x2); x1 in [-5, 10], x2 in [0, 15]. Maximum -0.397887.
double branin(double x1, double x2);

/// +hartmann3(x); x in [0, 1]^3. Maximum 3.86278 near
/// (0.114614, 0.555649, 0.852547).
double hartmann3(double x1, double x2, double x3);

/// Separable quadratic over shape in {a,b,c,d}, u in {0,.25,.5,.75,1},
/// v in {1..5}, n in {1..5}. Unique maximum 0 at (c, 0.75, 4, 2).
double mixed_quadratic(const std::string& shape, double u, double v, double n);

inline const std::vector<std::string> kSyntheticNames{"branin", "hartmann3", "mixed_quadratic"};

/// Evaluates the named landscape on the parameters it expects (x1, x2, x3
/// or shape, u, v, n). Missing or extra parameters give failed("dimension").
EvalResponse eval_synthetic(std::string_view name, const Configuration& config);

class SyntheticEvaluator : public Evaluator {
 public:
  explicit SyntheticEvaluator(std::string name);
  EvalResponse evaluate(const EvalRequest& request) override;
  std::string name() const override { return name_; }

 private:
  std::string name_;
};

/// Splits a command line into argv: whitespace separated, single and double
/// quotes group, backslash escapes the next character outside single quotes.
std::vector<std::string> split_command(std::string_view cmd);

/// Spawns `cmd` once per request, writes the request line to its stdin and
/// reads one response line from its stdout. Failure reasons: "timeout",
/// "spawn", "protocol", "exit". Stderr is captured into meta["stderr"].
EvalResponse eval_external(const std::string& cmd, const EvalRequest& request,
                           std::chrono::duration<double> timeout);

class ExternalEvaluator : public Evaluator {
 public:
  ExternalEvaluator(std::string cmd, std::chrono::duration<double> timeout);
  EvalResponse evaluate(const EvalRequest& request) override;
  std::string name() const override { return "external"; }

 private:
  std::string cmd_;
  std::chrono::duration<double> timeout_;
};

}  // namespace autotune
