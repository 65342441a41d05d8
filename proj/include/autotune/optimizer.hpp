#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autotune/acquisition.hpp"
#include "autotune/architecture.hpp"
#include "autotune/evaluator.hpp"
#include "autotune/search_space.hpp"

namespace autotune {

enum class Strategy { bayes_opt, random_search };
enum class Phase { seed, bayes, random };
enum class RunStatus { running, complete, exhausted };

std::string to_string(Strategy s);
std::string to_string(Phase p);
std::string to_string(RunStatus s);
Strategy strategy_from_string(const std::string& s);
Phase phase_from_string(const std::string& s);

/// m0 uniform seed evaluations out of n_total. Random search ignores m0.
struct Budget {
  int m0 = 20;
  int n_total = 50;

  static Budget bayes_default() { return {20, 50}; }
  static Budget random_default() { return {0, 100}; }
};

struct Observation {
  int index = 0;  // 1-based
  Configuration config;
  EncodedPoint encoded;
  double value = 0.0;
  Phase phase = Phase::seed;
  double wall_time = 0.0;
  nlohmann::json meta = nlohmann::json::object();
};

struct RunSettings {
  std::size_t pool_size = kDefaultPoolSize;
  int epochs = 50;
  std::string run_id;  // defaults to "<strategy>-<seed>"
  /// When set, each request carries the tail-surgery result for its config.
  std::optional<ArchitectureSpec> base_architecture;
};

struct TuningRun {
  SearchSpace space;
  Budget budget;
  Strategy strategy = Strategy::bayes_opt;
  std::uint64_t seed = 0;
  RunSettings settings;
  std::vector<Observation> observations;
  std::optional<Incumbent> incumbent;
  RunStatus status = RunStatus::running;
  std::set<Configuration> evaluated;

  /// Incumbent value after each observation.
  std::vector<double> incumbent_trace() const;
};

struct StepHooks {
  /// Seconds on any monotone scale; used for wall_time.
  std::function<double()> clock;
  std::function<void(const TuningRun&, const Observation&)> on_observation;
};

/// Throws std::invalid_argument on an invalid space or budget.
TuningRun init_run(SearchSpace space, Budget budget, Strategy strategy, std::uint64_t seed,
                   RunSettings settings = {});

/// Generator for the draws of observation `index`; a run never carries
/// generator state between steps, so resuming needs only the index.
std::mt19937_64 step_rng(std::uint64_t seed, int index);

/// Chooses the configuration for the next index without evaluating it.
/// Returns nullopt when the space is exhausted.
std::optional<Configuration> next_configuration(const TuningRun& run);

/// One iteration of the loop. Retries a failed evaluation once, then throws
/// EvaluatorError without recording anything. Returns nullopt (and sets
/// status exhausted) when no unevaluated configuration remains.
std::optional<Observation> step(TuningRun& run, Evaluator& evaluator, const StepHooks& hooks = {});

TuningRun& run_to_completion(TuningRun& run, Evaluator& evaluator, const StepHooks& hooks = {});

/// Appends an already evaluated observation, maintaining the incumbent
/// (ties keep the earliest) and status.
void record(TuningRun& run, Observation obs);

// Run log: one JSON header line, then one line per observation.

inline constexpr int kLogVersion = 1;

struct RunHeader {
  std::string space_hash;
  Strategy strategy = Strategy::bayes_opt;
  std::uint64_t seed = 0;
  int m0 = 0;
  int n_total = 0;
  int version = kLogVersion;
  std::size_t pool_size = kDefaultPoolSize;
  int epochs = 50;
};

RunHeader header_of(const TuningRun& run);
std::string header_line(const RunHeader& header);
std::string observation_line(const Observation& obs);

/// Header plus every observation.
void persist(const TuningRun& run, std::ostream& sink);

struct ParsedLog {
  std::optional<RunHeader> header;  // nullopt for an empty log
  std::vector<Observation> observations;  // config untyped, encoded empty
  std::size_t valid_bytes = 0;  // length of the well-formed prefix
  bool truncated_tail = false;
};

/// Reads a log. A malformed final line without a trailing newline counts as
/// a truncated tail and is dropped; any other defect throws ResumeError.
ParsedLog parse_log(std::istream& source);

/// Rebuilds the run from a log. An empty log gives a fresh run from
/// `fresh`. Throws ResumeError when the log does not belong to `space` or
/// is corrupt.
TuningRun resume(std::istream& source, const SearchSpace& space, const TuningRun& fresh);

}  // namespace autotune
