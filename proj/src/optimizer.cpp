#include "autotune/optimizer.hpp"

#include <chrono>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "autotune/errors.hpp"
#include "autotune/gp_surrogate.hpp"
#include "autotune/space_io.hpp"

namespace autotune {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

std::string to_string(Strategy s) {
  return s == Strategy::bayes_opt ? "bayes_opt" : "random_search";
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::seed: return "seed";
    case Phase::bayes: return "bayes";
    case Phase::random: return "random";
  }
  return "?";
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::running: return "running";
    case RunStatus::complete: return "complete";
    case RunStatus::exhausted: return "exhausted";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "bayes_opt") return Strategy::bayes_opt;
  if (s == "random_search") return Strategy::random_search;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

Phase phase_from_string(const std::string& s) {
  if (s == "seed") return Phase::seed;
  if (s == "bayes") return Phase::bayes;
  if (s == "random") return Phase::random;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

std::vector<double> TuningRun::incumbent_trace() const {
  std::vector<double> trace;
  double best = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (i == 0 || observations[i].value > best) best = observations[i].value;
    trace.push_back(best);
  }
  return trace;
}

TuningRun init_run(SearchSpace space, Budget budget, Strategy strategy, std::uint64_t seed,
                   RunSettings settings) {
  if (const auto defects = space.validate(); !defects.empty())
    throw std::invalid_argument("invalid search space: " + defects.front().param + ": " +
                                defects.front().message);
  if (budget.n_total < 1) throw std::invalid_argument("budget: N must be at least 1");
  if (strategy == Strategy::bayes_opt && (budget.m0 < 1 || budget.m0 >= budget.n_total))
    throw std::invalid_argument("budget: need 1 <= m0 < N");
  if (settings.pool_size == 0) throw std::invalid_argument("pool_size must be at least 1");
  if (settings.run_id.empty()) settings.run_id = to_string(strategy) + "-" + std::to_string(seed);

  TuningRun run;
  run.space = std::move(space);
  run.budget = budget;
  if (strategy == Strategy::random_search) run.budget.m0 = 0;
  run.strategy = strategy;
  run.seed = seed;
  run.settings = std::move(settings);
  return run;
}

std::mt19937_64 step_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

std::optional<Configuration> next_configuration(const TuningRun& run) {
  const int index = static_cast<int>(run.observations.size()) + 1;
  std::mt19937_64 rng = step_rng(run.seed, index);
  try {
    if (run.strategy == Strategy::random_search || index <= run.budget.m0)
      return sample_unevaluated(run.space, run.evaluated, rng);

    std::vector<EncodedPoint> x;
    std::vector<double> y;
    for (const auto& o : run.observations) {
      x.push_back(o.encoded);
      y.push_back(o.value);
    }
    const KernelParams kernel = x.size() >= 2 ? optimize_hyperparams(x, y)
                                              : KernelParams::shared(1.0, 1.0, run.space.encoded_dim());
    const double mean = sample_mean(y);
    std::optional<GPModel> model;
    try {
      model = GPModel::fit(std::move(x), std::move(y), mean, kernel);
    } catch (const IllConditionedKernel&) {
      return sample_unevaluated(run.space, run.evaluated, rng);
    }
    return propose_next(*model, run.space, *run.incumbent, run.evaluated, rng,
                        run.settings.pool_size);
  } catch (const SearchSpaceExhausted&) {
    return std::nullopt;
  }
}

void record(TuningRun& run, Observation obs) {
  if (!run.incumbent || obs.value > run.incumbent->value)
    run.incumbent = Incumbent{obs.config, obs.value};
  run.evaluated.insert(obs.config);
  run.observations.push_back(std::move(obs));
  if (static_cast<int>(run.observations.size()) >= run.budget.n_total)
    run.status = RunStatus::complete;
}

std::optional<Observation> step(TuningRun& run, Evaluator& evaluator, const StepHooks& hooks) {
  if (run.status != RunStatus::running) throw std::logic_error("step: run is not running");
  const int index = static_cast<int>(run.observations.size()) + 1;
  std::optional<Configuration> config = next_configuration(run);
  if (!config) {
    run.status = RunStatus::exhausted;
    return std::nullopt;
  }

  EvalRequest request;
  request.run_id = run.settings.run_id;
  request.index = index;
  request.config = *config;
  request.epochs = run.settings.epochs;
  if (run.settings.base_architecture)
    request.architecture = apply_configuration(*run.settings.base_architecture, *config).first;

  const auto clock = hooks.clock ? hooks.clock : steady_seconds;
  const double start = clock();
  EvalResponse response = evaluator.evaluate(request);
  if (!response.ok()) {
    const std::string first = response.error();
    response = evaluator.evaluate(request);
    if (!response.ok())
      throw EvaluatorError("evaluator error at index " + std::to_string(index) + ": " + first +
                           ", retry: " + response.error());
  }
  const double elapsed = clock() - start;

  Observation obs;
  obs.index = index;
  obs.config = std::move(*config);
  obs.encoded = run.space.encode(obs.config);
  obs.value = response.value;
  obs.phase = run.strategy == Strategy::random_search ? Phase::random
              : index <= run.budget.m0                ? Phase::seed
                                                      : Phase::bayes;
  obs.wall_time = elapsed;
  obs.meta = std::move(response.meta);
  record(run, obs);
  if (hooks.on_observation) hooks.on_observation(run, obs);
  return obs;
}

TuningRun& run_to_completion(TuningRun& run, Evaluator& evaluator, const StepHooks& hooks) {
  while (run.status == RunStatus::running) step(run, evaluator, hooks);
  return run;
}

RunHeader header_of(const TuningRun& run) {
  RunHeader h;
  h.space_hash = run.space.hash();
  h.strategy = run.strategy;
  h.seed = run.seed;
  h.m0 = run.budget.m0;
  h.n_total = run.budget.n_total;
  h.pool_size = run.settings.pool_size;
  h.epochs = run.settings.epochs;
  return h;
}

std::string header_line(const RunHeader& h) {
  ordered_json j;
  j["space_hash"] = h.space_hash;
  j["strategy"] = to_string(h.strategy);
  j["seed"] = h.seed;
  j["m0"] = h.m0;
  j["N"] = h.n_total;
  j["version"] = h.version;
  j["pool_size"] = h.pool_size;
  j["epochs"] = h.epochs;
  return j.dump();
}

std::string observation_line(const Observation& obs) {
  ordered_json j;
  j["index"] = obs.index;
  j["phase"] = to_string(obs.phase);
  j["config"] = config_to_json(obs.config);
  j["value"] = obs.value;
  j["wall_time"] = obs.wall_time;
  j["meta"] = obs.meta;
  return j.dump();
}

void persist(const TuningRun& run, std::ostream& sink) {
  sink << header_line(header_of(run)) << '\n';
  for (const auto& o : run.observations) sink << observation_line(o) << '\n';
  sink.flush();
}

namespace {

RunHeader parse_header(const json& j) {
  RunHeader h;
  h.space_hash = j.at("space_hash").get<std::string>();
  h.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  h.seed = j.at("seed").get<std::uint64_t>();
  h.m0 = j.at("m0").get<int>();
  h.n_total = j.at("N").get<int>();
  h.version = j.at("version").get<int>();
  h.pool_size = j.value("pool_size", kDefaultPoolSize);
  h.epochs = j.value("epochs", 50);
  if (h.version != kLogVersion)
    throw std::invalid_argument("unsupported log version " + std::to_string(h.version));
  return h;
}

Observation parse_observation(const json& j) {
  Observation o;
  o.index = j.at("index").get<int>();
  o.phase = phase_from_string(j.at("phase").get<std::string>());
  o.config = config_from_json(j.at("config"));
  const json& v = j.at("value");
  if (!v.is_number()) throw std::invalid_argument("value is not a number");
  o.value = v.get<double>();
  o.wall_time = j.at("wall_time").get<double>();
  o.meta = j.at("meta");
  return o;
}

}  // namespace

ParsedLog parse_log(std::istream& source) {
  std::stringstream buffer;
  buffer << source.rdbuf();
  const std::string text = buffer.str();

  ParsedLog log;
  std::size_t pos = 0;
  int last_valid = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool final_unterminated = nl == std::string::npos;
    const std::string line = text.substr(pos, final_unterminated ? std::string::npos : nl - pos);
    const std::size_t next = final_unterminated ? text.size() : nl + 1;
    try {
      const json j = json::parse(line);
      if (!log.header) {
        log.header = parse_header(j);
      } else {
        Observation o = parse_observation(j);
        if (o.index != last_valid + 1)
          throw std::invalid_argument("expected index " + std::to_string(last_valid + 1) +
                                      ", found " + std::to_string(o.index));
        last_valid = o.index;
        log.observations.push_back(std::move(o));
      }
      log.valid_bytes = next;
    } catch (const std::exception& e) {
      if (final_unterminated && log.header) {
        log.truncated_tail = true;
        break;
      }
      throw ResumeError(log.header ? e.what() : std::string("bad header: ") + e.what(), last_valid);
    }
    pos = next;
  }
  return log;
}

TuningRun resume(std::istream& source, const SearchSpace& space, const TuningRun& fresh) {
  ParsedLog log = parse_log(source);
  if (!log.header) return fresh;
  const RunHeader& h = *log.header;
  if (h.space_hash != space.hash())
    throw ResumeError("log was written for space " + h.space_hash + ", not " + space.hash(), 0);

  RunSettings settings = fresh.settings;
  settings.pool_size = h.pool_size;
  settings.epochs = h.epochs;
  if (settings.run_id.empty() || fresh.seed != h.seed || fresh.strategy != h.strategy)
    settings.run_id = to_string(h.strategy) + "-" + std::to_string(h.seed);
  TuningRun run = init_run(space, Budget{h.m0, h.n_total}, h.strategy, h.seed, settings);

  int last_valid = 0;
  for (auto& o : log.observations) {
    try {
      o.config = config_from_json(config_to_json(o.config), space);
      if (!space.contains(o.config)) throw std::invalid_argument("configuration outside the space");
      if (run.evaluated.contains(o.config)) throw std::invalid_argument("duplicate configuration");
      if (static_cast<int>(run.observations.size()) >= h.n_total)
        throw std::invalid_argument("more observations than the budget");
      const Phase expected = h.strategy == Strategy::random_search ? Phase::random
                             : o.index <= h.m0                     ? Phase::seed
                                                                   : Phase::bayes;
      if (o.phase != expected) throw std::invalid_argument("phase does not match index");
      o.encoded = space.encode(o.config);
    } catch (const std::exception& e) {
      throw ResumeError("observation " + std::to_string(o.index) + ": " + e.what(), last_valid);
    }
    last_valid = o.index;
    record(run, std::move(o));
  }
  return run;
}

}  // namespace autotune
