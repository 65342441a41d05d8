#include "autotune/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>

#include "autotune/architecture.hpp"
#include "autotune/errors.hpp"
#include "autotune/evaluator.hpp"
#include "autotune/optimizer.hpp"
#include "autotune/space_io.hpp"
#include "autotune/toy_trainer.hpp"

#ifndef AUTOTUNE_DATA_DIR
#define AUTOTUNE_DATA_DIR "data"
#endif

namespace autotune::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

struct Options {
  std::string space;
  std::string arch;
  int k_max = 1;
  std::string evaluator;
  std::string cmd;
  std::uint64_t seed = 0;
  int m0 = 20;
  int n_total = 0;
  int rs_n = 100;
  std::size_t pool_size = kDefaultPoolSize;
  std::string log;
  std::string log_dir;
  double timeout = 600.0;
  std::string resume;
  std::string format = "text";
  int repeats = 10;
  int epochs = 50;
  std::string config;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

SearchSpace load_run_space(const Options& o, std::optional<ArchitectureSpec>& arch) {
  if (!o.arch.empty()) arch = load_architecture(resolve_data_file(o.arch, "archs"));
  if (!o.space.empty()) return load_space(resolve_data_file(o.space, "spaces"));
  if (arch) return build_space_for_tail(*arch, o.k_max);
  throw UsageError("--space is required");
}

std::unique_ptr<Evaluator> make_evaluator(const Options& o, std::uint64_t seed) {
  std::string name = o.evaluator;
  if (name.empty() && !o.cmd.empty()) name = "external";
  if (name.empty()) throw UsageError("--evaluator is required");
  if (name == "external") {
    if (o.cmd.empty()) throw UsageError("--evaluator external needs --cmd");
    return std::make_unique<ExternalEvaluator>(o.cmd, std::chrono::duration<double>(o.timeout));
  }
  if (name == "toy") return std::make_unique<ToyTrainerEvaluator>(seed);
  for (const auto& n : kSyntheticNames)
    if (n == name) return std::make_unique<SyntheticEvaluator>(name);
  throw UsageError("unknown evaluator '" + name + "'");
}

fs::path log_dir_of(const Options& o) {
  return o.log_dir.empty() ? default_log_dir() : fs::path(o.log_dir);
}

json config_json(const Configuration& c) { return config_to_json(c); }

// Appends observation lines to the log as they arrive.
class LogSink {
 public:
  LogSink(const fs::path& path, bool append) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open log " + path.string());
  }
  void line(const std::string& s) {
    out_ << s << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

int run_search(const Options& o, Strategy strategy, std::ostream& out, std::ostream& err) {
  std::optional<ArchitectureSpec> arch;
  const SearchSpace space = load_run_space(o, arch);

  RunSettings settings;
  settings.pool_size = o.pool_size;
  settings.epochs = o.epochs;
  settings.base_architecture = arch;
  Budget budget = strategy == Strategy::bayes_opt ? Budget::bayes_default() : Budget::random_default();
  budget.m0 = strategy == Strategy::bayes_opt ? o.m0 : 0;
  if (o.n_total > 0) budget.n_total = o.n_total;

  TuningRun run;
  fs::path log_path;
  bool append = false;
  try {
    run = init_run(space, budget, strategy, o.seed, settings);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!o.resume.empty()) {
    log_path = o.resume;
    std::ifstream in(log_path);
    if (in) {
      ParsedLog parsed = parse_log(in);
      in.clear();
      in.seekg(0);
      run = resume(in, space, run);
      if (parsed.header) {
        append = true;
        if (parsed.truncated_tail) fs::resize_file(log_path, parsed.valid_bytes);
      }
    }
  } else {
    log_path = o.log.empty() ? log_dir_of(o) / (to_string(strategy) + "-seed" +
                                                 std::to_string(o.seed) + ".jsonl")
                             : fs::path(o.log);
  }

  auto evaluator = make_evaluator(o, run.seed);
  LogSink sink(log_path, append);
  if (!append) sink.line(header_line(header_of(run)));
  StepHooks hooks;
  hooks.on_observation = [&](const TuningRun&, const Observation& obs) {
    sink.line(observation_line(obs));
  };

  int code = kOk;
  std::string failure;
  try {
    run_to_completion(run, *evaluator, hooks);
  } catch (const EvaluatorError& e) {
    failure = e.what();
    code = kEvaluatorAbort;
  }

  if (o.format == "jsonl") {
    ordered_json j;
    j["status"] = code == kOk ? to_string(run.status) : "aborted";
    j["observations"] = run.observations.size();
    j["value"] = run.incumbent ? json(run.incumbent->value) : json(nullptr);
    j["config"] = run.incumbent ? config_json(run.incumbent->config) : json(nullptr);
    j["log"] = log_path.string();
    if (!failure.empty()) j["error"] = failure;
    out << j.dump() << '\n';
  } else {
    out << "status: " << (code == kOk ? to_string(run.status) : "aborted") << '\n';
    out << "observations: " << run.observations.size() << '\n';
    if (run.incumbent) {
      out << "incumbent value: " << fmt(run.incumbent->value) << '\n';
      out << "incumbent config: " << config_json(run.incumbent->config).dump() << '\n';
    }
    out << "log: " << log_path.string() << '\n';
  }
  if (!failure.empty()) err << failure << '\n';
  return code;
}

int run_bench(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.repeats < 1) throw UsageError("--repeats must be at least 1");
  std::optional<ArchitectureSpec> arch;
  const SearchSpace space = load_run_space(o, arch);
  const int n_bo = o.n_total > 0 ? o.n_total : 50;
  const fs::path dir = log_dir_of(o);
  fs::create_directories(dir);

  struct Series {
    Strategy strategy;
    int n;
    std::vector<double> finals;
  };
  std::vector<Series> series{{Strategy::bayes_opt, n_bo, {}},
                             {Strategy::random_search, n_bo, {}}};
  if (o.rs_n != n_bo) series.push_back({Strategy::random_search, o.rs_n, {}});

  for (int r = 0; r < o.repeats; ++r) {
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(r);
    for (auto& s : series) {
      RunSettings settings;
      settings.pool_size = o.pool_size;
      settings.epochs = o.epochs;
      settings.base_architecture = arch;
      TuningRun run;
      try {
        run = init_run(space, {s.strategy == Strategy::bayes_opt ? o.m0 : 0, s.n}, s.strategy,
                       seed, settings);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const fs::path path = dir / (to_string(s.strategy) + "-n" + std::to_string(s.n) + "-seed" +
                                   std::to_string(seed) + ".jsonl");
      LogSink sink(path, false);
      sink.line(header_line(header_of(run)));
      StepHooks hooks;
      hooks.on_observation = [&](const TuningRun&, const Observation& obs) {
        sink.line(observation_line(obs));
      };
      auto evaluator = make_evaluator(o, seed);
      try {
        run_to_completion(run, *evaluator, hooks);
      } catch (const EvaluatorError& e) {
        err << e.what() << '\n';
        return kEvaluatorAbort;
      }
      s.finals.push_back(run.incumbent ? run.incumbent->value : 0.0);
    }
  }

  struct Row {
    std::string variant;
    const Series* s;
  };
  const std::vector<Row> rows{{"asymmetric", &series[0]},
                              {"asymmetric", &series.back()},
                              {"budget_matched", &series[0]},
                              {"budget_matched", &series[1]}};
  std::vector<std::string> lines;
  for (const auto& row : rows) {
    const Quartiles q = quartiles(row.s->finals);
    ordered_json j;
    j["variant"] = row.variant;
    j["strategy"] = to_string(row.s->strategy);
    j["n"] = row.s->n;
    j["runs"] = row.s->finals.size();
    j["seed_start"] = o.seed;
    j["median"] = q.median;
    j["best"] = q.best;
    j["q1"] = q.q1;
    j["q3"] = q.q3;
    lines.push_back(j.dump());
  }
  {
    std::ofstream summary(dir / "summary.jsonl", std::ios::trunc);
    for (const auto& l : lines) summary << l << '\n';
  }

  if (o.format == "jsonl") {
    for (const auto& l : lines) out << l << '\n';
    return kOk;
  }
  out << "bench: " << o.repeats << " seeds from " << o.seed << ", logs in " << dir.string() << '\n';
  out << std::left << std::setw(16) << "variant" << std::setw(15) << "strategy" << std::setw(6)
      << "N" << std::right << std::setw(12) << "median" << std::setw(12) << "best"
      << std::setw(12) << "q1" << std::setw(12) << "q3" << '\n';
  for (const auto& row : rows) {
    const Quartiles q = quartiles(row.s->finals);
    out << std::left << std::setw(16) << row.variant << std::setw(15)
        << to_string(row.s->strategy) << std::setw(6) << row.s->n << std::right
        << std::setw(12) << fmt(q.median) << std::setw(12) << fmt(q.best) << std::setw(12)
        << fmt(q.q1) << std::setw(12) << fmt(q.q3) << '\n';
  }
  return kOk;
}

std::string layer_group(const std::string& name) {
  static const std::regex fc_param(R"((neurons|dropout)_(\d+))");
  static const std::regex tail_param(R"(tail(\d+)_\w+)");
  std::smatch m;
  if (name == "fc_layers") return "FC stack";
  if (name == "depth") return "tuned depth";
  if (std::regex_match(name, m, fc_param)) return "FC layer " + m[2].str();
  if (std::regex_match(name, m, tail_param)) return "tail layer " + m[1].str();
  if (name.rfind("conv_", 0) == 0) return "conv";
  if (name.rfind("pool_", 0) == 0) return "pool";
  return "-";
}

int run_report(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.log.empty()) throw UsageError("--log is required");
  std::ifstream in(o.log);
  if (!in) throw std::runtime_error("cannot open log " + o.log);
  ParsedLog log;
  try {
    log = parse_log(in);
  } catch (const ResumeError& e) {
    err << "corrupt log: " << e.what() << '\n';
    return kCorruptLog;
  }
  if (log.truncated_tail) {
    err << "corrupt log: truncated final record (last valid index " << log.observations.size()
        << ")\n";
    return kCorruptLog;
  }
  if (!log.header) {
    err << "corrupt log: empty (last valid index 0)\n";
    return kCorruptLog;
  }

  std::map<std::string, int> phases;
  std::vector<double> trace;
  std::size_t best = 0;
  for (std::size_t i = 0; i < log.observations.size(); ++i) {
    const auto& obs = log.observations[i];
    ++phases[to_string(obs.phase)];
    if (i == 0 || obs.value > log.observations[best].value) best = i;
    trace.push_back(log.observations[best].value);
  }
  const RunHeader& h = *log.header;

  if (o.format == "jsonl") {
    ordered_json head;
    head["strategy"] = to_string(h.strategy);
    head["seed"] = h.seed;
    head["m0"] = h.m0;
    head["N"] = h.n_total;
    head["observations"] = log.observations.size();
    head["phase_counts"] = phases;
    out << head.dump() << '\n';
    for (std::size_t i = 0; i < log.observations.size(); ++i) {
      ordered_json j;
      j["index"] = log.observations[i].index;
      j["phase"] = to_string(log.observations[i].phase);
      j["value"] = log.observations[i].value;
      j["incumbent"] = trace[i];
      out << j.dump() << '\n';
    }
    if (!log.observations.empty()) {
      ordered_json j;
      j["best_index"] = log.observations[best].index;
      j["best_value"] = log.observations[best].value;
      j["best_config"] = config_json(log.observations[best].config);
      out << j.dump() << '\n';
    }
    return kOk;
  }

  out << "strategy " << to_string(h.strategy) << ", seed " << h.seed << ", m0 " << h.m0 << ", N "
      << h.n_total << ", space " << h.space_hash << '\n';
  out << "observations: " << log.observations.size();
  for (const auto& [phase, count] : phases) out << ", " << phase << " " << count;
  out << "\n\n";
  out << std::setw(6) << "index" << "  " << std::left << std::setw(8) << "phase" << std::right
      << std::setw(12) << "value" << std::setw(12) << "incumbent" << '\n';
  for (std::size_t i = 0; i < log.observations.size(); ++i) {
    const auto& obs = log.observations[i];
    out << std::setw(6) << obs.index << "  " << std::left << std::setw(8) << to_string(obs.phase)
        << std::right << std::setw(12) << fmt(obs.value) << std::setw(12) << fmt(trace[i]) << '\n';
  }
  if (log.observations.empty()) return kOk;

  const auto& b = log.observations[best];
  out << "\nbest configuration (index " << b.index << ", value " << fmt(b.value) << ")\n";
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [name, value] : b.config) rows.emplace_back(layer_group(name), name);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& c) { return a.first < c.first; });
  out << std::left << std::setw(14) << "layer" << std::setw(20) << "parameter" << "value\n";
  for (const auto& [group, name] : rows)
    out << std::left << std::setw(14) << group << std::setw(20) << name
        << to_string(b.config.at(name)) << '\n';
  out << std::right;
  return kOk;
}

Configuration read_config_arg(const std::string& arg) {
  json doc;
  if (fs::exists(arg)) {
    std::ifstream in(arg);
    doc = json::parse(in);
  } else {
    doc = json::parse(arg);
  }
  return config_from_json(doc);
}

void print_trace(const ArchitectureSpec& arch, const ShapeTrace& trace, std::ostream& out) {
  std::optional<ParamCounts> params;
  std::optional<FlopCounts> flops;
  if (trace.ok()) {
    params = count_params(arch);
    flops = count_flops(arch);
  }
  out << arch.name << ": input " << to_string(arch.input_shape) << ", " << arch.class_count
      << " classes\n";
  out << std::setw(4) << "#" << "  " << std::left << std::setw(22) << "layer" << std::setw(10)
      << "kind" << std::setw(18) << "output" << std::right << std::setw(14) << "params"
      << std::setw(16) << "flops" << "  trainable\n";
  for (std::size_t i = 0; i < trace.outputs.size(); ++i) {
    const auto& l = arch.layers[i];
    out << std::setw(4) << i << "  " << std::left << std::setw(22)
        << (l.name.empty() ? "-" : l.name) << std::setw(10) << to_string(l.kind) << std::setw(18)
        << to_string(trace.outputs[i]) << std::right << std::setw(14)
        << (params ? std::to_string(params->per_layer[i]) : "-") << std::setw(16)
        << (flops ? std::to_string(flops->per_layer[i]) : "-") << "  "
        << (l.frozen ? "no" : "yes") << '\n';
  }
  if (params && flops) {
    out << "params: total " << params->total << ", trainable " << params->trainable
        << ", frozen " << params->frozen << '\n';
    out << "flops: total " << flops->total << ", learned layers " << flops->learned << '\n';
  }
}

int run_shapes(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.arch.empty()) throw UsageError("--arch is required");
  ArchitectureSpec arch = load_architecture(resolve_data_file(o.arch, "archs"));
  std::optional<TuningPlan> plan;
  if (!o.config.empty()) {
    try {
      auto [tuned, p] = apply_configuration(arch, read_config_arg(o.config));
      arch = std::move(tuned);
      plan = std::move(p);
    } catch (const IrreparableMismatch& e) {
      err << e.what() << '\n';
      return kShapeMismatch;
    }
  }
  const ShapeTrace trace = check_shapes(arch);

  if (o.format == "jsonl") {
    for (std::size_t i = 0; i < trace.outputs.size(); ++i) {
      ordered_json j;
      j["index"] = i;
      j["kind"] = to_string(arch.layers[i].kind);
      j["output"] = {trace.outputs[i].h, trace.outputs[i].w, trace.outputs[i].c};
      out << j.dump() << '\n';
    }
    if (trace.ok()) {
      const ParamCounts p = count_params(arch);
      const FlopCounts f = count_flops(arch);
      ordered_json j;
      j["params_total"] = p.total;
      j["params_trainable"] = p.trainable;
      j["params_frozen"] = p.frozen;
      j["flops_total"] = f.total;
      j["flops_learned"] = f.learned;
      out << j.dump() << '\n';
    }
  } else {
    print_trace(arch, trace, out);
    if (plan) {
      out << "surgery: depth " << plan->k << ", " << plan->generated_layers.size()
          << " generated layers, " << plan->adapters.size() << " adapters\n";
      for (const auto& a : plan->adapters)
        out << "  adapter at " << a.position << ": "
            << (a.kind == Adapter::Kind::conv1x1 ? "conv1x1 " + std::to_string(a.channels)
                                                 : "upsample x" + std::to_string(a.factor))
            << '\n';
    }
  }
  if (!trace.ok()) {
    err << "shape mismatch: " << trace.mismatch->message << '\n';
    return kShapeMismatch;
  }
  return kOk;
}

}  // namespace

fs::path data_dir() {
  if (const char* env = std::getenv("AUTOTUNE_DATA_DIR"); env && *env) return env;
  return AUTOTUNE_DATA_DIR;
}

fs::path default_log_dir() {
  if (const char* env = std::getenv("AUTOTUNE_LOG_DIR"); env && *env) return env;
  return "autotune_logs";
}

fs::path resolve_data_file(const std::string& name, const std::string& subdir) {
  if (fs::exists(name)) return name;
  const fs::path base = data_dir() / subdir;
  for (const fs::path& candidate : {base / name, base / (name + ".json")})
    if (fs::exists(candidate)) return candidate;
  throw std::runtime_error("no such file: " + name);
}

Quartiles quartiles(std::vector<double> values) {
  Quartiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const double h = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  q.median = at(0.5);
  q.q1 = at(0.25);
  q.q3 = at(0.75);
  q.best = values.back();
  return q;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian optimization of network tail hyperparameters", "autotune"};
  app.require_subcommand(1);
  Options o;

  auto add_search = [&](CLI::App* sub) {
    sub->add_option("--space", o.space, "search space file or bundled name");
    sub->add_option("--arch", o.arch, "base architecture for tail surgery");
    sub->add_option("--k-max", o.k_max, "largest tail depth when the space comes from --arch");
    sub->add_option("--evaluator", o.evaluator,
                    "branin | hartmann3 | mixed_quadratic | toy | external");
    sub->add_option("--cmd", o.cmd, "command line of the external evaluator");
    sub->add_option("--timeout", o.timeout, "seconds per external evaluation");
    sub->add_option("--seed", o.seed);
    sub->add_option("--m0", o.m0, "uniform seed evaluations");
    sub->add_option("--n-total", o.n_total, "total evaluations");
    sub->add_option("--pool-size", o.pool_size, "EI candidate pool size");
    sub->add_option("--epochs", o.epochs, "epochs passed to the evaluator");
    sub->add_option("--format", o.format)->check(CLI::IsMember({"text", "jsonl"}));
  };

  CLI::App* tune = app.add_subcommand("tune", "Bayesian optimization run");
  add_search(tune);
  tune->add_option("--log", o.log, "run log path");
  tune->add_option("--log-dir", o.log_dir);
  tune->add_option("--resume", o.resume, "continue the run stored in this log");

  CLI::App* random = app.add_subcommand("random-search", "random search baseline");
  add_search(random);
  random->add_option("--log", o.log, "run log path");
  random->add_option("--log-dir", o.log_dir);
  random->add_option("--resume", o.resume, "continue the run stored in this log");

  CLI::App* bench = app.add_subcommand("bench", "BO against random search over seeds");
  add_search(bench);
  bench->add_option("--repeats", o.repeats, "number of seeds");
  bench->add_option("--rs-n", o.rs_n, "random search budget of the asymmetric variant");
  bench->add_option("--log-dir", o.log_dir);

  CLI::App* report = app.add_subcommand("report", "summarize a run log");
  report->add_option("--log", o.log)->required();
  report->add_option("--format", o.format)->check(CLI::IsMember({"text", "jsonl"}));

  CLI::App* shapes = app.add_subcommand("shapes", "shape trace and cost accounting");
  shapes->add_option("--arch", o.arch)->required();
  shapes->add_option("--config", o.config, "configuration (JSON text or file) to apply first");
  shapes->add_option("--format", o.format)->check(CLI::IsMember({"text", "jsonl"}));

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    if (tune->parsed()) return run_search(o, Strategy::bayes_opt, out, err);
    if (random->parsed()) return run_search(o, Strategy::random_search, out, err);
    if (bench->parsed()) return run_bench(o, out, err);
    if (report->parsed()) return run_report(o, out, err);
    if (shapes->parsed()) return run_shapes(o, out, err);
  } catch (const UsageError& e) {
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << e.what() << '\n' << sub->help();
    return kUsage;
  } catch (const ResumeError& e) {
    err << e.what() << '\n';
    return kCorruptLog;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace autotune::cli
