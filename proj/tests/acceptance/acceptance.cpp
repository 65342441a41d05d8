// Acceptance checks: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "../arch_oracle.hpp"
#include "../oracles.hpp"
#include "autotune/acquisition.hpp"
#include "autotune/architecture.hpp"
#include "autotune/cli.hpp"
#include "autotune/evaluator.hpp"
#include "autotune/gp_surrogate.hpp"
#include "autotune/optimizer.hpp"
#include "autotune/space_io.hpp"
#include "autotune/toy_trainer.hpp"

using namespace autotune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const std::string kData = AUTOTUNE_TEST_DATA_DIR;
const StepHooks kFixedClock{[] { return 0.0; }, {}};

std::string num(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double final_incumbent(SearchSpace space, Budget budget, Strategy strategy, std::uint64_t seed,
                       Evaluator& ev, TuningRun* keep = nullptr) {
  TuningRun run = init_run(std::move(space), budget, strategy, seed);
  run_to_completion(run, ev, kFixedClock);
  const double v = run.incumbent->value;
  if (keep) *keep = std::move(run);
  return v;
}

Outcome gp_correctness() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  for (int problem = 0; problem < 25; ++problem) {
    const std::size_t n = 1 + rng() % 20, d = 1 + rng() % 10;
    std::vector<EncodedPoint> x;
    std::vector<double> y;
    KernelParams k;
    double mean = 0.0;
    do {
      x.clear();
      y.clear();
      for (std::size_t i = 0; i < n; ++i) {
        EncodedPoint p(d);
        for (auto& v : p) v = u(rng);
        x.push_back(p);
        y.push_back(std::cos(4 * p[0]) + u(rng));
      }
      k = KernelParams{};
      k.signal_variance = 0.2 + 3 * u(rng);
      for (std::size_t j = 0; j < d; ++j) k.length_scales.push_back(0.1 + 0.4 * u(rng));
      mean = sample_mean(y);
    } while (oracle::condition({x, y, mean, k.signal_variance, k.length_scales, k.noise_jitter}) > 1e8);
    const GPModel m = GPModel::fit(x, y, mean, k);
    oracle::GpProblem o{x, y, mean, k.signal_variance, k.length_scales, m.kernel().noise_jitter};
    for (int q = 0; q < 20; ++q) {
      std::vector<double> p(d);
      for (auto& v : p) v = u(rng);
      if (q < static_cast<int>(n)) p = x[static_cast<std::size_t>(q)];
      const auto [om, ov] = oracle::posterior(o, p);
      const Posterior post = m.posterior(p);
      worst = std::max({worst, std::abs(post.mean - om), std::abs(post.variance - std::max(0.0, ov))});
    }
  }
  return {worst <= 1e-8, "max abs error " + num(worst, 3) + " over 25 problems with cond <= 1e8"};
}

Outcome ei_correctness() {
  std::mt19937_64 rng(2002);
  std::uniform_real_distribution<double> u(-2, 2), s(0.05, 2);
  int ok = 0;
  double worst_z = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double mu = u(rng), f = u(rng);
    const double sigma = t < 4 ? 0.0 : s(rng);
    const double closed = expected_improvement({mu, sigma * sigma}, f);
    if (sigma == 0.0) {
      ok += closed == std::max(mu - f, 0.0);
      continue;
    }
    std::normal_distribution<double> z(0, 1);
    double sum = 0, sum2 = 0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) {
      const double g = std::max(mu + sigma * z(rng) - f, 0.0);
      sum += g;
      sum2 += g * g;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / (n - 1));
    const double zscore = std::abs(closed - mean) / se;
    worst_z = std::max(worst_z, zscore);
    ok += zscore <= 3.0;
  }
  return {ok == 20, std::to_string(ok) + "/20 triples, worst |z| " + num(worst_z, 3)};
}

SearchSpace random_discrete_space(std::mt19937_64& rng) {
  for (;;) {
    std::vector<ParamSpec> params;
    const int count = 2 + static_cast<int>(rng() % 3);
    for (int i = 0; i < count; ++i) {
      const std::string name = "p" + std::to_string(i);
      switch (rng() % 3) {
        case 0: {
          Categorical c;
          for (std::uint64_t j = 0, m = 2 + rng() % 4; j < m; ++j) c.values.push_back("c" + std::to_string(j));
          params.push_back({name, c, {}});
          break;
        }
        case 1: {
          OrdinalGrid g;
          double v = 0;
          for (std::uint64_t j = 0, m = 2 + rng() % 6; j < m; ++j) g.values.push_back(v += 1 + rng() % 3);
          params.push_back({name, g, {}});
          break;
        }
        default:
          params.push_back({name, IntegerRange{0, static_cast<std::int64_t>(1 + rng() % 7)}, {}});
      }
    }
    SearchSpace s(std::move(params));
    if (*s.cardinality() <= 500 && *s.cardinality() >= 20) return s;
  }
}

Outcome proposal_exactness() {
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> u(-1, 1);
  int same = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const SearchSpace space = random_discrete_space(rng);
    const auto all = space.enumerate(500);
    std::set<Configuration> evaluated;
    std::vector<EncodedPoint> x;
    std::vector<double> y;
    const std::size_t target = 3 + rng() % 10;
    while (evaluated.size() < target) {
      const Configuration& c = all[rng() % all.size()];
      if (!evaluated.insert(c).second) continue;
      x.push_back(space.encode(c));
      y.push_back(u(rng));
    }
    const KernelParams k = optimize_hyperparams(x, y);
    const double mean = sample_mean(y);
    const GPModel model = GPModel::fit(x, y, mean, k);
    const Incumbent inc{{}, *std::max_element(y.begin(), y.end())};
    std::mt19937_64 prng(static_cast<std::uint64_t>(trial));
    const Configuration proposed = propose_next(model, space, inc, evaluated, prng);

    oracle::GpProblem o{x, y, mean, k.signal_variance, k.length_scales, model.kernel().noise_jitter};
    double best = -1;
    Configuration scan;
    for (const auto& c : all) {
      if (evaluated.contains(c)) continue;
      const auto [pm, pv] = oracle::posterior(o, space.encode(c));
      const double ei = oracle::ei_closed(pm, pv, inc.value);
      if (ei > best) {
        best = ei;
        scan = c;
      }
    }
    same += proposed == scan;
  }
  return {same == 50, std::to_string(same) + "/50 trials identical"};
}

Outcome algorithm1_protocol() {
  const SearchSpace space = load_space(kData + "/spaces/mixed_quadratic.json");
  SyntheticEvaluator ev("mixed_quadratic");
  double opt = -1e300;
  for (const auto& c : space.enumerate(500)) opt = std::max(opt, eval_synthetic("mixed_quadratic", c).value);
  int bo_hits = 0, rs_hits = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    bo_hits += final_incumbent(space, {20, 50}, Strategy::bayes_opt, seed, ev) == opt;
    rs_hits += final_incumbent(space, {0, 50}, Strategy::random_search, seed, ev) == opt;
  }
  return {bo_hits >= 7 && rs_hits < bo_hits,
          "BO found the argmax in " + std::to_string(bo_hits) + "/10 seeds, RS(50) in " + std::to_string(rs_hits) + "/10"};
}

Outcome branin_benchmark() {
  double grid_opt = -1e300;
  for (int i = 0; i <= 2000; ++i)
    for (int j = 0; j <= 2000; ++j) grid_opt = std::max(grid_opt, branin(-5 + 15.0 * i / 2000, 15.0 * j / 2000));
  const SearchSpace space = load_space(kData + "/spaces/branin.json");
  SyntheticEvaluator ev("branin");
  std::vector<double> bo, rs;
  int within = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    bo.push_back(final_incumbent(space, {20, 50}, Strategy::bayes_opt, seed, ev));
    rs.push_back(final_incumbent(space, {0, 50}, Strategy::random_search, seed, ev));
    within += std::abs(bo.back() - grid_opt) <= 0.5;
  }
  return {within >= 8 && median(bo) >= median(rs),
          std::to_string(within) + "/10 within 0.5 of " + num(grid_opt) + ", median BO " + num(median(bo)) +
              " vs RS " + num(median(rs))};
}

Outcome asymmetric_protocol_bench() {
  const fs::path dir = fs::temp_directory_path() / "autotune_acceptance_bench";
  fs::remove_all(dir);
  std::ostringstream out, err;
  const int code = cli::run({"autotune", "bench", "--space", "branin", "--evaluator", "branin", "--repeats", "10",
                             "--seed", "1", "--log-dir", dir.string(), "--format", "jsonl"},
                            out, err);
  if (code != 0) return {false, "bench exited " + std::to_string(code) + ": " + err.str()};
  std::istringstream in(out.str());
  std::set<std::pair<std::string, int>> seen;
  bool exact = true;
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    const auto row = nlohmann::json::parse(line);
    ++rows;
    const std::string strategy = row["strategy"];
    const int n = row["n"];
    seen.insert({row["variant"].get<std::string>() + "/" + strategy, n});
    std::vector<double> finals;
    for (int seed = 1; seed <= 10; ++seed) {
      std::ifstream log(dir / (strategy + "-n" + std::to_string(n) + "-seed" + std::to_string(seed) + ".jsonl"));
      std::string l;
      std::getline(log, l);
      double best = -1e300;
      int records = 0;
      while (std::getline(log, l)) {
        best = std::max(best, nlohmann::json::parse(l)["value"].get<double>());
        ++records;
      }
      if (records != n) exact = false;
      finals.push_back(best);
    }
    std::sort(finals.begin(), finals.end());
    auto at = [&](double p) {
      const double h = p * (finals.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const auto hi = static_cast<std::size_t>(std::ceil(h));
      return finals[lo] + (h - lo) * (finals[hi] - finals[lo]);
    };
    exact = exact && row["median"].get<double>() == at(0.5) && row["q1"].get<double>() == at(0.25) &&
            row["q3"].get<double>() == at(0.75) && row["best"].get<double>() == finals.back();
  }
  fs::remove_all(dir);
  const bool variants = seen.contains({"asymmetric/bayes_opt", 50}) && seen.contains({"asymmetric/random_search", 100}) &&
                        seen.contains({"budget_matched/bayes_opt", 50}) &&
                        seen.contains({"budget_matched/random_search", 50});
  return {rows == 4 && variants && exact,
          std::to_string(rows) + " summary rows, both variants " + (variants ? "present" : "missing") +
              ", re-derivation " + (exact ? "exact" : "differs")};
}

Outcome toy_end_to_end() {
  const SearchSpace space(fc_stack_params());
  std::vector<double> bo, rs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ToyTrainerEvaluator ev(seed);
    bo.push_back(final_incumbent(space, {20, 50}, Strategy::bayes_opt, seed, ev));
    rs.push_back(final_incumbent(space, {0, 50}, Strategy::random_search, seed, ev));
  }
  const double mb = median(bo), mr = median(rs);
  return {mb >= mr && mb >= 0.80 && mr >= 0.80, "median accuracy BO " + num(mb, 4) + " vs RS " + num(mr, 4)};
}

Outcome gradient_check() {
  double worst = 0.0;
  const SpiralData& data = spiral_dataset();
  for (int depth = 1; depth <= 3; ++depth) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(40 + depth));
    Mlp<double> net(2, std::vector<int>(static_cast<std::size_t>(depth), 16), 2, rng);
    const Mlp<double>::Matrix x = data.train_x.leftCols(32);
    const std::vector<int> y(data.train_y.begin(), data.train_y.begin() + 32);
    std::vector<Mlp<double>::Matrix> gw;
    std::vector<Mlp<double>::Vector> gb;
    net.loss(x, y, {}, &gw, &gb);
    const double eps = 1e-5;
    auto probe = [&](double& w, double analytic) {
      const double saved = w;
      w = saved + eps;
      const double up = net.loss(x, y, {}, nullptr, nullptr);
      w = saved - eps;
      const double down = net.loss(x, y, {}, nullptr, nullptr);
      w = saved;
      const double numeric = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric)));
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      for (Eigen::Index i = 0; i < net.weight(l).size(); ++i) probe(net.weight(l).data()[i], gw[l].data()[i]);
      for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) probe(net.bias(l)(i), gb[l](i));
    }
  }
  return {worst <= 1e-4, "worst relative error " + num(worst, 3) + " over depths 1-3"};
}

bool costs_match(const ArchitectureSpec& a) {
  const auto o = oracle::arch_costs(a);
  const auto p = count_params(a);
  const auto f = count_flops(a);
  return p.per_layer == o.params && f.per_layer == o.flops && p.trainable == o.trainable &&
         p.frozen == o.frozen && f.total == o.total_flops && f.learned == o.learned_flops;
}

Outcome surgery_and_accounting() {
  const auto resnet = load_architecture(kData + "/archs/resnet50_like.json");
  const Configuration row{{"depth", std::int64_t{1}}, {"fc_layers", std::int64_t{1}},
                          {"neurons_1", 256.0}, {"dropout_1", 0.4}};
  const auto [tuned, plan] = apply_configuration(resnet, row);
  const std::size_t n = tuned.layers.size();
  bool structure = plan.adapters.empty() && n == resnet.layers.size() + 1 &&
                   tuned.layers[n - 4].kind == LayerKind::avgpool && tuned.layers[n - 4].frozen &&
                   tuned.layers[n - 3].kind == LayerKind::dense && tuned.layers[n - 3].n_neurons == 256 &&
                   tuned.layers[n - 2].kind == LayerKind::dropout && tuned.layers[n - 2].rate == 0.4 &&
                   tuned.layers[n - 1].kind == LayerKind::output && tuned.layers[n - 1].n_neurons == 120;
  for (std::size_t i = 0; i + 4 < n; ++i) structure = structure && tuned.layers[i].frozen;
  bool accounting = costs_match(tuned) && costs_match(resnet);

  std::mt19937_64 rng(9009);
  int minimal = 0, adapters = 0;
  const auto densenet = load_architecture(kData + "/archs/densenet121_like.json");
  for (int trial = 0; trial < 20; ++trial) {
    const ArchitectureSpec& base = trial % 2 ? resnet : densenet;
    const SearchSpace space = build_space_for_tail(base, 8);
    Configuration c = space.sample_uniform(rng);
    while (std::get<std::int64_t>(c.at("depth")) < 4) c = space.sample_uniform(rng);
    auto [t, pl] = apply_configuration(base, c);
    bool ok = check_shapes(t).ok() && costs_match(t);
    for (const auto& a : pl.adapters) ok = ok && !check_shapes(without_layer(t, a.position)).ok();
    adapters += static_cast<int>(pl.adapters.size());
    minimal += ok;
    accounting = accounting && costs_match(t);
  }
  return {structure && accounting && minimal == 20,
          std::string("ResNet head row structure ") + (structure ? "matches" : "differs") + ", accounting " +
              (accounting ? "exact" : "differs") + ", minimality " + std::to_string(minimal) + "/20 (" +
              std::to_string(adapters) + " adapters)"};
}

Outcome determinism_and_resume() {
  const SearchSpace space = load_space(kData + "/spaces/mixed_quadratic.json");
  SyntheticEvaluator ev("mixed_quadratic");
  std::mt19937_64 rng(10010);
  int identical = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(trial);
    TuningRun full = init_run(space, {20, 50}, Strategy::bayes_opt, seed);
    run_to_completion(full, ev, kFixedClock);
    std::ostringstream expected;
    persist(full, expected);

    const int cut = static_cast<int>(rng() % 50);
    TuningRun partial = init_run(space, {20, 50}, Strategy::bayes_opt, seed);
    for (int i = 0; i < cut; ++i) step(partial, ev, kFixedClock);
    std::ostringstream saved;
    persist(partial, saved);
    std::istringstream in(saved.str());
    TuningRun resumed = resume(in, space, init_run(space, {20, 50}, Strategy::bayes_opt, seed));
    run_to_completion(resumed, ev, kFixedClock);
    std::ostringstream got;
    persist(resumed, got);
    identical += got.str() == expected.str();
  }
  return {identical == 10, std::to_string(identical) + "/10 resumed logs byte-identical"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "GP posterior vs dense-inverse oracle", 5, gp_correctness},
      {2, "EI closed form vs Monte Carlo", 30, ei_correctness},
      {3, "exhaustive proposal vs brute-force EI scan", 0, proposal_exactness},
      {4, "BO(20, 50) vs RS(50) on mixed_quadratic", 120, algorithm1_protocol},
      {5, "Branin BO(20, 50) vs RS(50)", 120, branin_benchmark},
      {6, "bench BO(50) vs RS(100) with re-derived summary", 0, asymmetric_protocol_bench},
      {7, "toy FC-stack tuning BO vs RS", 900, toy_end_to_end},
      {8, "trainer gradient check", 0, gradient_check},
      {9, "ResNet surgery, accounting and adapter minimality", 0, surgery_and_accounting},
      {10, "interrupted and resumed runs", 0, determinism_and_resume},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_seconds <= 0 || secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s criterion %d: %s: %s; %.1f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : " (over time budget)");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
