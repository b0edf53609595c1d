#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwsm/analysis.hpp"
#include "iwsm/config.hpp"
#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/metrics.hpp"
#include "iwsm/sampler.hpp"
#include "iwsm/samples.hpp"
#include "iwsm/scorenet.hpp"
#include "iwsm/sde.hpp"
#include "iwsm/trainer.hpp"

// Command implementations behind the iwsm executable. Each writes its primary
// output file(s) and returns a JSON summary for stdout.
namespace iwsm::app {

namespace fs = std::filesystem;

inline void ensure_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  ensure_parent(p);
  write_text_atomic(p, j.dump(2) + "\n");
}

/// Samples CSV plus `<out>.meta.json` (seed, source, benchmark, failures).
inline void write_samples(const fs::path& out, const SampleSet& s, nlohmann::json meta) {
  ensure_parent(out);
  write_csv(out, s.points);
  meta["n"] = s.size();
  meta["dim"] = s.dim();
  meta["seed"] = s.seed;
  meta["source"] = s.source;
  meta["benchmark"] = s.benchmark;
  write_json(fs::path(out.string() + ".meta.json"), meta);
}

inline SampleSet read_samples(const fs::path& p, const std::string& benchmark) {
  SampleSet s;
  s.points = read_csv(p);
  s.benchmark = benchmark;
  s.source = p.string();
  return s;
}

struct TrainArgs {
  fs::path config;
  fs::path out;
  bool ablation = false;
  std::optional<unsigned> threads;
};

inline nlohmann::json cmd_train(const TrainArgs& a) {
  RunConfig c = load_run_config(a.config);
  if (a.threads) c.threads = a.threads;
  if (a.ablation) c.train.weighted = false;
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create output directory " + a.out.string() + ": " + ec.message());
  write_json(a.out / "resolved_config.json", to_json(c));
  const EnergyFn f = make_benchmark(c.benchmark);
  const VeSchedule sched(c.sigma_min, c.sigma_max);
  TrainConfig tc = c.train;
  tc.threads = c.threads.value_or(0);
  const TrainResult r = train(f, sched, c.net, tc, a.out);
  const std::size_t tail = std::max<std::size_t>(1, r.log.size() / 10);
  double late = 0.0;
  for (std::size_t i = r.log.size() - std::min(tail, r.log.size()); i < r.log.size(); ++i) late += r.log[i].loss;
  return {{"checkpoint", (a.out / "ckpt_final.json").string()},
          {"steps", r.checkpoint.step},
          {"late_loss", r.log.empty() ? 0.0 : late / static_cast<double>(std::min(tail, r.log.size()))},
          {"generation_failures", r.generation_failures},
          {"weighted", c.train.weighted}};
}

struct SampleArgs {
  fs::path checkpoint;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  fs::path out;
  std::size_t steps = 1000;
  double t_floor = 1e-3;
  std::optional<unsigned> threads;
};

inline nlohmann::json cmd_sample(const SampleArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  // Network sampling only needs the dimension and scale of the benchmark.
  const EnergyFn base = make_benchmark(ck.benchmark);
  const std::vector<std::string> warnings = check_compatible(ck, base.id(), base.dim());
  const EnergyFn f = base.with_scale(ck.scale);
  IntegratorConfig cfg;
  cfg.n_steps = a.steps;
  cfg.t_floor = a.t_floor;
  cfg.seed = a.seed;
  cfg.threads = a.threads.value_or(0);
  const SampleResult r =
      sample_network(f, VeSchedule(ck.sigma_min, ck.sigma_max), ck.network(), cfg, a.n);
  write_samples(a.out, r.samples,
                {{"n_requested", a.n}, {"n_failed", r.n_failed}, {"steps", a.steps}, {"checkpoint_step", ck.step}});
  return {{"out", a.out.string()}, {"n", r.samples.size()}, {"n_failed", r.n_failed}, {"warnings", warnings}};
}

struct DwesArgs {
  std::string benchmark = "gmm40";
  std::size_t L = 1000;
  std::size_t n = 1000;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  fs::path out;
  double t_floor = 1e-3;
  std::optional<double> clip;
  double sigma_min = 1e-5;
  double sigma_max = 1.0;
  std::optional<unsigned> threads;
};

inline nlohmann::json cmd_dwes(const DwesArgs& a) {
  const EnergyFn f = make_benchmark(a.benchmark);
  IntegratorConfig cfg;
  cfg.n_steps = a.steps;
  cfg.t_floor = a.t_floor;
  cfg.seed = a.seed;
  cfg.threads = a.threads.value_or(0);
  const SampleResult r = sample_dwes(f, VeSchedule(a.sigma_min, a.sigma_max), cfg, a.n, a.L, a.clip);
  write_samples(a.out, r.samples,
                {{"n_requested", a.n}, {"n_failed", r.n_failed}, {"steps", a.steps}, {"L", a.L}});
  return {{"out", a.out.string()}, {"n", r.samples.size()}, {"n_failed", r.n_failed}};
}

struct ReferenceArgs {
  std::string benchmark = "gmm40";
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  fs::path out;
};

inline nlohmann::json cmd_make_reference(const ReferenceArgs& a) {
  const EnergyFn f = make_benchmark(a.benchmark);
  Rng rng = Rng(a.seed).substream("reference", 0);
  SampleSet s = reference_sample(f, a.n, rng);
  s.seed = a.seed;
  write_samples(a.out, s, nlohmann::json::object());
  return {{"out", a.out.string()}, {"n", s.size()}};
}

struct EvalArgs {
  fs::path samples;
  fs::path reference;
  std::string benchmark = "gmm40";
  std::optional<fs::path> out;
  std::uint64_t seed = 0;
};

inline nlohmann::json cmd_eval(const EvalArgs& a) {
  const EnergyFn f = make_benchmark(a.benchmark);
  const MetricsReport r =
      evaluate_samples(read_samples(a.samples, f.id()), read_samples(a.reference, f.id()), f, a.seed);
  nlohmann::json j = to_json(r);
  if (a.out) write_json(*a.out, j);
  return j;
}

struct ToyKlArgs {
  double mu1 = -2.0;
  double mu2 = 2.0;
  double sigma = 1.0;
  std::optional<fs::path> out;
};

inline nlohmann::json cmd_toy_kl(const ToyKlArgs& a) {
  ToyKlSpec s;
  s.mu1 = a.mu1;
  s.mu2 = a.mu2;
  s.sigma = a.sigma;
  nlohmann::json j = to_json(toy_kl_report(s));
  if (a.out) write_json(*a.out, j);
  return j;
}

struct DiagArgs {
  std::vector<std::size_t> L_list{100, 400, 1600, 10000};
  std::vector<std::size_t> S_list{8, 32, 128};
  std::size_t reps = 500;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  std::optional<unsigned> threads;
};

/// JSON report at --out plus `<stem>_score.csv` and `<stem>_loss.csv` beside it.
inline nlohmann::json cmd_diag(const DiagArgs& a) {
  ScalingSpec s;
  s.L_list = a.L_list;
  s.S_list = a.S_list;
  s.replications = a.reps;
  s.seed = a.seed;
  s.threads = a.threads.value_or(0);
  const ScalingReport r = estimator_scaling_report(s);
  nlohmann::json j = to_json(r);
  if (a.out) {
    write_json(*a.out, j);
    const fs::path stem = a.out->parent_path() / a.out->stem();
    std::ofstream score(stem.string() + "_score.csv", std::ios::binary | std::ios::trunc);
    std::ofstream loss(stem.string() + "_loss.csv", std::ios::binary | std::ios::trunc);
    if (!score || !loss) throw IoError("cannot write diag tables next to " + a.out->string());
    score << "L,mean,bias,std\n";
    for (const auto& row : r.score_rows)
      score << row.L << ',' << format_real(row.mean) << ',' << format_real(row.bias) << ',' << format_real(row.std)
            << '\n';
    loss << "S,mean,mse\n";
    for (const auto& row : r.loss_rows)
      loss << row.S << ',' << format_real(row.mean) << ',' << format_real(row.mse) << '\n';
  }
  return j;
}

}  // namespace iwsm::app
