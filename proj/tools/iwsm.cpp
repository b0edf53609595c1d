// iwsm: train, sample and evaluate diffusion samplers for Boltzmann densities.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "iwsm/app.hpp"

namespace {

int fail(iwsm::ErrorKind kind, const std::string& message) {
  const char* name = kind == iwsm::ErrorKind::Config ? "config" : kind == iwsm::ErrorKind::Numeric ? "numeric" : "io";
  std::cerr << nlohmann::json{{"error", name}, {"message", message}}.dump() << '\n';
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Diffusion samplers for unnormalized densities"};
  cli.require_subcommand(1);
  cli.fallthrough();
  std::optional<unsigned> threads;
  cli.add_option("--threads", threads, "Worker threads (default: IWSM_THREADS, else hardware)")
      ->check(CLI::PositiveNumber);

  iwsm::app::TrainArgs train;
  auto* c_train = cli.add_subcommand("train", "Train a score network with the replay-buffer loop");
  c_train->add_option("--config", train.config, "RunConfig JSON")->required();
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_flag("--ablation", train.ablation, "Uniform SNIS weights (no importance weighting)");

  iwsm::app::SampleArgs sample;
  auto* c_sample = cli.add_subcommand("sample", "Sample from a trained checkpoint");
  c_sample->add_option("--checkpoint", sample.checkpoint)->required();
  c_sample->add_option("--n", sample.n)->check(CLI::PositiveNumber);
  c_sample->add_option("--seed", sample.seed);
  c_sample->add_option("--out", sample.out)->required();
  c_sample->add_option("--steps", sample.steps)->check(CLI::PositiveNumber);
  c_sample->add_option("--t-floor", sample.t_floor);

  iwsm::app::DwesArgs dwes;
  std::optional<double> dwes_clip;
  auto* c_dwes = cli.add_subcommand("dwes", "Reverse SDE driven by Monte Carlo score estimates");
  c_dwes->add_option("--benchmark", dwes.benchmark);
  c_dwes->add_option("--L", dwes.L, "Inner samples per score estimate")->check(CLI::PositiveNumber);
  c_dwes->add_option("--n", dwes.n)->check(CLI::PositiveNumber);
  c_dwes->add_option("--steps", dwes.steps)->check(CLI::PositiveNumber);
  c_dwes->add_option("--seed", dwes.seed);
  c_dwes->add_option("--out", dwes.out)->required();
  c_dwes->add_option("--t-floor", dwes.t_floor);
  c_dwes->add_option("--clip", dwes_clip, "Clip score estimates to this norm");

  iwsm::app::ReferenceArgs ref;
  auto* c_ref = cli.add_subcommand("make-reference", "Exact samples from the target");
  c_ref->add_option("--benchmark", ref.benchmark);
  c_ref->add_option("--n", ref.n)->check(CLI::PositiveNumber);
  c_ref->add_option("--seed", ref.seed);
  c_ref->add_option("--out", ref.out)->required();

  iwsm::app::EvalArgs eval;
  std::string eval_out;
  auto* c_eval = cli.add_subcommand("eval", "Compare a sample CSV against a reference CSV");
  c_eval->add_option("--samples", eval.samples)->required();
  c_eval->add_option("--reference", eval.reference)->required();
  c_eval->add_option("--benchmark", eval.benchmark);
  c_eval->add_option("--out", eval_out, "Metrics JSON (also printed to stdout)");
  c_eval->add_option("--seed", eval.seed, "Subsampling seed");

  iwsm::app::ToyKlArgs kl;
  std::string kl_out;
  auto* c_kl = cli.add_subcommand("toy-kl", "Forward vs reverse KL fits to a 1D bimodal target");
  c_kl->add_option("--mu1", kl.mu1);
  c_kl->add_option("--mu2", kl.mu2);
  c_kl->add_option("--sigma", kl.sigma)->check(CLI::PositiveNumber);
  c_kl->add_option("--out", kl_out);

  iwsm::app::DiagArgs diag;
  std::string diag_out;
  auto* c_diag = cli.add_subcommand("diag", "Estimator bias / variance scaling on Gauss(1)");
  c_diag->add_option("--L-list", diag.L_list)->delimiter(',');
  c_diag->add_option("--S-list", diag.S_list)->delimiter(',');
  c_diag->add_option("--reps", diag.reps);
  c_diag->add_option("--seed", diag.seed);
  c_diag->add_option("--out", diag_out);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(iwsm::ErrorKind::Config, e.what());
  }

  if (!threads) {
    if (const char* env = std::getenv("IWSM_THREADS"); env && *env) {
      try {
        const long v = std::stol(env);
        if (v < 1) throw std::invalid_argument("non-positive");
        threads = static_cast<unsigned>(v);
      } catch (const std::exception&) {
        return fail(iwsm::ErrorKind::Config, std::string("IWSM_THREADS must be a positive integer, got '") + env + "'");
      }
    }
  }

  try {
    nlohmann::json summary;
    if (*c_train) {
      train.threads = threads;
      summary = iwsm::app::cmd_train(train);
    } else if (*c_sample) {
      sample.threads = threads;
      summary = iwsm::app::cmd_sample(sample);
    } else if (*c_dwes) {
      dwes.threads = threads;
      dwes.clip = dwes_clip;
      summary = iwsm::app::cmd_dwes(dwes);
    } else if (*c_ref) {
      summary = iwsm::app::cmd_make_reference(ref);
    } else if (*c_eval) {
      if (!eval_out.empty()) eval.out = eval_out;
      summary = iwsm::app::cmd_eval(eval);
    } else if (*c_kl) {
      if (!kl_out.empty()) kl.out = kl_out;
      summary = iwsm::app::cmd_toy_kl(kl);
    } else if (*c_diag) {
      if (!diag_out.empty()) diag.out = diag_out;
      diag.threads = threads;
      summary = iwsm::app::cmd_diag(diag);
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const iwsm::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(iwsm::ErrorKind::Io, e.what());
  } catch (const std::bad_alloc&) {
    return fail(iwsm::ErrorKind::Numeric, "out of memory");
  }
}
