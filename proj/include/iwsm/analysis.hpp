#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/estimators.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/sde.hpp"

namespace iwsm {

// ---------------------------------------------------------------------------
// Forward / reverse KL of a single Gaussian q = N(mu, var) against the
// equal mixture p = 0.5 N(mu1, sigma^2) + 0.5 N(mu2, sigma^2).

struct ToyKlSpec {
  double mu1 = -2.0;
  double mu2 = 2.0;
  double sigma = 1.0;
  std::size_t nodes = 400;
  std::size_t max_iters = 20000;
  double tol = 1e-10;        // gradient norm for early exit
  double stall_tol = 1e-6;   // gradient norm accepted once the line search stalls at rounding level

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("toy-kl: sigma must be positive");
    if (mu1 == mu2) throw ConfigError("toy-kl: mu1 and mu2 must differ");
    if (nodes < 16) throw ConfigError("toy-kl: at least 16 quadrature nodes required");
    if (max_iters < 1) throw ConfigError("toy-kl: max_iters must be >= 1");
  }
};

struct KlRun {
  double init_mu = 0.0;
  double init_var = 0.0;
  double mu = 0.0;
  double var = 0.0;
  double kl = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct ToyKlReport {
  ToyKlSpec spec;
  double closed_mu = 0.0;
  double closed_var = 0.0;
  KlRun forward;
  std::vector<KlRun> reverse;
};

namespace detail {

inline double log_gauss(double x, double mu, double var) {
  const double u = x - mu;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - u * u / (2.0 * var);
}

struct Bimodal {
  double mu1, mu2, var;

  double log_p(double x) const {
    const double a = log_gauss(x, mu1, var), b = log_gauss(x, mu2, var);
    const double m = std::max(a, b);
    return m + std::log(0.5 * std::exp(a - m) + 0.5 * std::exp(b - m));
  }

  double dlog_p(double x) const {
    const double a = log_gauss(x, mu1, var), b = log_gauss(x, mu2, var);
    const double m = std::max(a, b);
    const double wa = std::exp(a - m), wb = std::exp(b - m);
    return (wa * (mu1 - x) + wb * (mu2 - x)) / ((wa + wb) * var);
  }
};

/// Trapezoid nodes and weights on [lo, hi].
inline void trapezoid(double lo, double hi, std::size_t n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = lo + h * static_cast<double>(i);
    w[i] = (i == 0 || i + 1 == n) ? 0.5 * h : h;
  }
}

/// Moments of p and its negative entropy over the pooled +-8 std window.
struct ForwardQuadrature {
  double mass = 0.0, m1 = 0.0, m2 = 0.0, neg_entropy = 0.0;
};

inline ForwardQuadrature forward_quadrature(const Bimodal& p, std::size_t nodes) {
  const double mid = 0.5 * (p.mu1 + p.mu2);
  const double half = 0.5 * std::abs(p.mu1 - p.mu2);
  const double sd = std::sqrt(p.var + half * half);
  std::vector<double> x, w;
  trapezoid(mid - half - 8.0 * sd, mid + half + 8.0 * sd, nodes, x, w);
  ForwardQuadrature q;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double lp = p.log_p(x[i]);
    const double pw = w[i] * std::exp(lp);
    q.mass += pw;
    q.m1 += pw * x[i];
    q.m2 += pw * x[i] * x[i];
    q.neg_entropy += pw * lp;
  }
  return q;
}

/// Gradient descent with Armijo backtracking on a 2-parameter objective.
template <class Obj>
KlRun descend(Obj&& objective, double mu, double log_var, const ToyKlSpec& spec) {
  KlRun run;
  run.init_mu = mu;
  run.init_var = std::exp(log_var);
  double g_mu = 0.0, g_lv = 0.0;
  double f = objective(mu, log_var, g_mu, g_lv);
  double step = 1.0;
  for (std::size_t it = 0; it < spec.max_iters; ++it) {
    const double gn2 = g_mu * g_mu + g_lv * g_lv;
    if (std::sqrt(gn2) < spec.tol) {
      run.converged = true;
      run.iterations = it;
      break;
    }
    step = std::min(1e6, step * 2.0);
    for (;;) {
      double gm2 = 0.0, gl2 = 0.0;
      const double nm = mu - step * g_mu, nl = log_var - step * g_lv;
      const double fn = objective(nm, nl, gm2, gl2);
      if (std::isfinite(fn) && fn < f && fn <= f - 0.5 * step * gn2) {
        mu = nm;
        log_var = nl;
        f = fn;
        g_mu = gm2;
        g_lv = gl2;
        break;
      }
      step *= 0.5;
      if (step < 1e-20) {
        run.iterations = it;
        run.mu = mu;
        run.var = std::exp(log_var);
        run.kl = f;
        run.converged = std::sqrt(gn2) < spec.stall_tol;
        return run;
      }
    }
    run.iterations = it + 1;
  }
  run.mu = mu;
  run.var = std::exp(log_var);
  run.kl = f;
  return run;
}

}  // namespace detail

inline ToyKlReport toy_kl_report(const ToyKlSpec& spec) {
  spec.validate();
  const detail::Bimodal p{spec.mu1, spec.mu2, spec.sigma * spec.sigma};
  ToyKlReport rep;
  rep.spec = spec;
  rep.closed_mu = 0.5 * (spec.mu1 + spec.mu2);
  rep.closed_var = p.var + 0.25 * (spec.mu1 - spec.mu2) * (spec.mu1 - spec.mu2);

  const detail::ForwardQuadrature fq = detail::forward_quadrature(p, spec.nodes);
  const detail::ForwardQuadrature coarse = detail::forward_quadrature(p, spec.nodes / 2);
  const double scale = std::max(1.0, rep.closed_var + rep.closed_mu * rep.closed_mu);
  if (std::abs(fq.mass - 1.0) > 1e-9 || std::abs(fq.m2 - coarse.m2) > 1e-9 * scale)
    throw NumericError("toy-kl: quadrature did not converge with " + std::to_string(spec.nodes) +
                       " nodes; increase the node count");

  // KL(p || q) = -H(p) - E_p[log q] over (mu, log var).
  const auto forward = [&](double mu, double lv, double& g_mu, double& g_lv) {
    const double var = std::exp(lv);
    const double e2 = fq.m2 - 2.0 * mu * fq.m1 + mu * mu * fq.mass;
    g_mu = -(fq.m1 - mu * fq.mass) / var;
    g_lv = 0.5 * fq.mass - 0.5 * e2 / var;
    return fq.neg_entropy + 0.5 * std::log(2.0 * std::numbers::pi) * fq.mass + 0.5 * lv * fq.mass + 0.5 * e2 / var;
  };
  rep.forward = detail::descend(forward, spec.mu1, std::log(p.var), spec);

  // KL(q || p) = -H(q) - E_q[log p], E_q by trapezoid over z in [-8, 8].
  std::vector<double> z, wz;
  detail::trapezoid(-8.0, 8.0, spec.nodes, z, wz);
  for (std::size_t i = 0; i < z.size(); ++i) wz[i] *= std::exp(-0.5 * z[i] * z[i]) / std::sqrt(2.0 * std::numbers::pi);
  const auto reverse = [&](double mu, double lv, double& g_mu, double& g_lv) {
    const double sd = std::exp(0.5 * lv);
    double elp = 0.0, gm = 0.0, gl = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double x = mu + sd * z[i];
      elp += wz[i] * p.log_p(x);
      const double d = p.dlog_p(x);
      gm += wz[i] * d;
      gl += wz[i] * d * z[i] * 0.5 * sd;
    }
    g_mu = -gm;
    g_lv = -0.5 - gl;
    return -0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) - 0.5 * lv - elp;
  };
  const double gap = spec.mu2 - spec.mu1;
  rep.reverse.push_back(detail::descend(reverse, spec.mu1 + 0.125 * gap, std::log(p.var), spec));
  rep.reverse.push_back(detail::descend(reverse, rep.closed_mu + 0.1 * gap, std::log(p.var), spec));
  return rep;
}

inline nlohmann::json to_json(const KlRun& r) {
  return {{"init_mu", r.init_mu}, {"init_var", r.init_var}, {"mu", r.mu},          {"var", r.var},
          {"kl", r.kl},           {"iterations", r.iterations}, {"converged", r.converged}};
}

inline nlohmann::json to_json(const ToyKlReport& r) {
  nlohmann::json j;
  j["spec"] = {{"mu1", r.spec.mu1}, {"mu2", r.spec.mu2}, {"sigma", r.spec.sigma}, {"nodes", r.spec.nodes}};
  j["forward"] = to_json(r.forward);
  j["forward"]["closed_form_mu"] = r.closed_mu;
  j["forward"]["closed_form_var"] = r.closed_var;
  j["forward"]["abs_err_mu"] = std::abs(r.forward.mu - r.closed_mu);
  j["forward"]["rel_err_var"] = std::abs(r.forward.var - r.closed_var) / r.closed_var;
  j["reverse"] = nlohmann::json::array();
  for (const auto& run : r.reverse) {
    nlohmann::json e = to_json(run);
    e["nearest_mode"] = std::abs(run.mu - r.spec.mu1) <= std::abs(run.mu - r.spec.mu2) ? "mu1" : "mu2";
    j["reverse"].push_back(e);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Empirical scaling of the S_L estimator and the SNIS loss on Gauss(1).

struct ScalingSpec {
  std::vector<std::size_t> L_list{100, 400, 1600, 10000};
  std::vector<std::size_t> S_list{8, 32, 128};
  std::size_t replications = 500;
  double x_t = 3.0;            // S_L probe point; t = 1 so sigma_t = sigma_max
  double x0 = 0.5;             // buffer centre for the SNIS loss study
  double buffer_sd = 1.0;      // buffer draws N(x0, buffer_sd^2)
  std::size_t buffer_size = 64;
  double frozen_slope = 0.3;   // s_theta(x) = -frozen_slope * x
  std::size_t loss_inner = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const {
    if (L_list.empty() || S_list.empty()) throw ConfigError("diag: L and S lists must be nonempty");
    for (auto v : L_list)
      if (v < 1) throw ConfigError("diag: L values must be >= 1");
    for (auto v : S_list)
      if (v < 1) throw ConfigError("diag: S values must be >= 1");
    if (replications < 2) throw ConfigError("diag: need at least 2 replications");
    if (buffer_size < 1 || !(buffer_sd >= 0.0)) throw ConfigError("diag: buffer_size >= 1 and buffer_sd >= 0 required");
  }
};

struct ScoreScalingRow {
  std::size_t L = 0;
  double mean = 0.0;
  double bias = 0.0;
  double std = 0.0;
};

struct LossScalingRow {
  std::size_t S = 0;
  double mean = 0.0;
  double bias = 0.0;
  double mse = 0.0;
};

struct ScalingReport {
  ScalingSpec spec;
  double true_score = 0.0;
  double true_loss = 0.0;
  std::vector<ScoreScalingRow> score_rows;
  std::vector<LossScalingRow> loss_rows;
  double std_slope = 0.0;  // d log std / d log L
  double mse_slope = 0.0;  // d log mse / d log S
};

namespace detail {

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx += std::log(x[i]), my += std::log(y[i]);
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = std::log(x[i]) - mx;
    sxy += u * (std::log(y[i]) - my);
    sxx += u * u;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace detail

/// Quadrature value of E_{p_t}[(s_theta(x) - grad log p_t(x))^2] for the
/// Gauss(1) target at sigma_t, with p_t = N(0, 1 + sigma_t^2).
inline double gauss_loss_quadrature(double frozen_slope, double sigma_t, std::size_t nodes = 4001) {
  const double var = 1.0 + sigma_t * sigma_t;
  std::vector<double> x, w;
  const double sd = std::sqrt(var);
  detail::trapezoid(-12.0 * sd, 12.0 * sd, nodes, x, w);
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double r = -frozen_slope * x[i] + x[i] / var;
    acc += w[i] * std::exp(detail::log_gauss(x[i], 0.0, var)) * r * r;
  }
  return acc;
}

inline ScalingReport estimator_scaling_report(const ScalingSpec& spec) {
  spec.validate();
  const EnergyFn f(GaussSpec{1});
  const VeSchedule sched(1e-5, 1.0);
  const double t = 1.0;
  const double sigma = sched.sigma(t);
  const unsigned workers = spec.threads ? spec.threads : default_threads();
  const Rng root(spec.seed);
  ScalingReport rep;
  rep.spec = spec;
  rep.true_score = -spec.x_t / (1.0 + sigma * sigma);

  std::vector<double> ls, stds;
  for (std::size_t L : spec.L_list) {
    std::vector<double> vals(spec.replications);
    const Rng lr = root.substream("score-L", L);
    parallel_for(spec.replications, workers, [&](std::size_t r) {
      Rng rng = lr.substream("rep", r);
      const double xt = spec.x_t;
      vals[r] = score_target(f, sched, std::span<const double>(&xt, 1), t, L, rng).value[0];
    });
    ScoreScalingRow row;
    row.L = L;
    for (double v : vals) row.mean += v;
    row.mean /= static_cast<double>(vals.size());
    double ss = 0.0;
    for (double v : vals) ss += (v - row.mean) * (v - row.mean);
    row.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
    row.bias = row.mean - rep.true_score;
    rep.score_rows.push_back(row);
    ls.push_back(static_cast<double>(L));
    stds.push_back(row.std);
  }
  rep.std_slope = detail::loglog_slope(ls, stds);

  // SNIS loss with a fresh buffer of buffer_size points per replication; x_t
  // perturbs a uniformly chosen buffer point, so D_M over the buffer is the
  // exact proposal density. N_K and the targets reuse loss_inner draws.
  rep.true_loss = gauss_loss_quadrature(spec.frozen_slope, sigma);
  std::vector<double> ss_list, mses;
  for (std::size_t S : spec.S_list) {
    std::vector<double> vals(spec.replications);
    const Rng sr = root.substream("loss-S", S);
    parallel_for(spec.replications, workers, [&](std::size_t r) {
      Rng rng = sr.substream("rep", r);
      Points y0(static_cast<Eigen::Index>(spec.buffer_size), 1);
      for (Eigen::Index j = 0; j < y0.rows(); ++j) y0(j, 0) = spec.x0 + spec.buffer_sd * rng.normal();
      Points out(static_cast<Eigen::Index>(S), 1), tgt(static_cast<Eigen::Index>(S), 1);
      std::vector<double> logw(S);
      for (std::size_t s = 0; s < S; ++s) {
        const double xs = y0(static_cast<Eigen::Index>(rng.below(spec.buffer_size)), 0) + sigma * rng.normal();
        const std::span<const double> xsp(&xs, 1);
        const InnerSamples inner = draw_inner_samples(f, sched, xsp, t, spec.loss_inner, rng);
        tgt(static_cast<Eigen::Index>(s), 0) = score_target(inner).value[0];
        out(static_cast<Eigen::Index>(s), 0) = -spec.frozen_slope * xs;
        logw[s] = log_numerator(inner) - log_denominator(sched, xsp, t, y0);
      }
      vals[r] = snis_loss(out, tgt, snis_weights(logw));
    });
    LossScalingRow row;
    row.S = S;
    for (double v : vals) {
      row.mean += v;
      row.mse += (v - rep.true_loss) * (v - rep.true_loss);
    }
    row.mean /= static_cast<double>(vals.size());
    row.mse /= static_cast<double>(vals.size());
    row.bias = row.mean - rep.true_loss;
    rep.loss_rows.push_back(row);
    ss_list.push_back(static_cast<double>(S));
    mses.push_back(row.mse);
  }
  rep.mse_slope = detail::loglog_slope(ss_list, mses);
  return rep;
}

inline nlohmann::json to_json(const ScalingReport& r) {
  nlohmann::json j;
  j["true_score"] = r.true_score;
  j["true_loss"] = r.true_loss;
  j["x_t"] = r.spec.x_t;
  j["x0"] = r.spec.x0;
  j["buffer_sd"] = r.spec.buffer_sd;
  j["buffer_size"] = r.spec.buffer_size;
  j["replications"] = r.spec.replications;
  j["seed"] = r.spec.seed;
  j["std_slope"] = r.std_slope;
  j["mse_slope"] = r.mse_slope;
  j["score"] = nlohmann::json::array();
  for (const auto& row : r.score_rows)
    j["score"].push_back({{"L", row.L}, {"mean", row.mean}, {"bias", row.bias}, {"std", row.std}});
  j["loss"] = nlohmann::json::array();
  for (const auto& row : r.loss_rows)
    j["loss"].push_back({{"S", row.S}, {"mean", row.mean}, {"bias", row.bias}, {"mse", row.mse}});
  return j;
}

}  // namespace iwsm
