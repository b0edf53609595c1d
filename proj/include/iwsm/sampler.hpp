#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/estimators.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/samples.hpp"
#include "iwsm/scorenet.hpp"
#include "iwsm/sde.hpp"

namespace iwsm {

struct IntegratorConfig {
  std::size_t n_steps = 1000;
  double t_floor = 1e-3;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: default_threads()

  void validate() const {
    if (n_steps < 1) throw ConfigError("IntegratorConfig: n_steps must be >= 1");
    if (!(t_floor >= 0.0 && t_floor < 1.0)) throw ConfigError("IntegratorConfig: t_floor must lie in [0, 1)");
  }
  unsigned workers() const { return threads ? threads : default_threads(); }
};

struct SampleResult {
  SampleSet samples;           // successful trajectories only, physical coordinates
  std::size_t n_failed = 0;
};

/// Batched score in normalized coordinates: fills out (rows x d) for rows of y at time t.
using BatchScoreFn = std::function<void(const Points& y, double t, Points& out)>;

namespace detail {

inline double step_size(const IntegratorConfig& cfg) {
  return (1.0 - cfg.t_floor) / static_cast<double>(cfg.n_steps);
}

inline SampleResult collect(const EnergyFn& f, const Points& y, const std::vector<char>& failed,
                            std::uint64_t seed, std::string source) {
  SampleResult r;
  for (char c : failed) r.n_failed += c ? 1 : 0;
  Points out(y.rows() - static_cast<Eigen::Index>(r.n_failed), y.cols());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    if (!failed[static_cast<std::size_t>(i)]) out.row(k++) = y.row(i) * f.scale();
  r.samples.points = std::move(out);
  r.samples.seed = seed;
  r.samples.source = std::move(source);
  r.samples.benchmark = f.id();
  return r;
}

}  // namespace detail

/// Euler-Maruyama on the reverse VE-SDE, y <- y + g^2 score dt + g sqrt(dt) eps,
/// over the uniform grid t_k = 1 - k (1 - t_floor) / n_steps, starting from
/// y ~ N(0, sigma_max^2 I). Trajectory i draws all of its noise from the
/// substream ("trajectory", i) so results do not depend on batching.
inline SampleResult sample_reverse(const EnergyFn& f, const VeSchedule& sched, const IntegratorConfig& cfg,
                                   std::size_t n, const BatchScoreFn& score, std::string source = "network") {
  cfg.validate();
  if (n < 1) throw ConfigError("sample_reverse: n must be >= 1");
  const auto d = static_cast<Eigen::Index>(f.dim());
  const Rng root(cfg.seed);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  Points y(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    rngs.push_back(root.substream("trajectory", i));
    for (Eigen::Index j = 0; j < d; ++j) y(static_cast<Eigen::Index>(i), j) = sched.sigma_max() * rngs[i].normal();
  }
  std::vector<char> failed(n, 0);
  const double dt = detail::step_size(cfg);
  const unsigned workers = cfg.workers();
  // Fixed block size so the score batches, and their rounding, do not depend on workers.
  const std::size_t chunk = 64;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const double t = 1.0 - static_cast<double>(k) * dt;
    const double g2 = sched.g_squared(t);
    const double noise = std::sqrt(g2 * dt);
    parallel_for(n_chunks, workers, [&](std::size_t c) {
      const auto begin = static_cast<Eigen::Index>(c * chunk);
      const auto rows = static_cast<Eigen::Index>(std::min(n, (c + 1) * chunk)) - begin;
      Points block = y.middleRows(begin, rows);
      Points s;
      score(block, t, s);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(begin + r);
        if (failed[i]) continue;
        for (Eigen::Index j = 0; j < d; ++j)
          y(begin + r, j) += g2 * s(r, j) * dt + noise * rngs[i].normal();
        if (!y.row(begin + r).allFinite()) failed[i] = 1;
      }
    });
    for (std::size_t i = 0; i < n; ++i)
      if (failed[i]) y.row(static_cast<Eigen::Index>(i)).setZero();
  }
  return detail::collect(f, y, failed, cfg.seed, std::move(source));
}

inline SampleResult sample_network(const EnergyFn& f, const VeSchedule& sched, const ScoreNet& net,
                                   const IntegratorConfig& cfg, std::size_t n) {
  if (net.spec().input_dim != f.dim())
    throw ConfigError("sample_network: network dimension " + std::to_string(net.spec().input_dim) +
                      " does not match benchmark dimension " + std::to_string(f.dim()));
  return sample_reverse(
      f, sched, cfg, n, [&net](const Points& y, double t, Points& out) { out = net.forward(y, t); }, "network");
}

/// Reverse SDE driven by a fresh S_L estimate at every step (no network).
/// Each trajectory runs sequentially on its own substream ("dwes", i).
inline SampleResult sample_dwes(const EnergyFn& f, const VeSchedule& sched, const IntegratorConfig& cfg,
                                std::size_t n, std::size_t L, std::optional<double> clip_norm = {}) {
  cfg.validate();
  if (n < 1) throw ConfigError("sample_dwes: n must be >= 1");
  if (L < 1) throw ConfigError("sample_dwes: L must be >= 1");
  const auto d = static_cast<Eigen::Index>(f.dim());
  const Rng root(cfg.seed);
  const double dt = detail::step_size(cfg);
  Points y(static_cast<Eigen::Index>(n), d);
  std::vector<char> failed(n, 0);
  parallel_for(n, cfg.workers(), [&](std::size_t i) {
    Rng rng = root.substream("dwes", i);
    Vector x(d);
    for (Eigen::Index j = 0; j < d; ++j) x[j] = sched.sigma_max() * rng.normal();
    try {
      for (std::size_t k = 0; k < cfg.n_steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        const double g2 = sched.g_squared(t);
        const double noise = std::sqrt(g2 * dt);
        const ScoreTarget s = score_target(f, sched, std::span<const double>(x.data(), static_cast<std::size_t>(d)),
                                           t, L, rng, clip_norm);
        for (Eigen::Index j = 0; j < d; ++j) x[j] += g2 * s.value[j] * dt + noise * rng.normal();
        if (!x.allFinite()) throw NumericError("non-finite state");
      }
      y.row(static_cast<Eigen::Index>(i)) = x.transpose();
    } catch (const NumericError&) {
      failed[i] = 1;
      y.row(static_cast<Eigen::Index>(i)).setZero();
    }
  });
  return detail::collect(f, y, failed, cfg.seed, "dwes");
}

}  // namespace iwsm
