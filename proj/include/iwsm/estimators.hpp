#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/sde.hpp"

// Monte Carlo estimators for the diffused score and the importance weights.
// Every point argument lives in normalized coordinates; energies are reached
// through EnergyFn::evaluate_normalized.

namespace iwsm {

/// Gaussian draws x_t + sigma_t * eps_i with their energies and energy
/// gradients. Shared between the score target and the weight numerator.
/// Rows with a non-finite energy or gradient are stored as +inf energy with a
/// zero gradient, so they carry zero weight in every sum.
struct InnerSamples {
  Points points;
  Vector energies;
  Points grads;
  std::vector<char> finite;
  std::size_t n_finite = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(points.rows()); }
};

struct ScoreTarget {
  Vector value;
  std::size_t n_inner = 0;
  bool clipped = false;
};

struct WeightEstimate {
  double log_numerator = 0.0;
  double log_denominator = 0.0;
  double log_w_tilde = 0.0;
};

/// Redraws when every inner energy is non-finite, up to this many attempts total.
inline constexpr int kMaxInnerAttempts = 3;

inline InnerSamples draw_inner_samples(const EnergyFn& f, const VeSchedule& sched,
                                       std::span<const double> x_t, double t, std::size_t count,
                                       Rng& rng) {
  if (count < 1) throw ConfigError("inner sample count must be >= 1");
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("estimators require t in (0, 1]");
  const double sigma = sched.sigma(t);
  const auto d = static_cast<Eigen::Index>(x_t.size());
  InnerSamples inner;
  for (int attempt = 0; attempt < kMaxInnerAttempts; ++attempt) {
    inner.points.resize(static_cast<Eigen::Index>(count), d);
    for (Eigen::Index i = 0; i < inner.points.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) inner.points(i, j) = x_t[j] + sigma * rng.normal();
    f.evaluate_normalized(inner.points, inner.energies, &inner.grads);
    inner.finite.assign(count, 0);
    inner.n_finite = 0;
    for (std::size_t i = 0; i < count; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (std::isfinite(inner.energies[r]) && inner.grads.row(r).allFinite()) {
        inner.finite[i] = 1;
        ++inner.n_finite;
      } else {
        inner.energies[r] = std::numeric_limits<double>::infinity();
        inner.grads.row(r).setZero();
      }
    }
    if (inner.n_finite > 0) return inner;
  }
  throw NumericError("inner samples: all energies non-finite after " +
                     std::to_string(kMaxInnerAttempts) + " attempts");
}

namespace detail {

inline double max_negative_energy(const InnerSamples& inner) {
  return -inner.energies.minCoeff();
}

}  // namespace detail

/// exp(-E_i - max_j(-E_j)); exactly zero for non-finite rows.
inline Eigen::ArrayXd softmax_weights(const InnerSamples& inner) {
  const double top = detail::max_negative_energy(inner);
  const Eigen::ArrayXd shifted = -inner.energies.array() - top;
  return (shifted > -std::numeric_limits<double>::infinity()).select(shifted.exp(), 0.0);
}

/// S_L = grad_{x_t} log sum_i exp(-E(x_i)) = -sum_i softmax(-E)_i grad E(x_i),
/// optionally rescaled to at most clip_norm in Euclidean norm.
inline ScoreTarget score_target(const InnerSamples& inner, std::optional<double> clip_norm = {}) {
  if (inner.n_finite == 0) throw NumericError("score_target: no finite inner samples");
  const Eigen::ArrayXd w = softmax_weights(inner);
  ScoreTarget out;
  out.n_inner = inner.size();
  out.value = -(inner.grads.transpose() * w.matrix()) / w.sum();
  if (clip_norm) {
    const double norm = out.value.norm();
    if (norm > *clip_norm) {
      out.value *= *clip_norm / norm;
      out.clipped = true;
    }
  }
  return out;
}

inline ScoreTarget score_target(const EnergyFn& f, const VeSchedule& sched,
                                std::span<const double> x_t, double t, std::size_t L, Rng& rng,
                                std::optional<double> clip_norm = {}) {
  return score_target(draw_inner_samples(f, sched, x_t, t, L, rng), clip_norm);
}

/// log N_K = log sum_i exp(-E(x_i)) - ln K over already-evaluated draws; no
/// new draws or energy evaluations.
inline double log_numerator(const InnerSamples& inner) {
  if (inner.n_finite == 0) throw NumericError("log_numerator: no finite inner samples");
  const double top = detail::max_negative_energy(inner);
  return top + std::log(softmax_weights(inner).sum()) - std::log(static_cast<double>(inner.size()));
}

inline double log_numerator(const EnergyFn& f, const VeSchedule& sched, std::span<const double> x_t,
                            double t, std::size_t K, Rng& rng) {
  return log_numerator(draw_inner_samples(f, sched, x_t, t, K, rng));
}

/// log D_M = log (1/M) sum_j N(x_t; x0_j, sigma_t^2 I) over buffer rows x0_j.
inline double log_denominator(const VeSchedule& sched, std::span<const double> x_t, double t,
                              const Points& buffer_batch) {
  if (buffer_batch.rows() < 1) throw ConfigError("log_denominator: empty buffer batch");
  if (static_cast<std::size_t>(buffer_batch.cols()) != x_t.size())
    throw ConfigError("log_denominator: dimension mismatch");
  const double s = sched.sigma(t);
  const Eigen::Map<const Eigen::RowVectorXd> xt(x_t.data(), static_cast<Eigen::Index>(x_t.size()));
  const double norm = VeSchedule::log_gaussian_norm(x_t.size(), s);
  std::vector<double> logk(static_cast<std::size_t>(buffer_batch.rows()));
  for (Eigen::Index j = 0; j < buffer_batch.rows(); ++j)
    logk[static_cast<std::size_t>(j)] = norm - (buffer_batch.row(j) - xt).squaredNorm() / (2.0 * s * s);
  return log_sum_exp(logk) - std::log(static_cast<double>(buffer_batch.rows()));
}

inline WeightEstimate weight_estimate(double log_num, double log_den) {
  return {log_num, log_den, log_num - log_den};
}

/// Self-normalized weights softmax(log w~) over a batch. Any constant shared by
/// all entries (the unknown log Z) cancels.
inline std::vector<double> snis_weights(std::span<const double> log_w_tilde) {
  if (log_w_tilde.empty()) throw ConfigError("snis_weights: empty batch");
  for (double v : log_w_tilde)
    if (std::isnan(v)) throw NumericError("snis_weights: NaN log-weight");
  return softmax(log_w_tilde);
}

/// sum_s w_s |s_theta(x_s) - S_L(x_s)|^2 with one row per point.
inline double snis_loss(const Points& outputs, const Points& targets, std::span<const double> weights) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols() ||
      static_cast<std::size_t>(outputs.rows()) != weights.size())
    throw ConfigError("snis_loss: shape mismatch");
  double loss = 0.0;
  for (Eigen::Index s = 0; s < outputs.rows(); ++s)
    loss += weights[static_cast<std::size_t>(s)] * (outputs.row(s) - targets.row(s)).squaredNorm();
  return loss;
}

inline double snis_loss(const Points& outputs, std::span<const ScoreTarget> targets,
                        std::span<const double> weights) {
  Points t(static_cast<Eigen::Index>(targets.size()), outputs.cols());
  for (std::size_t s = 0; s < targets.size(); ++s) {
    if (targets[s].value.size() != outputs.cols()) throw ConfigError("snis_loss: shape mismatch");
    t.row(static_cast<Eigen::Index>(s)) = targets[s].value.transpose();
  }
  return snis_loss(outputs, t, weights);
}

}  // namespace iwsm
