#pragma once

#include <cmath>
#include <numbers>
#include <span>

#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"

namespace iwsm {

/// Variance-exploding SDE on t in [0, 1] with zero drift and geometric noise
/// scale sigma(t) = sigma_min (sigma_max / sigma_min)^t. Transition kernel
/// p(x_t | x_0) = N(x_t; x_0, sigma(t)^2 I); prior p_1 = N(0, sigma_max^2 I).
class VeSchedule {
 public:
  VeSchedule(double sigma_min, double sigma_max) : sigma_min_(sigma_min), sigma_max_(sigma_max) {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
      throw ConfigError("VeSchedule: requires 0 < sigma_min < sigma_max");
    log_ratio_ = std::log(sigma_max_ / sigma_min_);
  }

  double sigma_min() const noexcept { return sigma_min_; }
  double sigma_max() const noexcept { return sigma_max_; }

  double sigma(double t) const {
    check_time(t);
    return sigma_min_ * std::exp(t * log_ratio_);
  }

  /// g(t)^2 = d sigma(t)^2 / dt = 2 sigma(t)^2 ln(sigma_max / sigma_min).
  double g_squared(double t) const {
    const double s = sigma(t);
    return 2.0 * s * s * log_ratio_;
  }

  double diffusion(double t) const { return std::sqrt(g_squared(t)); }

  /// x0 + sigma(t) * eps, eps ~ N(0, I).
  Vector perturb(std::span<const double> x0, double t, Rng& rng) const {
    const double s = sigma(t);
    Vector out(static_cast<Eigen::Index>(x0.size()));
    for (std::size_t i = 0; i < x0.size(); ++i) out[static_cast<Eigen::Index>(i)] = x0[i] + s * rng.normal();
    return out;
  }

  /// log N(x_t; x0, sigma(t)^2 I). Symmetric in its two point arguments.
  double log_transition(std::span<const double> xt, std::span<const double> x0, double t) const {
    if (xt.size() != x0.size()) throw ConfigError("log_transition: dimension mismatch");
    const double s = sigma(t);
    double sq = 0.0;
    for (std::size_t i = 0; i < xt.size(); ++i) {
      const double u = xt[i] - x0[i];
      sq += u * u;
    }
    return log_gaussian_norm(xt.size(), s) - sq / (2.0 * s * s);
  }

  /// -d/2 ln(2 pi sigma^2), the kernel's log normalizer.
  static double log_gaussian_norm(std::size_t d, double s) {
    return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * s * s);
  }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("VeSchedule: t must lie in [0, 1]");
  }

  double sigma_min_;
  double sigma_max_;
  double log_ratio_;
};

}  // namespace iwsm
