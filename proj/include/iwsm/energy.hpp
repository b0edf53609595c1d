#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/samples.hpp"

namespace iwsm {

/// Equal-weight isotropic Gaussian mixture. Means are drawn U(-m, m)^dim from
/// `seed`; the shared covariance is cov_scale * I.
struct GmmSpec {
  std::size_t n_components = 40;
  std::uint64_t seed = 0;
  double cov_scale = 40.0;
  Points means;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(means.cols()); }

  static GmmSpec make(std::size_t m, std::uint64_t seed = 0, std::size_t dim = 2) {
    if (m < 1 || dim < 1) throw ConfigError("GmmSpec: component count and dim must be >= 1");
    GmmSpec g;
    g.n_components = m;
    g.seed = seed;
    g.cov_scale = static_cast<double>(m);
    g.means.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
    Rng rng = Rng(seed).substream("gmm-means", 0);
    const double half = static_cast<double>(m);
    for (Eigen::Index i = 0; i < g.means.rows(); ++i)
      for (Eigen::Index j = 0; j < g.means.cols(); ++j) g.means(i, j) = rng.uniform(-half, half);
    return g;
  }
};

/// E(x) = |x|^2 / 2.
struct GaussSpec {
  std::size_t dim = 1;
};

/// Pairwise double-well potential over n particles in `space_dim` dimensions.
struct DoubleWellSpec {
  std::size_t n_particles = 4;
  std::size_t space_dim = 2;
  double a = 0.0;
  double b = -4.0;
  double c = 0.9;
  double tau = 1.0;
  double d0 = 4.0;
};

/// Lennard-Jones pair potential plus a harmonic pull toward the per-configuration
/// centre of mass.
struct LennardJonesSpec {
  std::size_t n_particles = 13;
  std::size_t space_dim = 3;
  double r_m = 1.0;
  double tau = 1.0;
  double epsilon = 1.0;
  double c_osc = 0.5;
};

/// 0.5 N(mu1, sigma^2) + 0.5 N(mu2, sigma^2) in one dimension.
struct Bimodal1dSpec {
  double mu1 = -2.0;
  double mu2 = 2.0;
  double sigma = 1.0;
};

/// Pair distances below this are treated as a singular configuration.
inline constexpr double kMinPairDistance = 1e-6;

namespace detail {

/// Mixture terms whose exponent trails the dominant one by more than this
/// everywhere in the batch's bounding ball are skipped. Each skipped term
/// weighs less than e^-40 (about 4e-18) relative to the dominant one.
inline constexpr double kMixturePruneGap = 40.0;

using v8d = double __attribute__((vector_size(64)));
using v8u = std::uint64_t __attribute__((vector_size(64)));

/// exp on eight lanes: Cody-Waite reduction by ln 2, degree-13 Taylor
/// polynomial, exponent assembled from the rounded quotient. Within 1 ulp of
/// std::exp on [-708, 0]; inputs below -708 are clamped there.
inline v8d exp8(v8d x) {
  constexpr double log2e = 1.4426950408889634;
  constexpr double ln2_hi = 0.693147180369123816490;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  constexpr double shifter = 0x1.8p52 + 1023.0;
  const v8d floor_v = v8d{} - 708.0;
  x = x < floor_v ? floor_v : x;
  const v8d kd = x * log2e + shifter;
  const v8u kb = reinterpret_cast<const v8u&>(kd);
  const v8d k = kd - shifter;
  v8d r = x - k * ln2_hi;
  r = r - k * ln2_lo;
  v8d p = v8d{} + 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const v8u scale_bits = kb << 52;
  return p * reinterpret_cast<const v8d&>(scale_bits);
}

/// Batched log-sum-exp over isotropic Gaussian components:
///   E(x) = -log sum_k exp(-|x - mu_k|^2 / (2 var)),
///   grad E(x) = sum_k r_k(x) (x - mu_k) / var.
/// Eight points per vector lane group, one component at a time.
inline void mixture_evaluate(const Points& means, double var, const Points& x,
                             Eigen::Ref<Vector> energies, Points* grads) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index m = means.rows();
  const double inv2v = 0.5 / var;

  Eigen::RowVectorXd center = x.colwise().mean();
  double radius = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) radius = std::max(radius, (x.row(i) - center).norm());
  Eigen::ArrayXd dc(m);
  for (Eigen::Index k = 0; k < m; ++k) dc[k] = (means.row(k) - center).norm();
  Eigen::Index kbest = 0;
  dc.minCoeff(&kbest);
  const double worst_best = (dc[kbest] + radius) * (dc[kbest] + radius) * inv2v;
  const bool prune = std::isfinite(worst_best);
  // Exponents are expanded as x.mu_k / var - |mu_k|^2 / (2 var); the shared
  // -|x|^2 / (2 var) term is added back per point.
  std::vector<double> mu;  // active means / var, component-major, then -|mu|^2/(2 var)
  mu.reserve(static_cast<std::size_t>(m * (d + 1)));
  for (Eigen::Index k = 0; k < m; ++k) {
    const double near = std::max(0.0, dc[k] - radius);
    if (!prune || near * near * inv2v - worst_best <= kMixturePruneGap) {
      for (Eigen::Index j = 0; j < d; ++j) mu.push_back(means(k, j) / var);
      mu.push_back(-means.row(k).squaredNorm() * inv2v);
    }
  }
  const Eigen::Index stride = d + 1;
  const auto na = static_cast<Eigen::Index>(mu.size()) / stride;
  if (grads) grads->resize(n, d);

  std::vector<v8d> q(static_cast<std::size_t>(na));
  std::vector<v8d> xs(static_cast<std::size_t>(d));
  std::vector<v8d> gs(static_cast<std::size_t>(d));
  for (Eigen::Index b = 0; b < n; b += 8) {
    const Eigen::Index rows = std::min<Eigen::Index>(8, n - b);
    for (Eigen::Index j = 0; j < d; ++j) {
      xs[j] = v8d{};
      for (Eigen::Index r = 0; r < rows; ++r) xs[j][r] = x(b + r, j);
    }
    v8d best = v8d{} - std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < na; ++a) {
      const double* c = mu.data() + a * stride;
      v8d acc = v8d{} + c[d];
      for (Eigen::Index j = 0; j < d; ++j) acc += xs[j] * c[j];
      q[a] = acc;
      best = acc > best ? acc : best;
    }
    v8d total = v8d{};
    for (auto& g : gs) g = v8d{};
    for (Eigen::Index a = 0; a < na; ++a) {
      const v8d w = exp8(q[a] - best);
      total += w;
      if (grads) {
        const double* c = mu.data() + a * stride;
        for (Eigen::Index j = 0; j < d; ++j) gs[j] += w * c[j];
      }
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) sq += xs[j][r] * xs[j][r];
      energies[b + r] = sq * inv2v - (best[r] + std::log(total[r]));
      if (grads)
        for (Eigen::Index j = 0; j < d; ++j)
          (*grads)(b + r, j) = xs[j][r] / var - gs[j][r] / total[r];
    }
  }
}

inline double pair_energy_dw(const DoubleWellSpec& s, double dist, double& dE_dd) {
  const double u = dist - s.d0;
  const double u2 = u * u;
  dE_dd = (s.a + 2.0 * s.b * u + 4.0 * s.c * u2 * u) / (2.0 * s.tau);
  return (s.a * u + s.b * u2 + s.c * u2 * u2) / (2.0 * s.tau);
}

inline double pair_energy_lj(const LennardJonesSpec& s, double dist, double& dE_dd) {
  const double inv = s.r_m / dist;
  const double inv6 = std::pow(inv, 6);
  const double inv12 = inv6 * inv6;
  const double pref = s.epsilon / (2.0 * s.tau);
  dE_dd = pref * (-12.0 * inv12 + 6.0 * inv6) / dist;
  return pref * (inv12 - inv6);
}

/// Sums a pair potential over all particle pairs. Returns false (and leaves
/// outputs unspecified) when a pair is closer than kMinPairDistance and the
/// potential is singular there.
template <class PairFn>
bool pairwise_evaluate(std::span<const double> x, std::size_t n_particles, std::size_t space_dim,
                       bool singular_at_zero, PairFn&& pair, double& energy, std::span<double> grad) {
  energy = 0.0;
  std::fill(grad.begin(), grad.end(), 0.0);
  for (std::size_t i = 0; i < n_particles; ++i) {
    for (std::size_t j = i + 1; j < n_particles; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < space_dim; ++k) {
        const double diff = x[i * space_dim + k] - x[j * space_dim + k];
        d2 += diff * diff;
      }
      const double dist = std::sqrt(d2);
      if (dist < kMinPairDistance) {
        if (singular_at_zero) return false;
        // Double-well at coincident particles: energy is finite, the pair's
        // gradient direction is undefined and taken as zero.
        double unused;
        energy += pair(dist, unused);
        continue;
      }
      double dE_dd = 0.0;
      energy += pair(dist, dE_dd);
      for (std::size_t k = 0; k < space_dim; ++k) {
        const double g = dE_dd * (x[i * space_dim + k] - x[j * space_dim + k]) / dist;
        grad[i * space_dim + k] += g;
        grad[j * space_dim + k] -= g;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Unnormalized negative log-density E(x) with analytic gradient.
///
/// Energies are defined on physical coordinates. The sampler and network work
/// on normalized coordinates y = x / scale; evaluate_normalized() returns the
/// energy of y, E(scale * y), and its gradient in y.
///
/// GMM and bimodal energies drop the -log m and Gaussian normalizer constants:
///   E(x) = -log sum_k exp(-|x - mu_k|^2 / (2 var)).
class EnergyFn {
 public:
  using Spec = std::variant<GmmSpec, GaussSpec, DoubleWellSpec, LennardJonesSpec, Bimodal1dSpec>;

  explicit EnergyFn(Spec spec, double scale = 1.0, std::string id = {}, double offset = 0.0)
      : spec_(std::move(spec)), scale_(scale), offset_(offset), id_(std::move(id)) {
    if (!(scale_ > 0.0)) throw ConfigError("EnergyFn: scale must be positive");
    if (const auto* b = std::get_if<Bimodal1dSpec>(&spec_)) {
      if (!(b->sigma > 0.0)) throw ConfigError("Bimodal1d: sigma must be positive");
      mixture_means_.resize(2, 1);
      mixture_means_ << b->mu1, b->mu2;
    }
    if (const auto* g = std::get_if<GmmSpec>(&spec_)) {
      if (g->means.rows() < 1 || g->means.cols() < 1) throw ConfigError("GmmSpec: no means");
      if (!(g->cov_scale > 0.0)) throw ConfigError("GmmSpec: cov_scale must be positive");
    }
    if (const auto* dw = std::get_if<DoubleWellSpec>(&spec_)) {
      if (dw->n_particles < 2 || dw->space_dim < 1) throw ConfigError("DoubleWell: bad shape");
    }
    if (const auto* lj = std::get_if<LennardJonesSpec>(&spec_)) {
      if (lj->n_particles < 2 || lj->space_dim < 1) throw ConfigError("LennardJones: bad shape");
    }
    if (id_.empty()) id_ = default_id();
  }

  const Spec& spec() const noexcept { return spec_; }
  double scale() const noexcept { return scale_; }
  double offset() const noexcept { return offset_; }
  const std::string& id() const noexcept { return id_; }

  /// Same energy shifted by a constant; gradients are unchanged.
  EnergyFn with_offset(double c) const { return EnergyFn(spec_, scale_, id_, offset_ + c); }
  EnergyFn with_scale(double s) const { return EnergyFn(spec_, s, id_, offset_); }

  std::size_t dim() const {
    return std::visit(
        [](const auto& s) -> std::size_t {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, GmmSpec>) return s.dim();
          else if constexpr (std::is_same_v<T, GaussSpec>) return s.dim;
          else if constexpr (std::is_same_v<T, DoubleWellSpec>) return s.n_particles * s.space_dim;
          else if constexpr (std::is_same_v<T, LennardJonesSpec>) return s.n_particles * s.space_dim;
          else return 1;
        },
        spec_);
  }

  bool is_particle_system() const {
    return std::holds_alternative<DoubleWellSpec>(spec_) ||
           std::holds_alternative<LennardJonesSpec>(spec_);
  }

  /// (n_particles, space_dim) for particle systems, (0, 0) otherwise.
  std::pair<std::size_t, std::size_t> particle_shape() const {
    if (const auto* dw = std::get_if<DoubleWellSpec>(&spec_)) return {dw->n_particles, dw->space_dim};
    if (const auto* lj = std::get_if<LennardJonesSpec>(&spec_)) return {lj->n_particles, lj->space_dim};
    return {0, 0};
  }

  bool exactly_sampleable() const {
    return std::holds_alternative<GmmSpec>(spec_) || std::holds_alternative<GaussSpec>(spec_) ||
           std::holds_alternative<Bimodal1dSpec>(spec_);
  }

  /// Throws NumericError on a singular configuration.
  double energy(std::span<const double> x) const {
    std::vector<double> g(dim());
    return energy_and_grad(x, g);
  }

  Vector grad(std::span<const double> x) const {
    Vector g(static_cast<Eigen::Index>(dim()));
    energy_and_grad(x, std::span<double>(g.data(), static_cast<std::size_t>(g.size())));
    return g;
  }

  double energy_and_grad(std::span<const double> x, std::span<double> grad) const {
    check_dim(x.size());
    if (grad.size() != x.size()) throw ConfigError("energy_and_grad: gradient buffer size mismatch");
    double e = 0.0;
    if (is_particle_system()) {
      if (!evaluate_particles(x, e, grad))
        throw NumericError("energy: singular configuration (pair distance below 1e-6)");
    } else {
      Points row = Eigen::Map<const Points>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
      Vector ev;
      Points gv;
      evaluate_core(row, ev, &gv);
      e = ev[0];
      for (std::size_t j = 0; j < x.size(); ++j) grad[j] = gv(0, static_cast<Eigen::Index>(j));
    }
    return e + offset_;
  }

  /// Batch evaluation over rows of x (physical coordinates). Singular rows get
  /// +inf energy and a zero gradient instead of throwing.
  void evaluate(const Points& x, Vector& energies, Points* grads) const {
    check_dim(static_cast<std::size_t>(x.cols()));
    evaluate_core(x, energies, grads);
    if (offset_ != 0.0) energies.array() += offset_;
  }

  /// Batch evaluation on normalized coordinates y = x / scale: energies are
  /// E(scale * y) and gradients are taken with respect to y.
  void evaluate_normalized(const Points& y, Vector& energies, Points* grads) const {
    if (scale_ == 1.0) {
      evaluate(y, energies, grads);
      return;
    }
    const Points x = scale_ * y;
    evaluate(x, energies, grads);
    if (grads) *grads *= scale_;
  }

  /// Exact i.i.d. draws in physical coordinates (mixtures: uniform component,
  /// then Gaussian).
  Points sample(std::size_t n, Rng& rng) const {
    if (!exactly_sampleable()) throw ConfigError("energy '" + id_ + "' has no exact sampler");
    const auto d = static_cast<Eigen::Index>(dim());
    Points out(static_cast<Eigen::Index>(n), d);
    if (std::holds_alternative<GaussSpec>(spec_)) {
      for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) out(i, j) = rng.normal();
      return out;
    }
    const Points& means = mixture_means();
    const double sd = std::sqrt(mixture_variance());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(means.rows())));
      for (Eigen::Index j = 0; j < d; ++j) out(i, j) = means(k, j) + sd * rng.normal();
    }
    return out;
  }

 private:
  const Points& mixture_means() const {
    if (const auto* g = std::get_if<GmmSpec>(&spec_)) return g->means;
    return mixture_means_;
  }

  double mixture_variance() const {
    if (const auto* g = std::get_if<GmmSpec>(&spec_)) return g->cov_scale;
    const auto& b = std::get<Bimodal1dSpec>(spec_);
    return b.sigma * b.sigma;
  }

  void check_dim(std::size_t d) const {
    if (d != dim())
      throw ConfigError("energy '" + id_ + "': expected dimension " + std::to_string(dim()) +
                        ", got " + std::to_string(d));
  }

  void evaluate_core(const Points& x, Vector& energies, Points* grads) const {
    const Eigen::Index n = x.rows();
    energies.resize(n);
    if (grads) grads->resize(n, x.cols());
    if (n == 0) return;
    if (const auto* g = std::get_if<GmmSpec>(&spec_)) {
      detail::mixture_evaluate(g->means, g->cov_scale, x, energies, grads);
    } else if (const auto* b = std::get_if<Bimodal1dSpec>(&spec_)) {
      detail::mixture_evaluate(mixture_means_, b->sigma * b->sigma, x, energies, grads);
    } else if (std::holds_alternative<GaussSpec>(spec_)) {
      energies = 0.5 * x.rowwise().squaredNorm();
      if (grads) *grads = x;
    } else {
      std::vector<double> row(static_cast<std::size_t>(x.cols()));
      std::vector<double> g(row.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) row[j] = x(i, j);
        double e = 0.0;
        if (evaluate_particles(row, e, g)) {
          energies[i] = e;
          if (grads)
            for (Eigen::Index j = 0; j < x.cols(); ++j) (*grads)(i, j) = g[j];
        } else {
          energies[i] = std::numeric_limits<double>::infinity();
          if (grads) grads->row(i).setZero();
        }
      }
    }
  }

  bool evaluate_particles(std::span<const double> x, double& e, std::span<double> grad) const {
    if (const auto* dw = std::get_if<DoubleWellSpec>(&spec_)) {
      return detail::pairwise_evaluate(
          x, dw->n_particles, dw->space_dim, false,
          [dw](double r, double& de) { return detail::pair_energy_dw(*dw, r, de); }, e, grad);
    }
    const auto& lj = std::get<LennardJonesSpec>(spec_);
    if (!detail::pairwise_evaluate(
            x, lj.n_particles, lj.space_dim, true,
            [&lj](double r, double& de) { return detail::pair_energy_lj(lj, r, de); }, e, grad))
      return false;
    const std::size_t n = lj.n_particles, sd = lj.space_dim;
    std::vector<double> com(sd, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < sd; ++k) com[k] += x[i * sd + k] / static_cast<double>(n);
    double osc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < sd; ++k) {
        const double u = x[i * sd + k] - com[k];
        osc += 0.5 * u * u;
        // sum_j (x_j - com) = 0, so the centre-of-mass term drops out.
        grad[i * sd + k] += lj.c_osc * u;
      }
    e += lj.c_osc * osc;
    return true;
  }

  std::string default_id() const {
    return std::visit(
        [](const auto& s) -> std::string {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, GmmSpec>) return "gmm" + std::to_string(s.n_components);
          else if constexpr (std::is_same_v<T, GaussSpec>) return "gauss" + std::to_string(s.dim);
          else if constexpr (std::is_same_v<T, DoubleWellSpec>) return "dw" + std::to_string(s.n_particles);
          else if constexpr (std::is_same_v<T, LennardJonesSpec>) return "lj" + std::to_string(s.n_particles);
          else return "bimodal1d";
        },
        spec_);
  }

  Spec spec_;
  double scale_;
  double offset_;
  std::string id_;
  Points mixture_means_;
};

/// Exact reference draws for GMM, Gauss and bimodal energies.
inline SampleSet reference_sample(const EnergyFn& f, std::size_t n, Rng& rng) {
  if (n < 1) throw ConfigError("reference_sample: n must be >= 1");
  if (!f.exactly_sampleable())
    throw ConfigError("reference_sample: '" + f.id() +
                      "' is not exactly sampleable; ingest a reference CSV instead");
  SampleSet s;
  s.seed = rng.seed();
  s.source = "reference";
  s.benchmark = f.id();
  s.points = f.sample(n, rng);
  return s;
}

}  // namespace iwsm
