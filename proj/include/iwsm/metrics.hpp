#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iwsm/assignment.hpp"
#include "iwsm/energy.hpp"
#include "iwsm/error.hpp"
#include "iwsm/numerics.hpp"
#include "iwsm/samples.hpp"

namespace iwsm {

inline constexpr std::size_t kMaxAssignmentSize = 2000;

struct MetricsReport {
  double w1 = 0.0;
  double w2 = 0.0;
  double e_tvd = 0.0;
  std::optional<double> s_tvd;
  std::optional<double> d_tvd;
  std::size_t n_gen = 0;
  std::size_t n_ref = 0;
  std::size_t n_matched = 0;
  std::uint64_t subsample_seed = 0;
  std::vector<std::string> warnings;
};

/// floor(sqrt(n)), at least 1.
inline std::size_t sqrt_bins(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n)))));
}

/// Uniform subsample of `count` rows without replacement, kept in original order.
inline Points subsample_rows(const Points& p, std::size_t count, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(p.rows());
  if (count >= n) return p;
  Rng rng = Rng(seed).substream("subsample", 0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  Points out(static_cast<Eigen::Index>(count), p.cols());
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Exact W_p between equal-size point sets after subsampling the larger one.
/// The subsample depends only on which set is larger, so W(A, B) == W(B, A).
inline double wasserstein(const Points& a, const Points& b, int p, std::uint64_t seed = 0) {
  if (p != 1 && p != 2) throw ConfigError("wasserstein: p must be 1 or 2");
  if (a.cols() != b.cols()) throw ConfigError("wasserstein: dimension mismatch");
  if (a.rows() < 1 || b.rows() < 1) throw ConfigError("wasserstein: empty sample set");
  const auto n = static_cast<std::size_t>(std::min(a.rows(), b.rows()));
  if (n > kMaxAssignmentSize)
    throw ConfigError("wasserstein: " + std::to_string(n) + " points exceed the exact-assignment limit of " +
                      std::to_string(kMaxAssignmentSize) + "; subsample the inputs first");
  const Points x = subsample_rows(a, n, seed);
  const Points y = subsample_rows(b, n, seed);
  const auto m = static_cast<Eigen::Index>(n);
  Points cost(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double sq = (x.row(i) - y.row(j)).squaredNorm();
      cost(i, j) = p == 1 ? std::sqrt(sq) : sq;
    }
  const double mean = solve_assignment(cost).cost / static_cast<double>(n);
  return p == 1 ? mean : std::sqrt(mean);
}

inline double wasserstein(const SampleSet& a, const SampleSet& b, int p, std::uint64_t seed = 0) {
  return wasserstein(a.points, b.points, p, seed);
}

namespace detail {

inline std::pair<double, double> pooled_range(std::span<const double> a, std::span<const double> b) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1.0;  // all values equal: one occupied bin either way
  return {lo, hi};
}

inline double tvd_1d(std::span<const double> a, std::span<const double> b, std::size_t n_bins) {
  const auto [lo, hi] = pooled_range(a, b);
  return total_variation(make_histogram(a, n_bins, lo, hi), make_histogram(b, n_bins, lo, hi));
}

inline std::vector<double> finite_energies(const Points& x, const EnergyFn& f, const char* which,
                                           std::vector<std::string>* warnings) {
  Vector e;
  f.evaluate(x, e, nullptr);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i)
    if (std::isfinite(e[i])) out.push_back(e[i]);
  const std::size_t dropped = static_cast<std::size_t>(e.size()) - out.size();
  if (out.empty()) throw NumericError(std::string("energy_tvd: no finite energies in ") + which + " set");
  if (dropped && warnings) {
    std::string msg = std::to_string(dropped) + " " + which + " samples with non-finite energy dropped";
    if (static_cast<double>(dropped) > 0.01 * static_cast<double>(e.size())) msg += " (more than 1%)";
    warnings->push_back(msg);
  }
  return out;
}

}  // namespace detail

/// TVD between histograms of log(E - E_min + 1), E_min pooled over both sets,
/// with floor(sqrt(min(n_gen, n_ref))) bins over the pooled range.
inline double energy_tvd(const Points& gen, const Points& ref, const EnergyFn& f,
                         std::vector<std::string>* warnings = nullptr) {
  if (gen.rows() < 1 || ref.rows() < 1) throw ConfigError("energy_tvd: empty sample set");
  std::vector<double> eg = detail::finite_energies(gen, f, "generated", warnings);
  std::vector<double> er = detail::finite_energies(ref, f, "reference", warnings);
  const double emin = std::min(*std::min_element(eg.begin(), eg.end()), *std::min_element(er.begin(), er.end()));
  for (double& v : eg) v = std::log(v - emin + 1.0);
  for (double& v : er) v = std::log(v - emin + 1.0);
  return detail::tvd_1d(eg, er, sqrt_bins(std::min(eg.size(), er.size())));
}

/// TVD over a uniform 2D grid on the pooled bounding box with
/// floor(sqrt(floor(sqrt(min(n_gen, n_ref))))) cells per axis, unless
/// bins_per_axis is given.
inline double sample_tvd(const Points& gen, const Points& ref, std::optional<std::size_t> bins_per_axis = {}) {
  if (gen.cols() != 2 || ref.cols() != 2) throw ConfigError("sample_tvd: requires 2-dimensional samples");
  if (gen.rows() < 1 || ref.rows() < 1) throw ConfigError("sample_tvd: empty sample set");
  const std::size_t k =
      bins_per_axis ? *bins_per_axis : sqrt_bins(sqrt_bins(static_cast<std::size_t>(std::min(gen.rows(), ref.rows()))));
  if (k < 1) throw ConfigError("sample_tvd: bins_per_axis must be >= 1");
  std::vector<std::vector<double>> edges(2);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Vector cg = gen.col(j), cr = ref.col(j);
    const auto [lo, hi] = detail::pooled_range(std::span<const double>(cg.data(), static_cast<std::size_t>(cg.size())),
                                               std::span<const double>(cr.data(), static_cast<std::size_t>(cr.size())));
    edges[static_cast<std::size_t>(j)] = histogram_edges(k, lo, hi);
  }
  const auto grid = [&](const Points& p) {
    std::vector<double> mass(k * k, 0.0);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      mass[histogram_bin(p(i, 0), edges[0]) * k + histogram_bin(p(i, 1), edges[1])] += 1.0;
    for (double& v : mass) v /= static_cast<double>(p.rows());
    return mass;
  };
  return total_variation(grid(gen), grid(ref));
}

inline std::vector<double> pairwise_distances(const Points& x, std::size_t n_particles, std::size_t space_dim) {
  if (static_cast<std::size_t>(x.cols()) != n_particles * space_dim)
    throw ConfigError("distance_tvd: sample dimension " + std::to_string(x.cols()) + " != n_particles * space_dim (" +
                      std::to_string(n_particles * space_dim) + ")");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(x.rows()) * n_particles * (n_particles - 1) / 2);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < n_particles; ++i)
      for (std::size_t j = i + 1; j < n_particles; ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < space_dim; ++k) {
          const double u = x(r, static_cast<Eigen::Index>(i * space_dim + k)) - x(r, static_cast<Eigen::Index>(j * space_dim + k));
          sq += u * u;
        }
        out.push_back(std::sqrt(sq));
      }
  return out;
}

/// TVD between histograms of all interparticle distances; bins default to
/// floor(sqrt(min(n_gen, n_ref))) over configurations.
inline double distance_tvd(const Points& gen, const Points& ref, std::size_t n_particles, std::size_t space_dim,
                           std::optional<std::size_t> n_bins = {}) {
  if (n_particles < 2) throw ConfigError("distance_tvd: need at least two particles");
  if (gen.rows() < 1 || ref.rows() < 1) throw ConfigError("distance_tvd: empty sample set");
  const std::vector<double> dg = pairwise_distances(gen, n_particles, space_dim);
  const std::vector<double> dr = pairwise_distances(ref, n_particles, space_dim);
  const std::size_t bins = n_bins ? *n_bins : sqrt_bins(static_cast<std::size_t>(std::min(gen.rows(), ref.rows())));
  return detail::tvd_1d(dg, dr, bins);
}

/// Full report; W_p on sets capped at kMaxAssignmentSize rows by seeded subsampling.
inline MetricsReport evaluate_samples(const SampleSet& gen, const SampleSet& ref, const EnergyFn& f,
                                      std::uint64_t seed = 0) {
  if (gen.dim() != ref.dim()) throw ConfigError("eval: generated and reference dimensions differ");
  if (gen.dim() != f.dim()) throw ConfigError("eval: sample dimension does not match benchmark");
  MetricsReport r;
  r.n_gen = gen.size();
  r.n_ref = ref.size();
  r.subsample_seed = seed;
  const std::size_t n = std::min({r.n_gen, r.n_ref, kMaxAssignmentSize});
  r.n_matched = n;
  if (std::max(r.n_gen, r.n_ref) > n && std::min(r.n_gen, r.n_ref) > n)
    r.warnings.push_back("both sets subsampled to " + std::to_string(n) + " points for exact assignment");
  const Points a = subsample_rows(gen.points, n, seed);
  const Points b = subsample_rows(ref.points, n, seed);
  r.w1 = wasserstein(a, b, 1, seed);
  r.w2 = wasserstein(a, b, 2, seed);
  r.e_tvd = energy_tvd(gen.points, ref.points, f, &r.warnings);
  if (gen.dim() == 2 && !f.is_particle_system()) r.s_tvd = sample_tvd(gen.points, ref.points);
  if (f.is_particle_system()) {
    const auto [np, sd] = f.particle_shape();
    r.d_tvd = distance_tvd(gen.points, ref.points, np, sd);
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["w1"] = r.w1;
  j["w2"] = r.w2;
  j["e_tvd"] = r.e_tvd;
  j["s_tvd"] = r.s_tvd ? nlohmann::json(*r.s_tvd) : nlohmann::json(nullptr);
  j["d_tvd"] = r.d_tvd ? nlohmann::json(*r.d_tvd) : nlohmann::json(nullptr);
  j["n_gen"] = r.n_gen;
  j["n_ref"] = r.n_ref;
  j["n_matched"] = r.n_matched;
  j["subsample_seed"] = r.subsample_seed;
  j["warnings"] = r.warnings;
  return j;
}

}  // namespace iwsm
