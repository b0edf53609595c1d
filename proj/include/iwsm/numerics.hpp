#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "iwsm/error.hpp"

namespace iwsm {

/// Row-major point cloud: one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

/// 256-layer ziggurat tables for the standard normal (Marsaglia-Tsang
/// constants, Doornik's layout: x[0] = V / f(R), x[1] = R, x[256] = 0).
struct ZigguratTables {
  static constexpr int kLayers = 256;
  static constexpr double kTailStart = 3.6541528853610088;
  static constexpr double kLayerArea = 4.92867323399e-3;

  double x[kLayers + 1];
  double ratio[kLayers];

  ZigguratTables() {
    double f = std::exp(-0.5 * kTailStart * kTailStart);
    x[0] = kLayerArea / f;
    x[1] = kTailStart;
    x[kLayers] = 0.0;
    for (int i = 2; i < kLayers; ++i) {
      x[i] = std::sqrt(-2.0 * std::log(kLayerArea / x[i - 1] + f));
      f = std::exp(-0.5 * x[i] * x[i]);
    }
    for (int i = 0; i < kLayers; ++i) ratio[i] = x[i + 1] / x[i];
  }

};

inline const ZigguratTables kZiggurat{};

}  // namespace detail

/// xoshiro256** seeded through splitmix64. Normal deviates come from the
/// ziggurat above, consuming one 64-bit draw per accepted rectangle sample
/// (bits 11..63 for the abscissa, bits 0..7 for the layer), so the draw
/// sequence depends only on the seed and no implementation-defined std::
/// distribution is involved.
///
/// substream(tag, index) derives an independent generator from the *seed*
/// (not the current state), so parallel workers can key their streams by
/// (purpose, index) and get the same numbers regardless of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = detail::splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    const auto& z = detail::kZiggurat;
    for (;;) {
      const std::uint64_t bits = next_u64();
      const double u = 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
      const int i = static_cast<int>(bits & 0xFF);
      if (std::abs(u) < z.ratio[i]) return u * z.x[i];
      if (i == 0) return normal_tail(u < 0.0);
      const double x = u * z.x[i];
      const double f0 = std::exp(-0.5 * (z.x[i] * z.x[i] - x * x));
      const double f1 = std::exp(-0.5 * (z.x[i + 1] * z.x[i + 1] - x * x));
      if (f1 + uniform() * (f0 - f1) < 1.0) return x;
    }
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

  Rng substream(std::string_view tag, std::uint64_t index) const {
    std::uint64_t sm = seed_ ^ detail::fnv1a(tag);
    std::uint64_t mixed = detail::splitmix64(sm);
    sm = mixed ^ (index * 0xd1b54a32d192ed03ULL);
    return Rng(detail::splitmix64(sm));
  }

 private:
  double normal_tail(bool negative) {
    constexpr double r = detail::ZigguratTables::kTailStart;
    double x, y;
    do {
      x = std::log(1.0 - uniform()) / r;
      y = std::log(1.0 - uniform());
    } while (-2.0 * y < x * x);
    return negative ? x - r : r - x;
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
};

/// log(sum(exp(v))) shifted by max(v). Returns -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw ConfigError("log_sum_exp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isnan(m)) return m;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw ConfigError("softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) throw NumericError("softmax: non-finite maximum");
  std::vector<double> out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

/// Equal-width histogram. Bins are [edge_i, edge_{i+1}) except the last,
/// which is closed.
struct Histogram {
  std::vector<double> edges;
  std::vector<double> mass;

  std::size_t bins() const noexcept { return mass.size(); }
};

/// Equal-width edges over [lo, hi]; the last edge is exactly hi.
inline std::vector<double> histogram_edges(std::size_t n_bins, double lo, double hi) {
  if (n_bins < 1) throw ConfigError("make_histogram: n_bins must be >= 1");
  if (!(hi > lo)) throw ConfigError("make_histogram: requires hi > lo");
  std::vector<double> edges(n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) edges[i] = lo + width * static_cast<double>(i);
  edges[n_bins] = hi;
  return edges;
}

/// Bin of v under the half-open convention; out-of-range values clamp to
/// the boundary bins.
inline std::size_t histogram_bin(double v, const std::vector<double>& edges) {
  const auto last = static_cast<std::ptrdiff_t>(edges.size()) - 2;
  const double lo = edges.front(), hi = edges.back();
  if (!(v > lo)) return 0;
  if (!(v < hi)) return static_cast<std::size_t>(last);
  const double width = (hi - lo) / static_cast<double>(last + 1);
  auto idx = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
  idx = std::clamp<std::ptrdiff_t>(idx, 0, last);
  // floor() can land one bin off near an edge; settle against the stored edges.
  while (idx > 0 && v < edges[static_cast<std::size_t>(idx)]) --idx;
  while (idx < last && v >= edges[static_cast<std::size_t>(idx + 1)]) ++idx;
  return static_cast<std::size_t>(idx);
}

/// Values outside [lo, hi] are clamped into the boundary bins so histograms
/// built over a shared range never lose mass.
inline Histogram make_histogram(std::span<const double> values, std::size_t n_bins, double lo,
                                double hi) {
  if (values.empty()) throw ConfigError("make_histogram: empty values");
  Histogram h;
  h.edges = histogram_edges(n_bins, lo, hi);
  std::vector<std::size_t> counts(n_bins, 0);
  for (double v : values) ++counts[histogram_bin(v, h.edges)];
  h.mass.resize(n_bins);
  const double total = static_cast<double>(values.size());
  for (std::size_t i = 0; i < n_bins; ++i) h.mass[i] = static_cast<double>(counts[i]) / total;
  return h;
}

/// Half the L1 distance between two probability vectors.
inline double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return std::min(1.0, 0.5 * s);
}

inline double total_variation(const Histogram& a, const Histogram& b) {
  if (a.edges != b.edges) throw ConfigError("total_variation: histograms use different bins");
  return total_variation(a.mass, b.mass);
}

/// Worker count: IWSM_THREADS if set, otherwise hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("IWSM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers with static chunks.
/// Callers write results by index, so output never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (n == 0) return;
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace iwsm
