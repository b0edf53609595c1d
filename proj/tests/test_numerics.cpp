#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "iwsm/numerics.hpp"

using namespace iwsm;

namespace {

// Vigna's reference xoshiro256** and splitmix64, written out independently.
struct RefXoshiro {
  std::uint64_t s[4];
  explicit RefXoshiro(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& v : s) {
      std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      v = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(Splitmix, PublishedSequenceForSeedZero) {
  std::uint64_t state = 0;
  EXPECT_EQ(detail::splitmix64(state), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(detail::splitmix64(state), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(detail::splitmix64(state), 0x06c45d188009454fULL);
  EXPECT_EQ(detail::splitmix64(state), 0xf88bb8a8724c81ecULL);
}

TEST(Rng, MatchesReferenceXoshiro) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    Rng rng(seed);
    RefXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(rng.next_u64(), ref.next());
  }
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_EQ(a.normal(), b.normal());
  }
}

TEST(Rng, SubstreamsDependOnSeedAndKeyOnly) {
  Rng a(3);
  const Rng fresh(3);
  for (int i = 0; i < 17; ++i) a.next_u64();
  Rng s1 = a.substream("x", 5), s2 = fresh.substream("x", 5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(s1.next_u64(), s2.next_u64());

  std::set<std::uint64_t> firsts;
  for (const char* tag : {"a", "b", "c"})
    for (std::uint64_t i = 0; i < 100; ++i) firsts.insert(fresh.substream(tag, i).next_u64());
  EXPECT_EQ(firsts.size(), 300u);
}

TEST(Rng, UniformRangeAndMean) {
  Rng rng(11);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Rng, BelowIsUniform) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi2, 22.46);  // chi-square(6) 0.999 quantile
  EXPECT_THROW(rng.below(0), ConfigError);
}

TEST(Ziggurat, TablesAreMonotoneAndCloseTheArea) {
  const auto& z = detail::kZiggurat;
  EXPECT_DOUBLE_EQ(z.x[1], detail::ZigguratTables::kTailStart);
  for (int i = 1; i < detail::ZigguratTables::kLayers; ++i) EXPECT_GT(z.x[i], z.x[i + 1]);
  // The top layer ends at the mode: f(x[255]) * x[255] + V == 1 up to the
  // precision of the published constant.
  const double top = z.x[255];
  EXPECT_NEAR(top * (1.0 - std::exp(-0.5 * top * top)), detail::ZigguratTables::kLayerArea, 1e-9);
}

TEST(Ziggurat, MomentsAndKolmogorovSmirnov) {
  Rng rng(2024);
  const int n = 400000;
  std::vector<double> v(n);
  rng.fill_normal(v);
  double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
  for (double x : v) m1 += x, m2 += x * x, m3 += x * x * x, m4 += x * x * x * x;
  m1 /= n, m2 /= n, m3 /= n, m4 /= n;
  EXPECT_NEAR(m1, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(m2, 1.0, 4.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(m3, 0.0, 4.0 * std::sqrt(15.0 / n));
  EXPECT_NEAR(m4, 3.0, 4.0 * std::sqrt(96.0 / n));

  std::sort(v.begin(), v.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double c = normal_cdf(v[i]);
    d = std::max({d, std::abs(c - static_cast<double>(i) / n), std::abs(c - static_cast<double>(i + 1) / n)});
  }
  EXPECT_LT(d, 1.95 / std::sqrt(n));  // KS critical value at 0.1%
}

TEST(Ziggurat, TailMassBeyondBaseLayer) {
  Rng rng(99);
  const int n = 2000000;
  int tail = 0;
  for (int i = 0; i < n; ++i) tail += std::abs(rng.normal()) > detail::ZigguratTables::kTailStart;
  const double p = std::erfc(detail::ZigguratTables::kTailStart / std::sqrt(2.0));
  EXPECT_NEAR(static_cast<double>(tail) / n, p, 5.0 * std::sqrt(p / n));
}

TEST(LogSumExp, HandCases) {
  const std::vector<double> zeros{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp(zeros), std::log(2.0), 1e-15);
  const std::vector<double> big{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(big), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> neg{-1.0, -2.0, -3.0};
  const long double direct = std::log(std::exp(-1.0L) + std::exp(-2.0L) + std::exp(-3.0L));
  EXPECT_NEAR(log_sum_exp(neg), static_cast<double>(direct), 1e-15);
  EXPECT_NEAR(log_sum_exp(neg), -0.5924, 1e-4);
  EXPECT_THROW(log_sum_exp(std::vector<double>{}), ConfigError);
}

TEST(LogSumExp, ShiftInvariance) {
  Rng rng(1);
  std::vector<double> v(50);
  for (double& x : v) x = rng.uniform(-30.0, 30.0);
  for (double c : {-500.0, -3.0, 0.5, 250.0}) {
    std::vector<double> w = v;
    for (double& x : w) x += c;
    EXPECT_NEAR(log_sum_exp(w), log_sum_exp(v) + c, 1e-12 * std::max(1.0, std::abs(c)));
  }
}

TEST(Softmax, HandCases) {
  const auto u = softmax(std::vector<double>{0.0, 0.0, 0.0});
  for (double p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const double c = -4.2;
  const auto r = softmax(std::vector<double>{c, c + std::log(3.0)});
  EXPECT_NEAR(r[0], 0.25, 1e-15);
  EXPECT_NEAR(r[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftAndPermutation) {
  Rng rng(8);
  std::vector<double> v(20);
  for (double& x : v) x = rng.uniform(-5.0, 5.0);
  std::vector<double> shifted = v;
  for (double& x : shifted) x += 7.0;
  const auto a = softmax(v), b = softmax(shifted);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);

  std::vector<double> rev(v.rbegin(), v.rend());
  const auto c = softmax(rev);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(c[i], a[v.size() - 1 - i]);
}

TEST(Histogram, HalfOpenBins) {
  const auto h = make_histogram(std::vector<double>(4, 0.5), 2, 0.0, 1.0);
  EXPECT_EQ(h.mass, (std::vector<double>{0.0, 1.0}));
  const auto s = make_histogram(std::vector<double>{0.1, 0.9}, 2, 0.0, 1.0);
  EXPECT_EQ(s.mass, (std::vector<double>{0.5, 0.5}));
  // The upper edge belongs to the last bin.
  const auto top = make_histogram(std::vector<double>{1.0}, 3, 0.0, 1.0);
  EXPECT_EQ(top.mass, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Histogram, UniformGridGivesEqualMass) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = (i + 0.5) / 100.0;
  const auto h = make_histogram(v, 10, 0.0, 1.0);
  for (double m : h.mass) EXPECT_NEAR(m, 0.1, 1e-15);
}

TEST(Histogram, ClampsOutOfRangeAndConservesMass) {
  const auto h = make_histogram(std::vector<double>{-5.0, 0.2, 3.0, 9.0}, 4, 0.0, 1.0);
  EXPECT_EQ(h.mass, (std::vector<double>{0.5, 0.0, 0.0, 0.5}));
  Rng rng(4);
  std::vector<double> v(1001);
  for (double& x : v) x = rng.normal();
  const auto g = make_histogram(v, 31, -2.0, 2.0);
  EXPECT_NEAR(std::accumulate(g.mass.begin(), g.mass.end(), 0.0), 1.0, 1e-12);
  for (std::size_t i = 0; i + 1 < g.edges.size(); ++i) EXPECT_LT(g.edges[i], g.edges[i + 1]);
}

TEST(Histogram, Errors) {
  EXPECT_THROW(make_histogram(std::vector<double>{}, 2, 0.0, 1.0), ConfigError);
  EXPECT_THROW(make_histogram(std::vector<double>{0.5}, 0, 0.0, 1.0), ConfigError);
  EXPECT_THROW(make_histogram(std::vector<double>{0.5}, 2, 1.0, 1.0), ConfigError);
}

TEST(TotalVariation, HandCase) {
  const std::vector<double> p{0.5, 0.3, 0.2}, q{0.2, 0.3, 0.5};
  EXPECT_NEAR(total_variation(p, q), 0.3, 1e-15);
  EXPECT_EQ(total_variation(p, p), 0.0);
}

TEST(ParallelFor, ResultsIndependentOfWorkerCount) {
  const std::size_t n = 1000;
  std::vector<double> a(n), b(n);
  const Rng root(17);
  parallel_for(n, 1, [&](std::size_t i) { a[i] = root.substream("p", i).normal(); });
  parallel_for(n, 7, [&](std::size_t i) { b[i] = root.substream("p", i).normal(); });
  EXPECT_EQ(a, b);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 63) throw NumericError("boom");
                            }),
               NumericError);
}
