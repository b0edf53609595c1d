#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "iwsm/energy.hpp"

using namespace iwsm;

namespace {

std::vector<double> to_vec(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Naive log-sum-exp mixture energy in extended precision.
long double naive_mixture(const Points& means, double var, std::span<const double> x) {
  long double best = -INFINITY;
  std::vector<long double> q(static_cast<std::size_t>(means.rows()));
  for (Eigen::Index k = 0; k < means.rows(); ++k) {
    long double sq = 0;
    for (Eigen::Index j = 0; j < means.cols(); ++j) {
      const long double u = x[j] - means(k, j);
      sq += u * u;
    }
    q[k] = -sq / (2.0L * var);
    best = std::max(best, q[k]);
  }
  long double s = 0;
  for (long double v : q) s += std::exp(v - best);
  return -(best + std::log(s));
}

double max_fd_rel_error(const EnergyFn& f, std::span<const double> x, double h = 1e-5) {
  const Vector g = f.grad(x);
  std::vector<double> p(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double keep = p[j];
    p[j] = keep + h;
    const double ep = f.energy(p);
    p[j] = keep - h;
    const double em = f.energy(p);
    p[j] = keep;
    const double fd = (ep - em) / (2.0 * h);
    const double rel = std::abs(fd - g[static_cast<Eigen::Index>(j)]) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

Points random_config(Rng& rng, std::size_t n, std::size_t sd, double spread) {
  // Rejection keeps pair distances away from the singular / steep region.
  for (;;) {
    Points p(1, static_cast<Eigen::Index>(n * sd));
    for (Eigen::Index j = 0; j < p.cols(); ++j) p(0, j) = rng.uniform(-spread, spread);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t k = i + 1; k < n && ok; ++k) {
        double d2 = 0;
        for (std::size_t c = 0; c < sd; ++c) {
          const double u = p(0, i * sd + c) - p(0, k * sd + c);
          d2 += u * u;
        }
        ok = std::sqrt(d2) > 0.8;
      }
    if (ok) return p;
  }
}

}  // namespace

TEST(DoubleWell, AllPairsAtRestDistanceGiveZero) {
  DoubleWellSpec s;
  s.space_dim = 3;
  const double d0 = s.d0;
  // Regular tetrahedron with edge d0.
  const double a = d0 / std::sqrt(8.0);
  const std::vector<double> x{a, a, a, a, -a, -a, -a, a, -a, -a, -a, a};
  EnergyFn f(s);
  EXPECT_NEAR(f.energy(x), 0.0, 1e-12);
}

TEST(DoubleWell, SinglePairHandValue) {
  DoubleWellSpec s;
  s.n_particles = 2;
  EnergyFn f(s);
  const std::vector<double> x{0.0, 0.0, s.d0 + 1.0, 0.0};
  EXPECT_NEAR(f.energy(x), -1.55, 1e-12);
}

TEST(DoubleWell, CoincidentParticlesStayFinite) {
  EnergyFn f{DoubleWellSpec{}};
  const std::vector<double> x(8, 0.0);
  EXPECT_TRUE(std::isfinite(f.energy(x)));
}

TEST(LennardJones, PairAtMinimumContributesZero) {
  LennardJonesSpec s;
  s.n_particles = 2;
  s.c_osc = 0.0;
  EnergyFn f(s);
  const std::vector<double> x{0.0, 0.0, 0.0, s.r_m, 0.0, 0.0};
  EXPECT_NEAR(f.energy(x), 0.0, 1e-14);
}

TEST(LennardJones, OscillatorTermAroundCentreOfMass) {
  LennardJonesSpec s;
  s.n_particles = 2;
  EnergyFn f(s);
  // Pair term is zero at r_m; each particle sits r_m/2 from the centre.
  const std::vector<double> x{3.0, 1.0, 2.0, 3.0 + s.r_m, 1.0, 2.0};
  EXPECT_NEAR(f.energy(x), s.c_osc * 0.25 * s.r_m * s.r_m, 1e-14);
}

TEST(LennardJones, CoincidentParticlesAreSingular) {
  LennardJonesSpec s;
  s.n_particles = 2;
  EnergyFn f(s);
  const std::vector<double> x{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  EXPECT_THROW(f.energy(x), NumericError);
  Points batch = Eigen::Map<const Points>(x.data(), 1, 6);
  Vector e;
  Points g;
  f.evaluate(batch, e, &g);
  EXPECT_TRUE(std::isinf(e[0]));
  EXPECT_TRUE(g.isZero());
}

TEST(Gmm, SingleComponentStationaryAtMean) {
  GmmSpec g = GmmSpec::make(1, 3);
  EnergyFn f(g);
  const std::vector<double> mu = to_vec(g.means.row(0).transpose());
  const Vector grad = f.grad(mu);
  EXPECT_NEAR(grad.norm(), 0.0, 1e-14);
}

TEST(Gmm, MeansReproducibleAndInRange) {
  const GmmSpec a = GmmSpec::make(40, 0), b = GmmSpec::make(40, 0), c = GmmSpec::make(40, 1);
  EXPECT_EQ(a.means, b.means);
  EXPECT_NE(a.means, c.means);
  EXPECT_EQ(a.means.rows(), 40);
  EXPECT_DOUBLE_EQ(a.cov_scale, 40.0);
  EXPECT_LE(a.means.cwiseAbs().maxCoeff(), 40.0);
}

TEST(Gmm, EnergyMatchesNaiveLogSumExp) {
  for (std::size_t m : {2u, 40u, 120u}) {
    const GmmSpec g = GmmSpec::make(m, 5);
    EnergyFn f(g);
    Rng rng(m);
    for (int i = 0; i < 50; ++i) {
      const double r = 1.5 * static_cast<double>(m);
      const std::vector<double> x{rng.uniform(-r, r), rng.uniform(-r, r)};
      const double want = static_cast<double>(naive_mixture(g.means, g.cov_scale, x));
      EXPECT_NEAR(f.energy(x), want, 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(Gmm, BatchedKernelMatchesPointwiseIncludingPruning) {
  const GmmSpec g = GmmSpec::make(80, 2);
  EnergyFn f(g);
  Rng rng(12);
  // Widely spread rows in one batch exercise the pruning bound.
  Points x(37, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < 2; ++j) x(i, j) = rng.uniform(-400.0, 400.0);
  x.row(3) << 1e4, -1e4;
  Vector e;
  Points gr;
  f.evaluate(x, e, &gr);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const std::vector<double> xi{x(i, 0), x(i, 1)};
    const double want = static_cast<double>(naive_mixture(g.means, g.cov_scale, xi));
    EXPECT_NEAR(e[i], want, 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST(Gmm, CentrallySymmetricMeansGiveEvenEnergy) {
  GmmSpec g;
  g.n_components = 4;
  g.cov_scale = 2.5;
  g.means.resize(4, 2);
  g.means << 1.0, 2.0, -1.0, -2.0, 3.0, -0.5, -3.0, 0.5;
  EnergyFn f(g);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x{rng.uniform(-6, 6), rng.uniform(-6, 6)};
    const std::vector<double> nx{-x[0], -x[1]};
    EXPECT_NEAR(f.energy(x), f.energy(nx), 1e-12);
  }
}

TEST(Gauss, GradientIsIdentity) {
  EnergyFn f(GaussSpec{3});
  const std::vector<double> x{0.3, -1.2, 4.0};
  const Vector g = f.grad(x);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(g[j], x[j]);
  EXPECT_DOUBLE_EQ(f.energy(x), 0.5 * (0.09 + 1.44 + 16.0));
}

TEST(Gradients, MatchCentralFiniteDifferences) {
  Rng rng(77);
  {
    GmmSpec g2 = GmmSpec::make(2, 9, 2);
    g2.cov_scale = 1.0;
    EnergyFn f(g2);  // m=2 with unit variance: curvature varies noticeably
    for (int i = 0; i < 20; ++i) {
      const std::vector<double> x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
      EXPECT_LT(max_fd_rel_error(f, x), 1e-5);
    }
  }
  {
    EnergyFn f(GmmSpec::make(40, 0), 50.0);
    for (int i = 0; i < 20; ++i) {
      const std::vector<double> x{rng.uniform(-50, 50), rng.uniform(-50, 50)};
      EXPECT_LT(max_fd_rel_error(f, x), 1e-5);
    }
  }
  {
    EnergyFn f(Bimodal1dSpec{});
    for (int i = 0; i < 20; ++i) {
      const std::vector<double> x{rng.uniform(-5, 5)};
      EXPECT_LT(max_fd_rel_error(f, x), 1e-5);
    }
  }
  {
    EnergyFn f{DoubleWellSpec{}};
    for (int i = 0; i < 20; ++i) {
      const Points p = random_config(rng, 4, 2, 4.0);
      const std::vector<double> x(p.data(), p.data() + p.size());
      EXPECT_LT(max_fd_rel_error(f, x, 1e-6), 1e-5);
    }
  }
  {
    LennardJonesSpec s;
    s.n_particles = 5;
    EnergyFn f(s);
    for (int i = 0; i < 20; ++i) {
      const Points p = random_config(rng, 5, 3, 1.5);
      const std::vector<double> x(p.data(), p.data() + p.size());
      EXPECT_LT(max_fd_rel_error(f, x, 1e-7), 1e-5);
    }
  }
}

TEST(ParticleSystems, TranslationInvariance) {
  Rng rng(3);
  const EnergyFn dw{DoubleWellSpec{}};
  LennardJonesSpec ls;
  ls.n_particles = 6;
  const EnergyFn lj(ls);
  for (const EnergyFn* f : {&dw, &lj}) {
    const auto [n, sd] = f->particle_shape();
    for (int rep = 0; rep < 10; ++rep) {
      const Points p = random_config(rng, n, sd, 2.0);
      std::vector<double> x(p.data(), p.data() + p.size()), y = x;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < sd; ++k) y[i * sd + k] += 0.7 * static_cast<double>(k + 1) - 2.1;
      EXPECT_NEAR(f->energy(x), f->energy(y), 1e-9 * std::max(1.0, std::abs(f->energy(x))));
    }
  }
}

TEST(EnergyFn, NormalizedCoordinatesAndOffset) {
  const EnergyFn f(GmmSpec::make(40, 0), 50.0);
  Rng rng(10);
  Points y(16, 2);
  for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1);
  Vector ey, ex;
  Points gy, gx;
  f.evaluate_normalized(y, ey, &gy);
  f.evaluate(50.0 * y, ex, &gx);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    EXPECT_DOUBLE_EQ(ey[i], ex[i]);
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(gy(i, j), 50.0 * gx(i, j), 1e-12 * std::abs(50.0 * gx(i, j)) + 1e-15);
  }
  const EnergyFn g = f.with_offset(3.25);
  Vector eo;
  Points go;
  g.evaluate_normalized(y, eo, &go);
  for (Eigen::Index i = 0; i < y.rows(); ++i) EXPECT_DOUBLE_EQ(eo[i], ey[i] + 3.25);
  EXPECT_EQ(go, gy);
}

TEST(EnergyFn, DimensionChecks) {
  const EnergyFn f(GaussSpec{2});
  EXPECT_THROW(f.energy(std::vector<double>{1.0}), ConfigError);
  EXPECT_THROW(EnergyFn(GaussSpec{2}, 0.0), ConfigError);
}

TEST(Exp8, WithinTwoUlpOfStdExp) {
  Rng rng(6);
  double worst = 0.0;
  for (int block = 0; block < 20000; ++block) {
    detail::v8d x;
    for (int l = 0; l < 8; ++l) x[l] = block < 10000 ? rng.uniform(-708.0, 0.0) : rng.uniform(-2.0, 0.0);
    const detail::v8d y = detail::exp8(x);
    for (int l = 0; l < 8; ++l) {
      const double want = std::exp(x[l]);
      worst = std::max(worst, std::abs(y[l] - want) / (std::nextafter(want, INFINITY) - want));
    }
  }
  EXPECT_LE(worst, 2.0);
  detail::v8d z{};
  z[0] = -1e6;
  z[1] = 0.0;
  const detail::v8d r = detail::exp8(z);
  EXPECT_GE(r[0], 0.0);
  EXPECT_LT(r[0], 1e-300);
  EXPECT_EQ(r[1], 1.0);
}

TEST(ReferenceSample, SingleComponentMean) {
  const GmmSpec g = GmmSpec::make(1, 4);
  const EnergyFn f(g);
  Rng rng(1);
  const std::size_t n = 20000;
  const SampleSet s = reference_sample(f, n, rng);
  const double tol = 3.0 * std::sqrt(g.cov_scale / static_cast<double>(n));
  for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(s.points.col(j).mean(), g.means(0, j), tol);
}

TEST(ReferenceSample, GaussVarianceAndDeterminism) {
  const EnergyFn f(GaussSpec{1});
  Rng a(21), b(21);
  const SampleSet s = reference_sample(f, 100000, a);
  const double mean = s.points.col(0).mean();
  const double var = (s.points.col(0).array() - mean).square().mean();
  EXPECT_GE(var, 0.98);
  EXPECT_LE(var, 1.02);
  EXPECT_EQ(reference_sample(f, 100000, b).points, s.points);
}

TEST(ReferenceSample, UnsupportedForParticleSystems) {
  Rng rng(0);
  EXPECT_THROW(reference_sample(EnergyFn{DoubleWellSpec{}}, 10, rng), ConfigError);
  EXPECT_THROW(reference_sample(EnergyFn{GaussSpec{1}}, 0, rng), ConfigError);
}
