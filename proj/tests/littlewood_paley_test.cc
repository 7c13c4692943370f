#include "pds/littlewood_paley.hpp"

#include "random_fields.hpp"

#include <gtest/gtest.h>

namespace pds {
namespace {

GTEST_TEST(LittlewoodPaley, CutoffShape) {
  for (CutoffKind k : {CutoffKind::Smoothstep3, CutoffKind::Smoothstep5, CutoffKind::Mollified}) {
    EXPECT_EQ(chi(0.3, k), 1.0);
    EXPECT_EQ(chi(1.0, k), 1.0);
    EXPECT_EQ(chi(2.0, k), 0.0);
    EXPECT_NEAR(chi(1.5, k), 0.5, 1e-15);
    double prev = 1.0;
    for (int i = 1; i < 100; ++i) {
      const double v = chi(1.0 + i / 100.0, k);
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
  // smoothstep order 5 has vanishing first and second derivatives at the ends
  const double h = 1e-4;
  EXPECT_NEAR((chi(1.0 + h) - 1.0) / h, 0.0, 1e-6);
  EXPECT_NEAR((chi(2.0 - h)) / h, 0.0, 1e-6);
}

GTEST_TEST(LittlewoodPaley, PartitionOfUnity) {
  for (int d = 1; d <= 3; ++d) {
    const int N = d == 1 ? 512 : (d == 2 ? 64 : 16);
    for (double L : {0.3, 1.0, 7.5}) {
      const FilterBank fb(make_grid(d, N, L));
      EXPECT_LE(fb.partition_residual(), 1e-12) << d << " " << L;
    }
  }
}

GTEST_TEST(LittlewoodPaley, BlockSupportAndReconstruction) {
  const GridPtr g = make_grid(1, 256, 8.0);
  const FilterBank fb(g);
  // |xi| = 2^j exactly: k = 8 * 2^j
  for (int j = -2; j <= 3; ++j) {
    const int k = static_cast<int>(std::ldexp(8.0, j));
    const SpectralField u = testing::single_mode(g, 1, {k});
    const SpectralField sum = fb.block(u, j) + fb.block(u, j - 1);
    EXPECT_LT((sum.c - u.c).norm(), 1e-14 * u.c.norm());
    EXPECT_LT((fb.block(u, j).c - u.c).norm(), 1e-14 * u.c.norm());
    EXPECT_LT(fb.block(u, j + 2).c.norm(), 1e-14 * u.c.norm());
    EXPECT_LT(fb.block(u, j - 2).c.norm(), 1e-14 * u.c.norm());
  }
  std::mt19937_64 rng(1);
  const SpectralField r = testing::random_field(g, 2, rng, [](double x) { return std::exp(-x); });
  SpectralField acc(g, 2);
  for (int j = fb.jmin(); j <= fb.jmax(); ++j) acc += fb.block(r, j);
  EXPECT_LE((acc.c - r.c).norm(), 1e-12 * r.c.norm());
}

GTEST_TEST(LittlewoodPaley, AlmostOrthogonality) {
  const GridPtr g = make_grid(2, 64, 4.0);
  const FilterBank fb(g);
  for (int j = fb.jmin(); j <= fb.jmax(); ++j)
    for (int jp = j + 2; jp <= fb.jmax(); ++jp)
      EXPECT_EQ((fb.mask(j) * fb.mask(jp)).abs().maxCoeff(), 0.0);
}

GTEST_TEST(LittlewoodPaley, SingleModeNorm) {
  const GridPtr g = make_grid(1, 512, 4.0);
  const FilterBank fb(g);
  for (int k : {3, 7, 19, 45, 100}) {
    SpectralField u = testing::single_mode(g, 1, {k});
    u = u * (1.0 / u.l2());
    const double rho = k / 4.0;
    for (double s : {-1.0, -0.5, 0.5, 1.5}) {
      const double b = fb.besov(u, s);
      const double ratio = b / std::pow(rho, s);
      EXPECT_GE(ratio, std::pow(2.0, -std::abs(s)) * (1 - 1e-12)) << k << " " << s;
      EXPECT_LE(ratio, std::pow(2.0, std::abs(s)) * (1 + 1e-12)) << k << " " << s;
      EXPECT_LE(fb.besov(u, s, 2, true), b * (1 + 1e-14));
    }
  }
}

GTEST_TEST(LittlewoodPaley, SupBelowSum) {
  const GridPtr g = make_grid(2, 32, 2.0);
  const FilterBank fb(g);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const SpectralField u = testing::random_field(g, 3, rng, [](double r) { return 1.0 / (1 + r * r); });
    for (int p : {1, 2, kInf})
      for (double s : {-1.0, 0.0, 1.0}) EXPECT_LE(fb.besov(u, s, p, true), fb.besov(u, s, p, false) * (1 + 1e-14));
  }
}

GTEST_TEST(LittlewoodPaley, LowHighSplit) {
  const GridPtr g = make_grid(1, 256, 16.0);
  const FilterBank fb(g);
  std::mt19937_64 rng(5);
  const SpectralField u = testing::random_field(g, 2, rng, [](double r) { return std::exp(-r); });
  for (double s : {-0.5, 0.5, 1.5}) {
    for (double th : {0.25, 1.0, 4.0})
      EXPECT_NEAR(fb.lf(u, s, th) + fb.hf(u, s, th), fb.besov(u, s), 1e-12 * fb.besov(u, s));
    // threshold below the grid: everything is high frequency
    EXPECT_EQ(fb.lf(u, s, 1e-3), 0.0);
    EXPECT_NEAR(fb.hf(u, s, 1e-3), fb.besov(u, s), 1e-14 * fb.besov(u, s));
  }
  EXPECT_NEAR(fb.hybrid(u, 0.5, 1.5), fb.lf(u, 0.5) + fb.hf(u, 1.5), 1e-14);
}

// g(x) = exp(-|x|^2) sampled on a torus; the dilate g(eps x) with eps = 1/m lives on m times the period.
SpectralField gaussian(const GridPtr& g, double eps) {
  Mat u(g->size(), 1);
  const double c = 0.5 * g->period();
  for (Eigen::Index m = 0; m < g->size(); ++m) {
    const Vec x = g->point(m).array() - c;
    u(m, 0) = std::exp(-eps * eps * x.squaredNorm()) * (1 + 0.3 * std::sin(eps * x(0)));
  }
  return zero_mean(from_physical(g, u));
}

GTEST_TEST(LittlewoodPaley, ScalingLaws) {
  for (int d : {1, 2}) {
    const int N = d == 1 ? 256 : 64;
    const GridPtr g1 = make_grid(d, N, 4.0);
    const FilterBank f1(g1);
    const SpectralField z = gaussian(g1, 1.0);
    for (int m : {2, 3, 8}) {
      const double eps = 1.0 / m;
      const GridPtr gm = make_grid(d, N * m, 4.0 * m);
      const FilterBank fm(gm);
      const SpectralField ze = gaussian(gm, eps);
      for (double s : {-0.5, 0.5, 1.0}) {
        const double pred = std::pow(eps, s - d / 2.0) * f1.besov(z, s);
        const double got = fm.besov(ze, s);
        EXPECT_GT(got / pred, 0.5);
        EXPECT_LT(got / pred, 2.0);
        if (m == 8) EXPECT_NEAR(got / pred, 1.0, 1e-6);
        const double pl = std::pow(eps, s - d / 2.0) * f1.lf(z, s, 1.0 / eps);
        const double gl = fm.lf(ze, s, 1.0);
        EXPECT_GT(gl / pl, 0.5);
        EXPECT_LT(gl / pl, 2.0);
      }
    }
  }
}

GTEST_TEST(LittlewoodPaley, BernsteinPureMode) {
  const GridPtr g = make_grid(1, 256, 2.0);
  const FilterBank fb(g);
  const SpectralField u = testing::single_mode(g, 1, {10});
  const BernsteinReport r = bernstein_check(fb, u, 5.0, 1, 2, 2);
  EXPECT_NEAR(r.direct, 1.0, 1e-12);
  EXPECT_NEAR(r.reverse, 1.0, 1e-12);
  EXPECT_THROW(bernstein_check(fb, u, 1.0, 1, 2, 2), InvalidArgument);
}

GTEST_TEST(LittlewoodPaley, BernsteinRandomAnnulus) {
  const GridPtr g = make_grid(1, 2048, 32.0);
  const FilterBank fb(g);
  std::mt19937_64 rng(8);
  for (int j = -3; j <= 3; ++j) {
    const double lam = std::ldexp(1.0, j);
    for (int t = 0; t < 5; ++t) {
      const SpectralField u = testing::random_band_field(g, 1, rng, 0.5 * lam, 2.0 * lam);
      const BernsteinReport r = bernstein_check(fb, u, lam, 1, 2, 2);
      EXPECT_GE(r.reverse, 0.5);
      EXPECT_LE(r.reverse, 2.0);
      const BernsteinReport r0 = bernstein_check(fb, u, lam, 0, 2, kInf);
      EXPECT_LE(r0.direct, 4.0);
    }
  }
}

GTEST_TEST(LittlewoodPaley, Multipliers) {
  const GridPtr g = make_grid(2, 32, 1.0);
  const FilterBank fb(g);
  std::mt19937_64 rng(10);
  const SpectralField u = testing::random_field(g, 2, rng, [](double r) { return 1.0 / (1 + r); });
  const SpectralField id = multiplier_apply(u, [](const Vec&) { return cdouble(1.0); });
  EXPECT_LT((id.c - u.c).norm(), 1e-15);
  const SpectralField back = fractional_derivative(fractional_derivative(u, 2.0), -2.0);
  EXPECT_LT((back.c - u.c).norm(), 1e-13 * u.c.norm());
  // ||M(D) Delta_j u|| <= max_{annulus} |M| ||Delta_j u|| with M = |xi|^gamma
  for (double gam : {-1.0, 1.0, 2.0}) {
    const SpectralField mu = fractional_derivative(u, gam);
    const Vec bu = fb.block_l2(u), bm = fb.block_l2(mu);
    for (int j = fb.jmin(); j <= fb.jmax(); ++j) {
      const double C = std::max(std::pow(2.0, (j - 1) * gam), std::pow(2.0, (j + 1) * gam));
      EXPECT_LE(bm(j - fb.jmin()), C * bu(j - fb.jmin()) * (1 + 1e-12));
    }
  }
}

GTEST_TEST(LittlewoodPaley, CutoffEquivalence) {
  const GridPtr g = make_grid(1, 512, 8.0);
  const FilterBank f5(g), f3(g, CutoffKind::Smoothstep3), fm(g, CutoffKind::Mollified);
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const SpectralField u = testing::random_field(g, 1, rng, [](double r) { return std::exp(-0.2 * r); });
    for (double s : {-1.0, 0.5, 2.0}) {
      const double a = f5.besov(u, s);
      EXPECT_GT(f3.besov(u, s) / a, 0.5);
      EXPECT_LT(f3.besov(u, s) / a, 2.0);
      EXPECT_GT(fm.besov(u, s) / a, 0.5);
      EXPECT_LT(fm.besov(u, s) / a, 2.0);
    }
  }
}

GTEST_TEST(LittlewoodPaley, BesovDominatesSobolev) {
  const GridPtr g = make_grid(1, 256, 4.0);
  const FilterBank fb(g);
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const SpectralField u = testing::random_band_field(g, 1, rng, 0.25, 20.0);
    for (double s : {-1.0, 0.0, 1.0}) {
      const double hs = fractional_derivative(u, s).l2();
      EXPECT_GE(fb.besov(u, s), 0.25 * hs);
    }
  }
}

GTEST_TEST(LittlewoodPaley, ParsevalMatchesGrid) {
  const GridPtr g = make_grid(2, 32, 1.5);
  const FilterBank fb(g);
  std::mt19937_64 rng(14);
  const SpectralField u = testing::random_field(g, 2, rng, [](double r) { return std::exp(-r); });
  EXPECT_NEAR(fb.lp_norm(u, 2), u.l2(), 1e-12 * u.l2());
  const Vec b2 = fb.block_l2(u);
  for (int j = fb.jmin(); j <= fb.jmax(); ++j)
    EXPECT_NEAR(fb.lp_norm(fb.block(u, j), 2), b2(j - fb.jmin()), 1e-12 * u.l2());
}

}  // namespace
}  // namespace pds
