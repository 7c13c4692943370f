#include "pds/lyapunov_certificate.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include "random_fields.hpp"
#include "random_systems.hpp"

#include <gtest/gtest.h>

namespace pds {
namespace {

CVec random_z(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> nd;
  CVec z(n);
  for (int i = 0; i < n; ++i) z(i) = cdouble(nd(rng), nd(rng));
  return z;
}

Vec random_direction(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> nd;
  Vec w(d);
  for (int i = 0; i < d; ++i) w(i) = nd(rng);
  return w / w.norm();
}

const LyapunovCertificate& euler1() {
  static const LyapunovCertificate c = construct(build_linearized_euler(1, 1.0));
  return c;
}

GTEST_TEST(PositivityConstant, Values) {
  EXPECT_NEAR(positivity_constant(2.0 * Mat::Identity(3, 3)), 0.5, 1e-15);
  Mat D = Eigen::Vector3d(1.0, 2.0, 4.0).asDiagonal();
  EXPECT_NEAR(positivity_constant(D), 0.25, 1e-14);
  // brute force on a nonsymmetric coercive block
  Mat L(2, 2);
  L << 1.0, 0.7, -0.3, 2.0;
  double best = 1e300;
  for (int i = 0; i < 20000; ++i) {
    const double th = kPi * i / 20000.0;
    const Vec e = Eigen::Vector2d(std::cos(th), std::sin(th));
    best = std::min(best, e.dot(L * e) / (L * e).squaredNorm());
  }
  EXPECT_NEAR(positivity_constant(L), best, 1e-7);
  Mat bad(1, 1);
  bad << -1.0;
  EXPECT_THROW(positivity_constant(bad), InvalidArgument);
}

GTEST_TEST(LyapunovCertificate, EulerOneDimension) {
  const LyapunovCertificate& c = euler1();
  ASSERT_EQ(c.epsilons.size(), 2);
  EXPECT_EQ(c.epsilons(0), 1.0);
  EXPECT_GT(c.epsilons(1), 0.0);
  EXPECT_LT(c.epsilons(1), 1.0);
  EXPECT_NEAR(c.kappa, 1.0, 1e-14);
  EXPECT_LE(c.max_residual, 1e-10);
  EXPECT_GE(c.h_min, 0.5);
  EXPECT_LE(c.h_max, 2.0);
  EXPECT_GT(c.n_min, 0.0);
  EXPECT_EQ(c.c_decay, c.n_min / 4);
  EXPECT_NEAR(n_omega(c, Vec::Constant(1, 1.0)), n_omega(c, Vec::Constant(1, -1.0)), 1e-15);
  // B A^2 = A^2 B: the single cross term suffices, nothing beyond eps_1 exists for n = 2
  const CMat A = c.A_omega(Vec::Constant(1, 1.0));
  EXPECT_LT((c.Bw * A * A - A * A * c.Bw).norm(), 1e-15);
}

GTEST_TEST(LyapunovCertificate, EulerFrictionScaling) {
  for (double f : {0.2, 5.0}) {
    const LyapunovCertificate c = construct(build_linearized_euler(1, f));
    EXPECT_NEAR(c.kappa, 1.0 / f, 1e-14);
    // normalized problem is independent of f
    EXPECT_NEAR(c.n_min, euler1().n_min, 1e-12);
  }
}

GTEST_TEST(LyapunovCertificate, HigherDimensionsAndIsentropic) {
  for (int d : {2, 3}) {
    const LyapunovCertificate c = construct(build_linearized_euler(d, 1.0));
    EXPECT_EQ(c.epsilons.size(), d + 1);
    EXPECT_LE(c.max_residual, 1e-10);
    EXPECT_GT(c.n_min, 0.0);
    for (int l = 1; l < d + 1; ++l) EXPECT_LT(c.epsilons(l), c.epsilons(l - 1));
  }
  const LyapunovCertificate ci = construct(build_isentropic_euler(2, 1.4, 1.0, 1.0, 0.5));
  EXPECT_NEAR(ci.kappa, 0.5, 1e-14);
  EXPECT_GT(ci.n_min, 0.0);
}

GTEST_TEST(LyapunovCertificate, SkFailureRejected) {
  EXPECT_THROW(construct(build_sk_counterexample(1)), NumericalFailure);
  EXPECT_THROW(construct(build_sk_counterexample(2)), NumericalFailure);
}

GTEST_TEST(LyapunovCertificate, FullRankDamping) {
  std::vector<Mat> base{Mat::Zero(3, 3)};
  base[0](0, 1) = base[0](1, 0) = 1.0;
  base[0](1, 2) = base[0](2, 1) = -0.5;
  const LyapunovCertificate c = construct(make_linear_system(base, Mat::Identity(3, 3), 0));
  // N_omega >= eps_0 lambda_min(B* B) = 1
  EXPECT_GE(c.n_min, 1.0 - 1e-12);
  EXPECT_NEAR(c.c_decay, 0.25, 0.25 * 3 * c.epsilons(1));
}

GTEST_TEST(LyapunovCertificate, RandomStructuredSystems) {
  std::mt19937_64 rng(21);
  int built = 0;
  for (int t = 0; t < 6; ++t) {
    const SystemSpec s = testing::random_structured_system(rng, 1 + t % 2, 1 + (t / 2) % 2, 1 + t % 3);
    if (!sk_condition(s).holds) continue;
    const LyapunovCertificate c = construct(s);
    EXPECT_LE(c.max_residual, 1e-10 * std::pow(c.Bw.operatorNorm(), 2));
    EXPECT_GT(c.n_min, 0.0);
    ++built;
  }
  EXPECT_GT(built, 0);
}

GTEST_TEST(FunctionalValue, TrivialCases) {
  const LyapunovCertificate& c = euler1();
  EXPECT_EQ(functional_value(c, 0.7, Vec::Constant(1, 1.0), CVec::Zero(2)), 0.0);
  const CMat H = detail::functional_matrix(c.epsilons, CMat::Zero(2, 2), c.A_omega(Vec::Constant(1, 1.0)), 0.3);
  EXPECT_EQ((H - CMat::Identity(2, 2)).norm(), 0.0);
  EXPECT_THROW(functional_value(c, 0.0, Vec::Constant(1, 1.0), CVec::Ones(2)), InvalidArgument);
}

GTEST_TEST(FunctionalValue, EquivalenceRandom) {
  std::mt19937_64 rng(3);
  const LyapunovCertificate c2 = construct(build_linearized_euler(2, 1.0));
  std::uniform_real_distribution<double> u(-4, 4);
  for (int i = 0; i < 10000; ++i) {
    const LyapunovCertificate& c = (i % 2) ? euler1() : c2;
    const double r = std::pow(10.0, u(rng));
    const Vec w = random_direction(rng, c.d());
    const CVec z = random_z(rng, c.n());
    const double L = functional_value(c, r, w, z), z2 = z.squaredNorm();
    ASSERT_GE(L, 0.5 * z2);
    ASSERT_LE(L, 2.0 * z2);
  }
}

GTEST_TEST(DerivativeForm, FiniteDifference) {
  std::mt19937_64 rng(5);
  const LyapunovCertificate c = construct(build_linearized_euler(2, 1.0));
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const double r = std::pow(10.0, std::uniform_real_distribution<double>(-2, 2)(rng));
    const Vec w = random_direction(rng, 2);
    const CVec z0 = random_z(rng, 3);
    const CMat A = c.A_omega(w);
    const CMat E = r * A + c.Bw;
    const CVec zh = (-h * E).exp() * z0;
    const auto P = detail::kalman_blocks(c.Bw, A);
    double diss = 0;
    for (int l = 0; l < 3; ++l) diss += c.epsilons(l) * (P[l] * z0).squaredNorm();
    const double fd = (functional_value(c, r, w, zh) - functional_value(c, r, w, z0)) / h + 0.5 * std::min(1.0, r * r) * diss;
    const double q = (z0.adjoint() * derivative_form(c, r, w) * z0)(0, 0).real();
    EXPECT_NEAR(fd, q, 1e-5 * (1 + r) * (1 + r) * z0.squaredNorm()) << r;
  }
}

GTEST_TEST(DerivativeForm, ZeroDampingLeavesDissipationOnly) {
  const LyapunovCertificate& c = euler1();
  const CMat A = c.A_omega(Vec::Constant(1, 1.0));
  const CMat M = detail::derivative_matrix(c.epsilons, CMat::Zero(2, 2), A, 0.4);
  EXPECT_LT(M.norm(), 1e-15);
}

GTEST_TEST(DerivativeForm, NonpositiveOffGrid) {
  std::mt19937_64 rng(6);
  const LyapunovCertificate c = construct(build_linearized_euler(3, 1.0));
  const double bound = 1e-10 * std::pow(c.Bw.operatorNorm(), 2);
  for (int i = 0; i < 2000; ++i) {
    const double r = std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng));
    const Vec w = random_direction(rng, 3);
    ASSERT_LE(herm_max_eig(derivative_form(c, r, w)), bound) << r;
  }
}

GTEST_TEST(LyapunovCertificate, CommonFactorShrink) {
  const LyapunovCertificate c = construct(build_linearized_euler(2, 1.0));
  for (double s : {1.0, 0.5, 0.1, 1e-3}) {
    const LyapunovCertificate cs = shrink(c, s);
    EXPECT_LE(cs.max_residual, 1e-10);
    EXPECT_NEAR(cs.epsilons(1), s * c.epsilons(1), 1e-18);
  }
  EXPECT_THROW(shrink(c, 1.5), InvalidArgument);
}

GTEST_TEST(LyapunovCertificate, ExactFlowDecay) {
  std::mt19937_64 rng(7);
  for (int d : {1, 2}) {
    const LyapunovCertificate c = construct(build_linearized_euler(d, 1.0));
    for (int i = 0; i < 40; ++i) {
      const double r = std::pow(10.0, std::uniform_real_distribution<double>(-2, 2)(rng));
      const Vec w = random_direction(rng, d);
      const CVec z0 = random_z(rng, d + 1);
      const CMat E = r * c.A_omega(w) + c.Bw;
      const double L0 = functional_value(c, r, w, z0);
      const double rate = 0.25 * std::min(1.0, r * r) * n_omega(c, w);
      for (double tau : {0.1, 1.0, 10.0, 100.0, 1000.0}) {
        const CVec z = (-tau * E).exp() * z0;
        EXPECT_LE(functional_value(c, r, w, z), std::exp(-rate * tau) * L0 * (1 + 1e-10)) << r << " " << tau;
      }
    }
  }
}

GTEST_TEST(DecayEnvelope, Values) {
  const LyapunovCertificate& c = euler1();
  EXPECT_EQ(decay_envelope(c, Vec::Constant(1, 0.3), 0.0), 2.0);
  EXPECT_EQ(decay_envelope(c, Vec::Constant(1, 1.0), 3.0), decay_envelope(c, Vec::Constant(1, 7.0), 3.0));
  EXPECT_THROW(decay_envelope(c, Vec::Constant(1, 1.0), -1.0), InvalidArgument);
  for (double f : {0.5, 4.0}) {
    const LyapunovCertificate cf = construct(build_linearized_euler(1, f));
    for (double x : {0.1, 1.0, 10.0}) {
      const double e = -std::log(0.5 * decay_envelope(cf, Vec::Constant(1, x), 2.0)) / 2.0;
      EXPECT_NEAR(e, 0.5 * cf.c_decay * std::min(f, x * x / f), 1e-14);
    }
  }
}

GTEST_TEST(DecayEnvelope, DominatesExactFlow) {
  std::mt19937_64 rng(9);
  for (double f : {1.0, 3.0}) {
    const SystemSpec s = build_linearized_euler(2, f);
    const LyapunovCertificate c = construct(s);
    const GridPtr g = make_grid(2, 16, 2.0);
    for (Eigen::Index m = 1; m < g->size(); m += 3) {
      const Vec xi = g->xi().col(m);
      const CMat E = symbol_at(s, xi).E;
      const CVec z0 = random_z(rng, 3);
      for (double t = 0.0; t <= 20.0; t += 0.5) {
        const double amp = ((-t * E).exp() * z0).norm();
        ASSERT_LE(amp, decay_envelope(c, xi, t) * z0.norm() * (1 + 1e-12)) << m << " " << t;
      }
    }
  }
}

GTEST_TEST(EulerExplicitFunctional, EnergyAndSingleMode) {
  const GridPtr g = make_grid(1, 64, 1.0);
  std::mt19937_64 rng(11);
  const SpectralField a = testing::random_field(g, 1, rng, [](double r) { return std::exp(-0.3 * r); });
  const SpectralField u = testing::random_field(g, 1, rng, [](double r) { return std::exp(-0.3 * r); });
  EXPECT_NEAR(euler_explicit_functional(0.0, a, u), a.l2_squared() + u.l2_squared(), 1e-13);

  // single pair of modes +-k0 with a = cos, u = sin
  const int k0 = 3;
  const double xi0 = k0 / g->L();
  SpectralField as(g, 1), us(g, 1);
  as.c(k0, 0) = as.c(g->size() - k0, 0) = 0.5;
  us.c(k0, 0) = cdouble(0, -0.5);
  us.c(g->size() - k0, 0) = cdouble(0, 0.5);
  const double e1 = 0.2;
  double expect = 0;
  for (Eigen::Index m : {Eigen::Index(k0), g->size() - k0}) {
    const double x = g->xi()(0, m);
    expect += std::norm(as.c(m, 0)) + std::norm(us.c(m, 0)) +
              e1 * (us.c(m, 0) * std::conj(kI * x * as.c(m, 0))).real() / (1 + xi0 * xi0);
  }
  EXPECT_NEAR(euler_explicit_functional(e1, as, us), g->volume() * expect, 1e-12);
  // int sin(3x) * (1 + 9)^{-1} * (-3 sin(3x)) dx = -3/10 * pi
  EXPECT_NEAR(euler_explicit_functional(e1, as, us), 2 * kPi - e1 * 0.3 * kPi, 1e-12);
}

GTEST_TEST(EulerExplicitFunctional, MonotoneAlongLinearFlow) {
  const SystemSpec s = build_linearized_euler(1, 1.0);
  const GridPtr g = make_grid(1, 64, 2.0);
  std::mt19937_64 rng(12);
  const SpectralField z0 = testing::random_field(g, 2, rng, [](double r) { return 1.0 / (1 + r * r); });
  double prev = 1e300;
  for (int i = 0; i <= 200; ++i) {
    const double t = 0.1 * i;
    SpectralField z(g, 2);
    for (Eigen::Index m = 0; m < g->size(); ++m) {
      const CMat E = symbol_at(s, g->xi().col(m).matrix()).E;
      z.c.row(m) = ((-t * E).exp() * z0.c.row(m).transpose()).transpose();
    }
    const double v = euler_explicit_functional(0.1, z.component(0), z.component(1));
    EXPECT_LE(v, prev * (1 + 1e-13));
    prev = v;
  }
}

}  // namespace
}  // namespace pds
