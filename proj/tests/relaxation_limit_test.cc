#include "pds/relaxation_limit.hpp"

#include "random_fields.hpp"
#include "random_systems.hpp"

#include <gtest/gtest.h>

namespace pds {
namespace {

SpectralField smooth_pair(const GridPtr& g, double a1, double a2) {
  Mat u = Mat::Zero(g->size(), g->d() + 1);
  for (Eigen::Index m = 0; m < g->size(); ++m) {
    const Vec x = g->point(m) / g->L();
    const double y = g->d() > 1 ? x(1) : 0.0;
    u(m, 0) = a1 * (std::cos(x(0)) + 0.5 * std::sin(2 * x(0) + y));
    for (int k = 0; k < g->d(); ++k) u(m, 1 + k) = a2 * std::sin(x(0) + k * y);
  }
  return from_physical(g, u);
}

// Random affine system meeting the structure hypotheses.
SystemSpec random_affine_system(std::mt19937_64& rng, int n1, int n2, int d) {
  std::normal_distribution<double> nd;
  SystemSpec s = testing::random_structured_system(rng, n1, n2, d);
  const int n = n1 + n2;
  for (int k = 0; k < d; ++k)
    for (int m = 0; m < n; ++m) {
      Mat G = Mat::Zero(n, n);
      if (m < n1) {
        for (int i = 0; i < n1; ++i)
          for (int c = 0; c < n2; ++c) G(i, n1 + c) = G(n1 + c, i) = 0.3 * nd(rng);
      } else {
        for (int i = 0; i < n1; ++i)
          for (int j = 0; j < n1; ++j) G(i, j) = 0.3 * nd(rng);
      }
      for (int c = 0; c < n2; ++c) G(n1 + c, n1 + c) = 0.3 * nd(rng);
      s.flux.grad[k][m] = G;
    }
  s.flux.flags = structural_flags(s);
  s.flux.flags.sk = sk_condition(s).holds;
  return s;
}

double rel(const SpectralField& a, const SpectralField& b) { return (a - b).l2() / std::max(b.l2(), 1e-300); }

GTEST_TEST(Rescale, IdentityAtEpsOne) {
  const GridPtr g = make_grid(1, 32, 1.0);
  std::vector<Snapshot> tr{{0.0, smooth_pair(g, 0.1, 0.2)}, {0.5, smooth_pair(g, 0.2, 0.1)}};
  const auto out = diffusive_rescale(tr, 1, 1.0);
  for (size_t i = 0; i < tr.size(); ++i) {
    EXPECT_EQ(out[i].t, tr[i].t);
    EXPECT_EQ((out[i].z.c - tr[i].z.c).norm(), 0.0);
  }
}

GTEST_TEST(Rescale, RoundTrips) {
  const GridPtr g = make_grid(2, 16, 2.0);
  std::vector<Snapshot> tr{{0.0, smooth_pair(g, 0.1, 0.2)}, {0.3, smooth_pair(g, 0.3, 0.1)}};
  const auto d = diffusive_rescale(diffusive_rescale(tr, 1, 0.05), 1, 0.05, RescaleDirection::Inverse);
  const auto h = hyperbolic_rescale(hyperbolic_rescale(tr, 0.05), 0.05, RescaleDirection::Inverse);
  for (size_t i = 0; i < tr.size(); ++i) {
    EXPECT_NEAR(d[i].t, tr[i].t, 1e-15);
    EXPECT_LT((d[i].z.c - tr[i].z.c).norm(), 1e-14);
    EXPECT_NEAR(h[i].t, tr[i].t, 1e-15);
    EXPECT_DOUBLE_EQ(h[i].z.grid->L(), 2.0);
  }
  const auto f = diffusive_rescale(tr, 1, 0.1);
  EXPECT_NEAR(f[1].t, 0.03, 1e-15);
  EXPECT_LT((f[1].z.c.rightCols(2) - 10.0 * tr[1].z.c.rightCols(2)).norm(), 1e-13);
  EXPECT_DOUBLE_EQ(hyperbolic_rescale(tr, 0.1)[0].z.grid->L(), 20.0);
}

GTEST_TEST(Rescale, IncompatibleTrajectoriesRejected) {
  const GridPtr g = make_grid(1, 16, 1.0), h = make_grid(1, 16, 2.0);
  std::vector<Snapshot> mixed{{0.0, smooth_pair(g, 0.1, 0.1)}, {1.0, smooth_pair(h, 0.1, 0.1)}};
  EXPECT_THROW(diffusive_rescale(mixed, 1, 0.1), InvalidArgument);
  EXPECT_THROW(hyperbolic_rescale(mixed, 0.1), InvalidArgument);
  std::vector<Snapshot> back{{1.0, smooth_pair(g, 0.1, 0.1)}, {0.5, smooth_pair(g, 0.1, 0.1)}};
  EXPECT_THROW(diffusive_rescale(back, 1, 0.1), InvalidArgument);
  EXPECT_THROW(diffusive_rescale(back, 1, 0.0), InvalidArgument);
}

GTEST_TEST(Rescale, HyperbolicEquivariance) {
  // solving at eps on box L equals solving at eps = 1 on box L / eps
  const double eps = 0.2;
  const GridPtr g = make_grid(1, 64, 1.0);
  const SpectralField z0 = apply_dealias(smooth_pair(g, 0.05, 0.05));
  NonlinearSolver a(build_isentropic_euler(1, 1.4, 1.0, 1.0, eps), g);
  const auto hz = hyperbolic_rescale({{0.0, z0}}, eps);
  NonlinearSolver b(build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0), hz[0].z.grid);
  SpectralField za = z0, zb = hz[0].z;
  const double h = 0.01;
  for (int i = 0; i < 100; ++i) {
    za = a.step(za, h);
    zb = b.step(zb, h / eps);
  }
  EXPECT_LT((za.c - zb.c).norm(), 1e-12 * za.c.norm());
}

GTEST_TEST(Rescale, RescaledPairSolvesRescaledSystem) {
  const double eps = 0.1;
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, eps);
  const GridPtr g = make_grid(1, 64, 1.0);
  NonlinearSolver sol(s, g);
  const double h = 1e-3;
  std::vector<Snapshot> tr{{0.0, apply_dealias(smooth_pair(g, 0.1, 0.1))}};
  for (int i = 1; i <= 300; ++i) tr.push_back({i * h, sol.step(tr.back().z, h)});
  const auto rt = diffusive_rescale(tr, 1, eps);
  const double ht = eps * h;
  double worst = 0, scale = 0;
  for (size_t i = 1; i + 1 < rt.size(); i += 50) {
    const SpectralField dz = (rt[i + 1].z - rt[i - 1].z) * (0.5 / ht);
    worst = std::max(worst, rescaled_residual(sol, rt[i].z, dz, eps).l2());
    scale = std::max(scale, dz.component(0).l2());
  }
  // central difference error only
  EXPECT_LT(worst, 1e-4 * scale);
}

GTEST_TEST(LimitExtraction, EulerClosedForm) {
  for (double gamma : {1.4, 2.0, 3.0}) {
    const SystemSpec s = build_isentropic_euler(1, gamma, 1.0, 1.0, 1.0);
    const LimitEquation le = extract_limit_equation(s);
    const double gt = 0.5 * (gamma - 1), cb = s.cbar;
    // P'(rho bar) xi^2
    EXPECT_NEAR(le.symbol(Vec::Constant(1, 1.0))(0, 0), gamma * std::pow(s.rhobar, gamma - 1), 1e-12);
    EXPECT_NEAR(le.Q1(0, 0, 0)(0, 0), -2 * gt * gt * cb, 1e-12);
    EXPECT_NEAR(le.Q2(0, 0, 0)(0, 0), -gt * (1 + gt) * cb, 1e-12);
    EXPECT_NEAR(le.T1(0, 0, 0, 0)(0, 0), -gt * (1 + gt), 1e-12);
    EXPECT_NEAR(le.T2(0, 0, 0, 0)(0, 0), -gt * gt, 1e-12);
  }
}

GTEST_TEST(LimitExtraction, EllipticForEuler) {
  for (int d : {1, 2, 3}) {
    const LimitEquation le = extract_limit_equation(build_isentropic_euler(d, 1.4, 1.0, 1.0, 1.0));
    EXPECT_NEAR(le.ellipticity(make_direction_sample(d, 32).directions), 1.4, 1e-12);
  }
}

GTEST_TEST(LimitExtraction, RejectsDecoupledAndUnstructured) {
  Mat A = Mat::Zero(2, 2);
  A(1, 1) = 1.0;
  EXPECT_THROW(extract_limit_equation(make_linear_system({A}, Mat::Identity(1, 1), 1)), InvalidArgument);
  SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  s.flux.base[0](0, 0) = 1.0;
  EXPECT_THROW(extract_limit_equation(s), InvalidArgument);
}

GTEST_TEST(LimitExtraction, TensorsMatchAssembledRhs) {
  std::mt19937_64 rng(11);
  for (int d : {1, 2}) {
    std::vector<SystemSpec> systems{build_isentropic_euler(d, 1.4, 1.0, 1.0, 1.0)};
    for (int i = 0; i < 3; ++i) systems.push_back(random_affine_system(rng, 2, 2, d));
    const GridPtr g = make_grid(d, d == 1 ? 64 : 24, 1.0);
    for (const SystemSpec& s : systems) {
      if (!s.flux.flags.sk) continue;
      const LimitEquation le = extract_limit_equation(s);
      const LimitSolver ls(le, g);
      for (int trial = 0; trial < (d == 1 ? 50 : 10); ++trial) {
        // band |k| <= N/8: cubic products resolved without aliasing
        const SpectralField N = testing::random_band_field(g, s.dims.n1, rng, 0.0, g->N() / 8.0);
        const SpectralField lhs = ls.rhs(N);
        const SpectralField ref = limit_rhs_assembled(s, N);
        EXPECT_LT(rel(lhs, ref), 1e-10) << s.name << " d=" << d;
      }
    }
  }
}

GTEST_TEST(LimitExtraction, EulerPorousMediaInDensity) {
  // c = K rho^gt; d_tau c = gt (c / rho) Laplacian P(rho)
  for (double gamma : {3.0, 2.0}) {
    const SystemSpec s = build_isentropic_euler(1, gamma, 1.0, 1.0, 1.0);
    const double gt = 0.5 * (gamma - 1), K = std::sqrt(gamma * s.a) / gt;
    const GridPtr g = make_grid(1, 256, 1.0);
    const LimitSolver ls(extract_limit_equation(s), g);
    Mat u = Mat::Zero(g->size(), 1);
    for (Eigen::Index m = 0; m < g->size(); ++m) {
      const double x = g->point(m)(0);
      u(m, 0) = 0.3 * std::cos(x) + 0.2 * std::sin(3 * x);
    }
    const SpectralField N = from_physical(g, u);
    Mat c = u.array() + s.cbar;
    Mat rho = (c.array() / K).pow(1.0 / gt);
    Mat P = s.a * rho.array().pow(gamma);
    const SpectralField lap = derivative(derivative(from_physical(g, P), 0), 0);
    Mat ref = gt * c.array() / rho.array() * to_physical(lap).array();
    const double err = (to_physical(ls.rhs(N)) - ref).cwiseAbs().maxCoeff();
    EXPECT_LT(err, 1e-10 * ref.cwiseAbs().maxCoeff()) << gamma;
  }
}

GTEST_TEST(SolveLimit, ZeroDataStaysZero) {
  const GridPtr g = make_grid(1, 32, 1.0);
  LimitConfig cfg;
  cfg.T = 0.1;
  const LimitReport r = solve_limit(extract_limit_equation(build_isentropic_euler(1, 1.4, 1, 1, 1)), SpectralField(g, 1), cfg);
  EXPECT_TRUE(r.completed);
  EXPECT_EQ(r.final_state.c.norm(), 0.0);
  EXPECT_EQ(r.data, 0.0);
}

GTEST_TEST(SolveLimit, LinearRegimeQuadraticDefect) {
  const SystemSpec s = build_isentropic_euler(1, 2.0, 1.0, 1.0, 1.0);
  const LimitEquation le = extract_limit_equation(s);
  const GridPtr g = make_grid(1, 64, 1.0);
  std::vector<double> err;
  for (double amp : {1e-2, 5e-3}) {
    const SpectralField N0 = apply_dealias(smooth_pair(g, amp, 0).component(0));
    LimitConfig cfg;
    cfg.T = 0.5;
    cfg.dt = 1e-3;
    const LimitReport r = solve_limit(le, N0, cfg);
    ASSERT_TRUE(r.completed);
    SpectralField lin(g, 1);
    for (Eigen::Index m = 0; m < g->size(); ++m)
      lin.c(m, 0) = std::exp(-0.5 * le.symbol(g->xi().col(m).matrix())(0, 0)) * N0.c(m, 0);
    err.push_back((r.final_state - lin).l2() / lin.l2());
  }
  // relative defect linear in amplitude: absolute defect quadratic
  EXPECT_NEAR(err[0] / err[1], 2.0, 0.1);
  EXPECT_LT(err[0], 0.1);
}

GTEST_TEST(SolveLimit, APrioriBound) {
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 64, 1.0);
  LimitConfig cfg;
  cfg.T = 3.0;
  cfg.dt = 2e-3;
  const LimitReport r = solve_limit(extract_limit_equation(s), smooth_pair(g, 0.1, 0).component(0), cfg);
  ASSERT_TRUE(r.completed) << r.failure;
  EXPECT_LT(r.bound_constant, 2.0);
  EXPECT_GE(r.bound_constant, 0.99);
  EXPECT_LT(r.norm.back(), 0.2 * r.norm.front());
}

GTEST_TEST(SolveLimit, CflViolationReported) {
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 128, 1.0);
  LimitConfig cfg;
  cfg.T = 0.1;
  cfg.dt = 0.05;
  const LimitReport r = solve_limit(extract_limit_equation(s), smooth_pair(g, 2.0, 0).component(0), cfg);
  EXPECT_FALSE(r.completed);
  EXPECT_NE(r.failure.find("CFL"), std::string::npos);
}

GTEST_TEST(DampedModeTilde, EulerDensityForm) {
  // W~ = v~ + grad P(rho~) / rho~
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const double gt = 0.2, K = std::sqrt(1.4) / gt;
  const GridPtr g = make_grid(1, 256, 1.0);
  const SpectralField Z = smooth_pair(g, 0.3, 0.2);
  const Mat z = to_physical(Z);
  Mat rho = ((z.col(0).array() + s.cbar) / K).pow(1.0 / gt);
  Mat P = rho.array().pow(1.4);
  Mat ref = z.col(1).array() + to_physical(derivative(from_physical(g, P), 0)).array() / rho.array();
  EXPECT_LT((to_physical(damped_mode_tilde(s, Z)) - ref).cwiseAbs().maxCoeff(), 1e-10);
}

GTEST_TEST(DampedModeTilde, ConstantSlowPartGivesZero) {
  const SystemSpec s = build_isentropic_euler(2, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(2, 16, 1.0);
  SpectralField Z(g, 3);
  Z.c(0, 0) = 0.3;
  EXPECT_EQ(damped_mode_tilde(s, Z).c.norm(), 0.0);
  EXPECT_EQ(damped_mode_check(s, Z, Z.component(0)).c.norm(), 0.0);
}

GTEST_TEST(ConvergenceStudy, EulerRates) {
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 64, 1.0);
  RelaxConfig cfg;
  cfg.samples = 50;
  const EpsSweep sw = convergence_study(s, {0.1, 0.05, 0.025}, smooth_pair(g, 0.1, 0.1), cfg);
  EXPECT_NEAR(sw.slope_delta_sup, 1.0, 0.2);
  EXPECT_NEAR(sw.slope_w, 1.0, 0.2);
  EXPECT_NEAR(sw.slope_z2, 0.5, 0.1);
  EXPECT_NEAR(sw.slope_s, 1.0, 0.2);
  EXPECT_TRUE(sw.monotone);
  // W~ - W^ = O(||delta N(0)|| + eps) with delta N(0) = 0
  std::vector<double> ratio;
  for (const EpsRun& r : sw.runs) ratio.push_back(r.w_check_l1 / r.eps);
  EXPECT_LT(*std::max_element(ratio.begin(), ratio.end()) / *std::min_element(ratio.begin(), ratio.end()), 1.5);
  EXPECT_LT(sw.limit_bound_constant, 2.0);
}

GTEST_TEST(ConvergenceStudy, WellPreparedDataConvergeFaster) {
  // no initial layer: the O(eps) bound is not attained for Euler
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 32, 1.0);
  RelaxConfig cfg;
  cfg.samples = 20;
  cfg.T_tau = 0.5;
  const EpsSweep sw = convergence_study(s, {0.1, 0.05, 0.025}, smooth_pair(g, 0.1, 0.0), cfg);
  EXPECT_GT(sw.slope_delta_sup, 1.7);
  EXPECT_NEAR(sw.slope_z2, 0.5, 0.1);
}

GTEST_TEST(ConvergenceStudy, ThreadedMatchesSequential) {
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 32, 1.0);
  RelaxConfig cfg;
  cfg.samples = 10;
  cfg.T_tau = 0.2;
  const SpectralField z0 = smooth_pair(g, 0.1, 0.1);
  const EpsSweep a = convergence_study(s, {0.2, 0.1, 0.05}, z0, cfg);
  cfg.threads = 3;
  const EpsSweep b = convergence_study(s, {0.2, 0.1, 0.05}, z0, cfg);
  for (size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].delta_sup, b.runs[i].delta_sup);
    EXPECT_EQ(a.runs[i].w_l1, b.runs[i].w_l1);
  }
}

GTEST_TEST(ConvergenceStudy, BadSweepsRejected) {
  const SystemSpec s = build_isentropic_euler(1, 1.4, 1.0, 1.0, 1.0);
  const GridPtr g = make_grid(1, 16, 1.0);
  const SpectralField z0 = smooth_pair(g, 0.1, 0.1);
  EXPECT_THROW(convergence_study(s, {0.1, 0.05}, z0), InvalidArgument);
  EXPECT_THROW(convergence_study(s, {0.1, 0.2, 0.05}, z0), InvalidArgument);
}

HermitianSymbol heat(int d) {
  return [d](const Vec& xi) { return CMat::Identity(1, 1) * cdouble(xi.squaredNorm(), 0.0); };
}

GTEST_TEST(MaximalRegularity, HeatKernelData) {
  for (int p : {1, 2, kInf}) {
    const GridPtr g = make_grid(1, 256, 8.0);
    Mat u(g->size(), 1);
    for (Eigen::Index m = 0; m < g->size(); ++m) {
      const double x = g->point(m)(0) - g->period() / 2;
      u(m, 0) = std::exp(-x * x / 4);
    }
    const MaxRegReport r = maximal_regularity_check(heat(1), 2.0, from_physical(g, u), nullptr, 10.0, 0.5, p);
    EXPECT_LT(r.constant, 4.0) << p;
    EXPECT_GT(r.constant, 1.0) << p;
  }
}

GTEST_TEST(MaximalRegularity, SingleModeForcing) {
  const GridPtr g = make_grid(1, 32, 1.0);
  const SpectralField f = testing::single_mode(g, 1, {3});
  const MaxRegReport r = maximal_regularity_check(heat(1), 2.0, SpectralField(g, 1), [&](double) { return f; }, 2.0, 0.0);
  // z(t) = (1 - e^{-9 t}) / 9 f
  const SpectralField exact = f * ((1 - std::exp(-18.0)) / 9.0);
  EXPECT_LT(rel(r.final_state, exact), 1e-10);
}

GTEST_TEST(MaximalRegularity, PorousMediaStableUnderRefinement) {
  const LimitEquation le = extract_limit_equation(build_isentropic_euler(1, 2.0, 1.0, 1.0, 1.0));
  std::vector<double> cs;
  for (int N : {128, 256, 512}) {
    const GridPtr g = make_grid(1, N, 8.0);
    Mat u(g->size(), 1);
    for (Eigen::Index m = 0; m < g->size(); ++m) {
      const double x = g->point(m)(0) - g->period() / 2;
      u(m, 0) = std::exp(-x * x) * std::cos(2 * x);
    }
    const SpectralField z0 = from_physical(g, u);
    cs.push_back(maximal_regularity_check(le, z0, [&](double t) { return z0 * std::exp(-t); }, 5.0, 0.5).constant);
  }
  EXPECT_LT(*std::max_element(cs.begin(), cs.end()) / *std::min_element(cs.begin(), cs.end()), 1.5);
  EXPECT_LT(cs.back(), 4.0);
}

GTEST_TEST(MaximalRegularity, RejectsNonElliptic) {
  const GridPtr g = make_grid(1, 16, 1.0);
  const HermitianSymbol bad = [](const Vec& xi) { return CMat::Identity(1, 1) * cdouble(-xi.squaredNorm(), 0.0); };
  EXPECT_THROW(maximal_regularity_check(bad, 2.0, testing::single_mode(g, 1, {1}), nullptr, 1.0, 0.0), InvalidArgument);
}

}  // namespace
}  // namespace pds
