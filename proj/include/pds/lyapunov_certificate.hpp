#pragma once

#include "pds/littlewood_paley.hpp"
#include "pds/symbol_analysis.hpp"

#include <Eigen/Eigenvalues>

#include <sstream>

namespace pds {

// Largest kappa with Re(B eta . eta) >= kappa |B eta|^2. Only the relaxation block matters.
inline double positivity_constant(const Mat& B22) {
  const Mat S = 0.5 * (B22 + B22.transpose());
  const Mat G = B22.transpose() * B22;
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(S, G, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalFailure("positivity_constant: B22 must be invertible");
  const double k = es.eigenvalues()(0);
  if (!(k > 0)) throw InvalidArgument("positivity_constant: relaxation block is not coercive");
  return k;
}

struct LyapunovOptions {
  double r_min = 1e-3;
  double r_max = 1e3;
  int r_points = 61;
  double tolerance = 1e-10;  // on lambda_max(M) / ||B_omega||^2
  int bisection_steps = 40;
  int max_halvings = 60;
};

inline Vec make_r_grid(const LyapunovOptions& o = {}) {
  Vec r(o.r_points);
  const double a = std::log10(o.r_min), b = std::log10(o.r_max);
  for (int i = 0; i < o.r_points; ++i) r(i) = std::pow(10.0, a + (b - a) * i / (o.r_points - 1));
  return r;
}

struct LyapunovCertificate {
  Vec epsilons;  // epsilons(0) = 1
  double eta = 0;
  double kappa = 1;
  double c_decay = 0;
  double n_min = 0;
  double max_residual = 0;  // largest lambda_max(M) over the sample, unnormalized
  double h_min = 1, h_max = 1;
  double tolerance = 1e-10;
  std::vector<Mat> abar;
  CMat Bw;  // kappa * B
  DirectionSample sample;
  Vec r_grid;

  int n() const { return static_cast<int>(Bw.rows()); }
  int d() const { return static_cast<int>(abar.size()); }

  CMat A_omega(const Vec& w) const {
    Mat S = Mat::Zero(n(), n());
    for (int k = 0; k < d(); ++k) S += w(k) * abar[k];
    return kI * S.cast<cdouble>();
  }
};

namespace detail {

// P_l = B A^l, l = 0..n-1
inline std::vector<CMat> kalman_blocks(const CMat& B, const CMat& A) {
  std::vector<CMat> P{B};
  for (Eigen::Index l = 1; l < B.rows(); ++l) P.push_back(P.back() * A);
  return P;
}

inline CMat cross_form(const Vec& eps, const std::vector<CMat>& P) {
  const Eigen::Index n = P[0].rows();
  CMat K = CMat::Zero(n, n);
  for (Eigen::Index l = 1; l < eps.size(); ++l) {
    const CMat X = P[l - 1].adjoint() * P[l];
    K += eps(l) * 0.5 * (X + X.adjoint());
  }
  return K;
}

inline CMat dissipation_form(const Vec& eps, const std::vector<CMat>& P) {
  const Eigen::Index n = P[0].rows();
  CMat D = CMat::Zero(n, n);
  for (Eigen::Index l = 0; l < eps.size(); ++l) D += eps(l) * P[l].adjoint() * P[l];
  return D;
}

inline CMat functional_matrix(const Vec& eps, const CMat& B, const CMat& A, double r) {
  const auto P = kalman_blocks(B, A);
  return CMat::Identity(B.rows(), B.cols()) + std::min(r, 1.0 / r) * cross_form(eps, P);
}

inline CMat derivative_matrix(const Vec& eps, const CMat& B, const CMat& A, double r) {
  const auto P = kalman_blocks(B, A);
  const CMat H = CMat::Identity(B.rows(), B.cols()) + std::min(r, 1.0 / r) * cross_form(eps, P);
  const CMat E = r * A + B;
  CMat M = -(E.adjoint() * H + H * E) + 0.5 * std::min(1.0, r * r) * dissipation_form(eps, P);
  return 0.5 * (M + M.adjoint());
}

// r -> infinity: the 1/r weight cancels the r in E, B terms drop out.
inline CMat derivative_matrix_infinity(const Vec& eps, const CMat& B, const CMat& A) {
  const auto P = kalman_blocks(B, A);
  const CMat K = cross_form(eps, P);
  CMat M = -(B.adjoint() + B) - (A.adjoint() * K + K * A) + 0.5 * dissipation_form(eps, P);
  return 0.5 * (M + M.adjoint());
}

struct SweepResult {
  bool ok = true;
  double max_residual = -std::numeric_limits<double>::infinity();
  double h_min = std::numeric_limits<double>::infinity();
  double h_max = -std::numeric_limits<double>::infinity();
  double worst_r = 0;
  Vec worst_omega;
};

inline SweepResult sweep(const LyapunovCertificate& c, const Vec& eps, bool stop_early) {
  SweepResult s;
  const double bound = c.tolerance * std::pow(c.Bw.operatorNorm(), 2);
  auto take = [&](double lmax, double hmin, double hmax, double r, const Vec& w) {
    if (lmax > s.max_residual) {
      s.max_residual = lmax;
      s.worst_r = r;
      s.worst_omega = w;
    }
    s.h_min = std::min(s.h_min, hmin);
    s.h_max = std::max(s.h_max, hmax);
    if (lmax > bound || hmin < 0.5 || hmax > 2.0) s.ok = false;
  };
  for (const Vec& w : c.sample.directions) {
    const CMat A = c.A_omega(w);
    for (Eigen::Index i = 0; i < c.r_grid.size(); ++i) {
      const double r = c.r_grid(i);
      const CMat H = functional_matrix(eps, c.Bw, A, r);
      Eigen::SelfAdjointEigenSolver<CMat> eh(H, Eigen::EigenvaluesOnly);
      take(herm_max_eig(derivative_matrix(eps, c.Bw, A, r)), eh.eigenvalues()(0),
           eh.eigenvalues()(eh.eigenvalues().size() - 1), r, w);
      if (stop_early && !s.ok) return s;
    }
    take(herm_max_eig(derivative_matrix_infinity(eps, c.Bw, A)), 1.0, 1.0, std::numeric_limits<double>::infinity(), w);
    if (stop_early && !s.ok) return s;
  }
  return s;
}

inline Vec geometric_schedule(int n, double eta) {
  Vec e(n);
  for (int l = 0; l < n; ++l) e(l) = std::pow(eta, l);
  return e;
}

}  // namespace detail

inline double n_omega(const LyapunovCertificate& c, const Vec& w) {
  const auto P = detail::kalman_blocks(c.Bw, c.A_omega(w));
  return herm_min_eig(detail::dissipation_form(c.epsilons, P));
}

// Re-runs the sweep with the stored epsilons and refreshes the derived constants.
inline bool reverify(LyapunovCertificate& c) {
  const detail::SweepResult s = detail::sweep(c, c.epsilons, false);
  c.max_residual = s.max_residual;
  c.h_min = s.h_min;
  c.h_max = s.h_max;
  c.n_min = std::numeric_limits<double>::infinity();
  for (const Vec& w : c.sample.directions) c.n_min = std::min(c.n_min, n_omega(c, w));
  c.c_decay = c.n_min / 4.0;
  return s.ok;
}

inline LyapunovCertificate construct(const SystemSpec& spec, const DirectionSample& sample, const Vec& r_grid,
                                     const LyapunovOptions& opt = {}) {
  if (sample.d != spec.d()) throw InvalidArgument("construct: direction sample dimension mismatch");
  const SkVerdict sk = sk_condition(spec, sample);
  if (!sk.holds) {
    std::ostringstream os;
    os << "construct: SK condition fails at omega = " << sk.failing_omega->transpose();
    throw NumericalFailure(os.str());
  }
  LyapunovCertificate c;
  c.kappa = positivity_constant(spec.B22());
  c.Bw = (c.kappa * spec.B()).cast<cdouble>();
  c.abar = spec.flux.base;
  c.sample = sample;
  c.r_grid = r_grid;
  c.tolerance = opt.tolerance;
  const int n = spec.n();
  auto feasible = [&](double eta) { return detail::sweep(c, detail::geometric_schedule(n, eta), true).ok; };

  double lo = 0.5, hi = 1.0;
  int halvings = 0;
  while (!feasible(lo)) {
    hi = lo;
    lo *= 0.5;
    if (++halvings > opt.max_halvings) {
      const detail::SweepResult s = detail::sweep(c, detail::geometric_schedule(n, lo), true);
      std::ostringstream os;
      os << "construct: no admissible epsilon schedule down to eta = " << lo << "; residual " << s.max_residual
         << " at r = " << s.worst_r << ", omega = " << s.worst_omega.transpose();
      throw NumericalFailure(os.str());
    }
  }
  for (int i = 0; i < opt.bisection_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) lo = mid;
    else hi = mid;
  }
  // step back from the feasibility edge
  double eta = 0.5 * lo;
  while (!feasible(eta)) {
    eta *= 0.5;
    if (eta < 1e-300) throw NumericalFailure("construct: safety margin could not be verified");
  }
  c.eta = eta;
  c.epsilons = detail::geometric_schedule(n, eta);
  if (!reverify(c)) throw NumericalFailure("construct: final verification failed");
  if (!(c.n_min > 1e-12 * c.Bw.squaredNorm())) throw NumericalFailure("construct: N_omega vanishes on the sample");
  return c;
}

inline LyapunovCertificate construct(const SystemSpec& spec, const LyapunovOptions& opt = {}) {
  return construct(spec, make_direction_sample(spec.d()), make_r_grid(opt), opt);
}

// Copy with epsilon_1.. scaled by s in (0, 1], re-verified.
inline LyapunovCertificate shrink(const LyapunovCertificate& c, double s) {
  if (!(s > 0 && s <= 1)) throw InvalidArgument("shrink: factor must lie in (0, 1]");
  LyapunovCertificate out = c;
  out.epsilons.tail(out.epsilons.size() - 1) *= s;
  if (!reverify(out)) throw NumericalFailure("shrink: re-verification failed");
  return out;
}

inline double functional_value(const LyapunovCertificate& c, double r, const Vec& w, const CVec& z) {
  if (!(r > 0)) throw InvalidArgument("functional_value: r must be positive");
  const CMat H = detail::functional_matrix(c.epsilons, c.Bw, c.A_omega(w), r);
  return (z.adjoint() * H * z)(0, 0).real();
}

inline CMat derivative_form(const LyapunovCertificate& c, double r, const Vec& w) {
  if (!(r > 0)) throw InvalidArgument("derivative_form: r must be positive");
  return detail::derivative_matrix(c.epsilons, c.Bw, c.A_omega(w), r);
}

inline CMat derivative_form(const LyapunovCertificate& c, const SystemSpec& spec, double r, const Vec& w) {
  if (spec.n() != c.n() || spec.d() != c.d()) throw InvalidArgument("derivative_form: spec does not match certificate");
  return derivative_form(c, r, w);
}

// Scaled variables for frequency xi: r = kappa |xi|, tau = t / kappa.
inline double scaled_r(const LyapunovCertificate& c, const Vec& xi) { return c.kappa * xi.norm(); }

// |Z(t, xi)| <= envelope |Z0(xi)|. The amplitude rate is half the functional rate c_decay.
inline double decay_envelope(const LyapunovCertificate& c, const Vec& xi, double t) {
  if (t < 0) throw InvalidArgument("decay_envelope: t must be nonnegative");
  const double rho2 = xi.squaredNorm();
  return 2.0 * std::exp(-0.5 * c.c_decay * std::min(1.0 / c.kappa, c.kappa * rho2) * t);
}

// ||a||^2 + ||u||^2 + eps1 int u . (Id - Delta)^{-1} grad a
inline double euler_explicit_functional(double eps1, const SpectralField& a, const SpectralField& u) {
  if (a.components() != 1 || u.components() != a.grid->d() || a.grid != u.grid)
    throw InvalidArgument("euler_explicit_functional: expects scalar a and d-vector u on one grid");
  const auto& xi = a.grid->xi();
  double cross = 0;
  for (Eigen::Index m = 1; m < a.grid->size(); ++m) {
    cdouble s = 0;
    for (int k = 0; k < a.grid->d(); ++k) s += u.c(m, k) * std::conj(kI * xi(k, m) * a.c(m, 0));
    cross += s.real() / (1.0 + a.grid->rho()(m) * a.grid->rho()(m));
  }
  return a.l2_squared() + u.l2_squared() + eps1 * a.grid->volume() * cross;
}

}  // namespace pds
