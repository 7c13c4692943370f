#pragma once

#include "pds/decay_diagnostics.hpp"

#include <future>

namespace pds {

// Limit equation d_tau N + A N + Q1 + Q2 + T1 + T2 = 0 for the slow unknown N in R^{n1}.
//   A N  = -sum a(k,l) d_k d_l N
//   Q1   = sum q1(k,l,a) N_a d_k d_l N
//   Q2   = sum q2(k,l,a) d_k N_a d_l N
//   T1   = sum t1(k,l,a,b) N_a d_k N_b d_l N
//   T2   = sum t2(k,l,a,b) N_a N_b d_k d_l N
struct LimitEquation {
  int d = 0, n1 = 0, n2 = 0;
  std::vector<Mat> a, q1, q2, t1, t2;

  size_t ik(int k, int l) const { return static_cast<size_t>(k * d + l); }
  size_t ika(int k, int l, int i) const { return ik(k, l) * n1 + i; }
  size_t ikab(int k, int l, int i, int j) const { return ika(k, l, i) * n1 + j; }

  const Mat& A(int k, int l) const { return a[ik(k, l)]; }
  const Mat& Q1(int k, int l, int i) const { return q1[ika(k, l, i)]; }
  const Mat& Q2(int k, int l, int i) const { return q2[ika(k, l, i)]; }
  const Mat& T1(int k, int l, int i, int j) const { return t1[ikab(k, l, i, j)]; }
  const Mat& T2(int k, int l, int i, int j) const { return t2[ikab(k, l, i, j)]; }

  Mat symbol(const Vec& xi) const {
    Mat s = Mat::Zero(n1, n1);
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) s += xi(k) * xi(l) * A(k, l);
    return s;
  }

  // min over directions of the smallest eigenvalue of the symmetric part of A(omega).
  double ellipticity(const std::vector<Vec>& dirs) const {
    double m = std::numeric_limits<double>::infinity();
    for (const Vec& w : dirs) {
      const Mat s = symbol(w);
      m = std::min(m, sym_min_eig(0.5 * (s + s.transpose())));
    }
    return m;
  }

  bool has_nonlinear_terms() const {
    auto nz = [](const std::vector<Mat>& v) {
      for (const Mat& M : v)
        if (M.cwiseAbs().maxCoeff() > 0) return true;
      return false;
    };
    return nz(q1) || nz(q2) || nz(t1) || nz(t2);
  }
};

namespace detail {

inline Mat sub(const Mat& M, int r0, int c0, int nr, int nc) { return M.block(r0, c0, nr, nc); }

}  // namespace detail

inline LimitEquation extract_limit_equation(const SystemSpec& spec) {
  const StructureFlags f = structural_flags(spec);
  if (!f.h3 || !f.a11_z2_only || !f.offdiag_z1_only)
    throw InvalidArgument("extract_limit_equation: structure hypotheses on the flux blocks fail");
  if (!sk_condition(spec).holds) throw InvalidArgument("extract_limit_equation: SK condition fails");
  const int d = spec.d(), n1 = spec.dims.n1, n2 = spec.dims.n2;
  LimitEquation le;
  le.d = d;
  le.n1 = n1;
  le.n2 = n2;
  le.a.assign(d * d, Mat::Zero(n1, n1));
  le.q1.assign(d * d * n1, Mat::Zero(n1, n1));
  le.q2.assign(d * d * n1, Mat::Zero(n1, n1));
  le.t1.assign(d * d * n1 * n1, Mat::Zero(n1, n1));
  le.t2.assign(d * d * n1 * n1, Mat::Zero(n1, n1));
  const Mat Linv = spec.relax.L2.inverse();
  auto A12 = [&](int k) { return detail::sub(spec.flux.base[k], 0, n1, n1, n2); };
  auto A21 = [&](int k) { return detail::sub(spec.flux.base[k], n1, 0, n2, n1); };
  auto G12 = [&](int k, int m) { return detail::sub(spec.flux.grad[k][m], 0, n1, n1, n2); };
  auto G21 = [&](int k, int m) { return detail::sub(spec.flux.grad[k][m], n1, 0, n2, n1); };
  auto G11 = [&](int k, int m) { return detail::sub(spec.flux.grad[k][m], 0, 0, n1, n1); };

  for (int k = 0; k < d; ++k)
    for (int l = 0; l < d; ++l) {
      le.a[le.ik(k, l)] = A12(k) * Linv * A21(l);
      const Mat LA21 = Linv * A21(l);
      for (int i = 0; i < n1; ++i) {
        le.q1[le.ika(k, l, i)] -= A12(k) * Linv * G21(l, i) + G12(k, i) * Linv * A21(l);
        le.q2[le.ika(k, l, i)] -= A12(k) * Linv * G21(l, i);
        // A11^k(L2^{-1} A21^l d_l N) d_k N
        for (int c = 0; c < n2; ++c) le.q2[le.ika(l, k, i)] -= LA21(c, i) * G11(k, n1 + c);
        for (int j = 0; j < n1; ++j) {
          const Mat P = G12(k, i) * Linv * G21(l, j);
          le.t1[le.ikab(k, l, i, j)] -= P;
          le.t2[le.ikab(k, l, i, j)] -= P;
          const Mat LG = Linv * G21(l, i);
          for (int c = 0; c < n2; ++c) le.t1[le.ikab(l, k, i, j)] -= LG(c, j) * G11(k, n1 + c);
        }
      }
    }
  return le;
}

// V(N) = L2^{-1} sum_k (bar A^k_21 + tilde A^k_21(N)) d_k N, evaluated pointwise.
inline SpectralField relaxed_flux(const SystemSpec& spec, const SpectralField& N, bool dealias = true) {
  const int d = spec.d(), n1 = spec.dims.n1, n2 = spec.dims.n2;
  if (N.components() != n1) throw InvalidArgument("relaxed_flux: expected n1 components");
  const GridPtr& g = N.grid;
  const SpectralField Nm = dealias ? apply_dealias(N) : N;
  const Mat n = to_physical(Nm);
  Mat v = Mat::Zero(g->size(), n2);
  for (int k = 0; k < d; ++k) {
    const Mat dn = to_physical(derivative(Nm, k));
    v += dn * spec.flux.base[k].block(n1, 0, n2, n1).transpose();
    for (int i = 0; i < n1; ++i)
      v += n.col(i).asDiagonal() * (dn * spec.flux.grad[k][i].block(n1, 0, n2, n1).transpose());
  }
  v = v * spec.relax.L2.inverse().transpose();
  SpectralField out = from_physical(g, v);
  return dealias ? apply_dealias(out) : out;
}

// Right-hand side of d_tau N = F(N), assembled from the first line with Z2 = -V(N).
inline SpectralField limit_rhs_assembled(const SystemSpec& spec, const SpectralField& N, bool dealias = true) {
  const int d = spec.d(), n1 = spec.dims.n1, n2 = spec.dims.n2;
  const GridPtr& g = N.grid;
  const SpectralField Nm = dealias ? apply_dealias(N) : N;
  const SpectralField V = relaxed_flux(spec, Nm, dealias);
  const Mat n = to_physical(Nm), v = to_physical(V);
  Mat f = Mat::Zero(g->size(), n1);
  for (int k = 0; k < d; ++k) {
    const Mat dv = to_physical(derivative(V, k));
    const Mat dn = to_physical(derivative(Nm, k));
    f += dv * spec.flux.base[k].block(0, n1, n1, n2).transpose();
    for (int i = 0; i < n1; ++i)
      f += n.col(i).asDiagonal() * (dv * spec.flux.grad[k][i].block(0, n1, n1, n2).transpose());
    for (int c = 0; c < n2; ++c)
      f += v.col(c).asDiagonal() * (dn * spec.flux.grad[k][n1 + c].block(0, 0, n1, n1).transpose());
  }
  SpectralField out = from_physical(g, f);
  return dealias ? apply_dealias(out) : out;
}

class LimitSolver {
 public:
  LimitSolver(LimitEquation le, GridPtr grid, bool dealias = true)
      : le_(std::move(le)), grid_(std::move(grid)), dealias_(dealias) {
    if (grid_->d() != le_.d) throw InvalidArgument("LimitSolver: grid and equation dimensions differ");
    sym_.resize(grid_->size());
    for (Eigen::Index m = 0; m < grid_->size(); ++m) {
      const Vec xi = grid_->nyquist(m) ? Vec::Zero(le_.d).eval() : grid_->xi().col(m).matrix().eval();
      sym_[m] = le_.symbol(xi);
    }
    nonlinear_ = le_.has_nonlinear_terms();
  }

  const LimitEquation& equation() const { return le_; }
  const GridPtr& grid() const { return grid_; }

  SpectralField mask(const SpectralField& z) const { return dealias_ ? apply_dealias(z) : z; }

  // -(Q1 + Q2 + T1 + T2), pointwise from the coefficient tensors.
  SpectralField nonlinearity(const SpectralField& N) const { return evaluate(N, nullptr); }

  // d_tau N = -A N + nonlinearity(N).
  SpectralField rhs(const SpectralField& N) const {
    SpectralField out = nonlinearity(N);
    for (Eigen::Index m = 0; m < grid_->size(); ++m)
      out.c.row(m) -= (sym_[m].cast<cdouble>() * N.c.row(m).transpose()).transpose();
    return out;
  }

  // dt (max|xi|^2 D + max|xi| G): D bounds the quasilinear diffusion, G the gradient coefficients.
  double cfl_number(const SpectralField& N, double dt) const {
    if (!nonlinear_) return 0.0;
    double D = 0, G = 0;
    evaluate(N, &D, &G);
    const double k = grid_->max_frequency();
    return std::abs(dt) * (k * k * D + k * G);
  }

  SpectralField step(const SpectralField& N, double dt) {
    if (N.components() != le_.n1) throw InvalidArgument("LimitSolver::step: expected n1 components");
    if (!(dt > 0) || !std::isfinite(dt)) throw InvalidArgument("LimitSolver::step: dt must be positive");
    last_cfl_ = cfl_number(N, dt);
    if (!(last_cfl_ <= 2.5)) throw NumericalFailure("LimitSolver::step: CFL number " + std::to_string(last_cfl_));
    if (dt != cached_dt_) {
      Eh_.resize(grid_->size());
      Ehalf_.resize(grid_->size());
      for (Eigen::Index m = 0; m < grid_->size(); ++m) {
        Eh_[m] = (-dt * sym_[m]).exp().cast<cdouble>();
        Ehalf_[m] = (-0.5 * dt * sym_[m]).exp().cast<cdouble>();
      }
      cached_dt_ = dt;
    }
    const double h = dt;
    const CMat& u = N.c;
    const CMat k1 = nonlinearity(N).c;
    const CMat k2 = nonlinearity({grid_, detail::apply_blockwise(Ehalf_, u + 0.5 * h * k1)}).c;
    const CMat k3 = nonlinearity({grid_, detail::apply_blockwise(Ehalf_, u) + 0.5 * h * k2}).c;
    const CMat k4 =
        nonlinearity({grid_, detail::apply_blockwise(Eh_, u) + h * detail::apply_blockwise(Ehalf_, k3)}).c;
    SpectralField out(grid_, detail::apply_blockwise(Eh_, u + (h / 6.0) * k1) +
                                 (h / 6.0) * (2.0 * detail::apply_blockwise(Ehalf_, k2 + k3) + k4));
    if (!out.c.allFinite()) throw NumericalFailure("LimitSolver::step: non-finite state");
    return out;
  }

  double last_cfl() const { return last_cfl_; }

 private:
  SpectralField evaluate(const SpectralField& N, double* D, double* G = nullptr) const {
    const int d = le_.d, n1 = le_.n1;
    SpectralField out(grid_, n1);
    if (!nonlinear_) return out;
    const SpectralField Nm = mask(N);
    const Mat n = to_physical(Nm);
    std::vector<Mat> dn(d);
    std::vector<SpectralField> dN;
    for (int k = 0; k < d; ++k) {
      dN.push_back(derivative(Nm, k));
      dn[k] = to_physical(dN[k]);
    }
    const Eigen::Index M = grid_->size();
    Mat f = Mat::Zero(M, n1);
    Eigen::ArrayXd dcoef = Eigen::ArrayXd::Zero(M), gcoef = Eigen::ArrayXd::Zero(M);
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) {
        const Mat dkl = to_physical(derivative(dN[k], l));
        for (int i = 0; i < n1; ++i) {
          const Mat& q1 = le_.Q1(k, l, i);
          const Mat& q2 = le_.Q2(k, l, i);
          f.noalias() -= n.col(i).asDiagonal() * (dkl * q1.transpose());
          f.noalias() -= dn[k].col(i).asDiagonal() * (dn[l] * q2.transpose());
          if (D) {
            dcoef += n.col(i).array().abs() * q1.norm();
            gcoef += dn[k].col(i).array().abs() * q2.norm();
          }
          for (int j = 0; j < n1; ++j) {
            const Mat& t1 = le_.T1(k, l, i, j);
            const Mat& t2 = le_.T2(k, l, i, j);
            const Eigen::ArrayXd nij = n.col(i).array() * n.col(j).array();
            const Eigen::ArrayXd ndj = n.col(i).array() * dn[k].col(j).array();
            f.noalias() -= ndj.matrix().asDiagonal() * (dn[l] * t1.transpose());
            f.noalias() -= nij.matrix().asDiagonal() * (dkl * t2.transpose());
            if (D) {
              dcoef += nij.abs() * t2.norm();
              gcoef += ndj.abs() * t1.norm();
            }
          }
        }
      }
    if (D) *D = dcoef.maxCoeff();
    if (G) *G = gcoef.maxCoeff();
    return mask(from_physical(grid_, f));
  }

  LimitEquation le_;
  GridPtr grid_;
  bool dealias_;
  bool nonlinear_ = false;
  std::vector<Mat> sym_;
  double cached_dt_ = std::numeric_limits<double>::quiet_NaN();
  std::vector<CMat> Eh_, Ehalf_;
  double last_cfl_ = 0;
};

struct LimitConfig {
  double dt = 1e-3;
  double T = 1.0;
  int record_stride = 10;
  bool dealias = true;
  std::function<void(double, const SpectralField&)> observer;
};

struct LimitReport {
  std::vector<double> t;
  std::vector<double> norm;        // ||N(t)||_{d/2}
  std::vector<double> dissipation; // int_0^t ||N||_{d/2+2}
  double data = 0;                 // ||N0||_{d/2}
  double bound_constant = 0;       // sup (norm + dissipation) / data
  double max_cfl = 0;
  bool completed = false;
  std::string failure;
  SpectralField final_state;
};

inline LimitReport solve_limit(const LimitEquation& le, const SpectralField& N0, const LimitConfig& cfg) {
  if (!(cfg.dt > 0) || !(cfg.T >= 0) || cfg.record_stride < 1)
    throw InvalidArgument("solve_limit: need dt > 0, T >= 0, record_stride >= 1");
  const GridPtr& g = N0.grid;
  LimitSolver solver(le, g, cfg.dealias);
  const FilterBank fb(g);
  const double s = 0.5 * le.d;
  const int nsteps = std::max(1, static_cast<int>(std::ceil(cfg.T / cfg.dt - 1e-9)));
  const double h = cfg.T / nsteps;
  SpectralField N = real_projection(solver.mask(N0));
  LimitReport r;
  r.data = fb.besov(N, s);
  double integral = 0, prev = fb.besov(N, s + 2);
  auto record = [&](double t) {
    r.t.push_back(t);
    r.norm.push_back(fb.besov(N, s));
    r.dissipation.push_back(integral);
    if (r.data > 0) r.bound_constant = std::max(r.bound_constant, (r.norm.back() + integral) / r.data);
    if (cfg.observer) cfg.observer(t, N);
  };
  record(0.0);
  try {
    for (int i = 1; i <= nsteps && cfg.T > 0; ++i) {
      N = solver.step(N, h);
      r.max_cfl = std::max(r.max_cfl, solver.last_cfl());
      const double cur = fb.besov(N, s + 2);
      integral += 0.5 * h * (prev + cur);
      prev = cur;
      if (i % cfg.record_stride == 0 || i == nsteps) record(i * h);
    }
    r.completed = true;
  } catch (const NumericalFailure& e) {
    r.failure = e.what();
  }
  r.final_state = N;
  return r;
}

enum class RescaleDirection { Forward, Inverse };

// Diffusive: (tau, Z1, Z2 / eps) with tau = eps t. Inverse undoes it.
inline std::vector<Snapshot> diffusive_rescale(const std::vector<Snapshot>& traj, int n1, double eps,
                                               RescaleDirection dir = RescaleDirection::Forward) {
  if (!(eps > 0)) throw InvalidArgument("diffusive_rescale: eps must be positive");
  std::vector<Snapshot> out;
  out.reserve(traj.size());
  const double tf = dir == RescaleDirection::Forward ? eps : 1.0 / eps;
  for (size_t i = 0; i < traj.size(); ++i) {
    const Snapshot& s = traj[i];
    if (i > 0 && (s.z.grid != traj[0].z.grid || !(s.t > traj[i - 1].t)))
      throw InvalidArgument("diffusive_rescale: snapshots must share a grid and increase in time");
    if (s.z.components() <= n1) throw InvalidArgument("diffusive_rescale: state has no damped block");
    Snapshot o{s.t * tf, s.z};
    const auto n2 = s.z.components() - n1;
    o.z.c.rightCols(n2) /= tf;
    out.push_back(std::move(o));
  }
  return out;
}

// Hyperbolic: Z~(t, x) = Z(eps t, eps x). Same nodal values on a box of period 2 pi L / eps.
inline std::vector<Snapshot> hyperbolic_rescale(const std::vector<Snapshot>& traj, double eps,
                                                RescaleDirection dir = RescaleDirection::Forward) {
  if (!(eps > 0)) throw InvalidArgument("hyperbolic_rescale: eps must be positive");
  if (traj.empty()) return {};
  const GridPtr& g0 = traj[0].z.grid;
  const double sf = dir == RescaleDirection::Forward ? 1.0 / eps : eps;
  const GridPtr g = make_grid(g0->d(), g0->N(), g0->L() * sf);
  std::vector<Snapshot> out;
  for (size_t i = 0; i < traj.size(); ++i) {
    if (traj[i].z.grid != g0 || (i > 0 && !(traj[i].t > traj[i - 1].t)))
      throw InvalidArgument("hyperbolic_rescale: snapshots must share a grid and increase in time");
    out.push_back({traj[i].t * sf, SpectralField(g, traj[i].z.c)});
  }
  return out;
}

// Residual of the rescaled system, both lines, given Z~ and its tau derivative.
inline SpectralField rescaled_residual(const NonlinearSolver& solver, const SpectralField& Zt, const SpectralField& dZt,
                                       double eps) {
  const int n1 = solver.spec().dims.n1;
  const int n2 = solver.spec().dims.n2;
  SpectralField Z = Zt, dZ = dZt;
  Z.c.rightCols(n2) *= eps;
  dZ.c.leftCols(n1) *= eps;
  dZ.c.rightCols(n2) *= eps * eps;
  SpectralField R = dZ - solver.time_derivative(Z);
  R.c.leftCols(n1) /= eps;
  return R;
}

// W~ = Z~2 + V(Z~1).
inline SpectralField damped_mode_tilde(const SystemSpec& spec, const SpectralField& Zt) {
  const int n1 = spec.dims.n1;
  SpectralField W = relaxed_flux(spec, Zt.component_range(0, n1));
  W.c += Zt.c.rightCols(spec.dims.n2);
  return W;
}

// W^ = Z~2 + V(N).
inline SpectralField damped_mode_check(const SystemSpec& spec, const SpectralField& Zt, const SpectralField& N) {
  SpectralField W = relaxed_flux(spec, N);
  W.c += Zt.c.rightCols(spec.dims.n2);
  return W;
}

// S = -sum_k (bar A_12 + tilde A_12(Z~1)) d_k W~ - sum_k tilde A_11(W~) d_k Z~1.
inline SpectralField source_S(const SystemSpec& spec, const SpectralField& Zt) {
  const int d = spec.d(), n1 = spec.dims.n1, n2 = spec.dims.n2;
  const GridPtr& g = Zt.grid;
  const SpectralField Z1 = apply_dealias(Zt.component_range(0, n1));
  const SpectralField W = damped_mode_tilde(spec, Zt);
  const Mat z1 = to_physical(Z1), w = to_physical(W);
  Mat s = Mat::Zero(g->size(), n1);
  for (int k = 0; k < d; ++k) {
    const Mat dw = to_physical(derivative(W, k));
    const Mat dz = to_physical(derivative(Z1, k));
    s -= dw * spec.flux.base[k].block(0, n1, n1, n2).transpose();
    for (int i = 0; i < n1; ++i)
      s -= z1.col(i).asDiagonal() * (dw * spec.flux.grad[k][i].block(0, n1, n1, n2).transpose());
    for (int c = 0; c < n2; ++c)
      s -= w.col(c).asDiagonal() * (dz * spec.flux.grad[k][n1 + c].block(0, 0, n1, n1).transpose());
  }
  return apply_dealias(from_physical(g, s));
}

struct RelaxConfig {
  double T_tau = 1.0;      // rescaled horizon
  int samples = 100;       // comparison points in (0, T_tau]
  int steps_per_eps = 20;  // hyperbolic dt = eps / steps_per_eps (rescaled dt ~ eps^2)
  double limit_dt = 1e-3;
  int threads = 1;
};

struct EpsRun {
  double eps = 0;
  double delta_sup = 0;   // sup_tau ||Z~1 - N||_{d/2-1}
  double delta_l1 = 0;    // int ||Z~1 - N||_{d/2+1} dtau
  double w_l1 = 0;        // int ||W~||_{d/2} dtau
  double w_check_l1 = 0;  // int ||W~ - W^||_{d/2} dtau
  double s_l1 = 0;        // int ||S||_{d/2-1} dtau
  double z2_l2 = 0;       // ||Z2||_{L2_t(d/2)}, unrescaled
  double z1_drift = 0;    // sup_t ||Z1(t) - Z1(0)||_{d/2-1}
  int steps = 0;
  double max_cfl = 0;
  bool completed = false;
  std::string failure;
  std::vector<double> tau, delta;  // per-sample delta N norm
};

struct EpsSweep {
  std::vector<EpsRun> runs;
  double slope_delta_sup = 0, slope_delta_l1 = 0, slope_w = 0, slope_z2 = 0, slope_s = 0, slope_w_check = 0;
  bool monotone = false;  // delta_sup strictly decreasing with eps
  double limit_bound_constant = 0;
};

inline EpsRun relax_run(const SystemSpec& spec, double eps, const SpectralField& Z0,
                        const std::vector<SpectralField>& N, const RelaxConfig& cfg) {
  EpsRun r;
  r.eps = eps;
  SystemSpec s = spec;
  s.relax.epsilon = eps;
  const int n1 = s.dims.n1, n2 = s.dims.n2;
  const GridPtr& g = Z0.grid;
  const FilterBank fb(g);
  const double sd = 0.5 * s.d();
  NonlinearSolver solver(s, g);
  const double dtau = cfg.T_tau / cfg.samples;
  const int per_sample = std::max(1, static_cast<int>(std::ceil(dtau / (eps * eps / cfg.steps_per_eps) - 1e-9)));
  const double h = dtau / (eps * per_sample);  // unrescaled step
  SpectralField Z = real_projection(apply_dealias(Z0));
  const SpectralField Z1_0 = Z.component_range(0, n1);

  auto rescaled = [&](const SpectralField& z) {
    SpectralField zt = z;
    zt.c.rightCols(n2) /= eps;
    return zt;
  };
  struct Fine { double w, s, z2; };
  auto fine = [&](const SpectralField& z) {
    const SpectralField zt = rescaled(z);
    return Fine{fb.besov(damped_mode_tilde(s, zt), sd), fb.besov(source_S(s, zt), sd - 1),
                fb.besov(z.component_range(n1, n2), sd)};
  };
  auto coarse = [&](int i, const SpectralField& z) {
    const SpectralField zt = rescaled(z);
    const SpectralField dn = zt.component_range(0, n1) - N[i];
    const double sup = fb.besov(dn, sd - 1);
    r.tau.push_back(i * dtau);
    r.delta.push_back(sup);
    r.delta_sup = std::max(r.delta_sup, sup);
    r.z1_drift = std::max(r.z1_drift, fb.besov(z.component_range(0, n1) - Z1_0, sd - 1));
    const SpectralField wc = damped_mode_tilde(s, zt) - damped_mode_check(s, zt, N[i]);
    return std::pair<double, double>{fb.besov(dn, sd + 1), fb.besov(wc, sd)};
  };

  Fine fprev = fine(Z);
  auto [dprev, wcprev] = coarse(0, Z);
  try {
    for (int i = 1; i <= cfg.samples; ++i) {
      for (int k = 0; k < per_sample; ++k) {
        Z = solver.step(Z, h);
        r.max_cfl = std::max(r.max_cfl, solver.last_cfl());
        ++r.steps;
        // W~ and Z2 carry an initial layer of width eps in t: sampled every step
        const Fine fc = fine(Z);
        const double ht = eps * h;
        r.w_l1 += 0.5 * ht * (fprev.w + fc.w);
        r.s_l1 += 0.5 * ht * (fprev.s + fc.s);
        r.z2_l2 += 0.5 * h * (fprev.z2 * fprev.z2 + fc.z2 * fc.z2);
        fprev = fc;
      }
      const auto [dc, wc] = coarse(i, Z);
      r.delta_l1 += 0.5 * dtau * (dprev + dc);
      r.w_check_l1 += 0.5 * dtau * (wcprev + wc);
      dprev = dc;
      wcprev = wc;
    }
    r.completed = true;
  } catch (const NumericalFailure& e) {
    r.failure = e.what();
  }
  r.z2_l2 = std::sqrt(r.z2_l2);
  return r;
}

// eps sweep: unrescaled data Z0 (eps independent), limit data N0 = Z1(0).
inline EpsSweep convergence_study(const SystemSpec& spec, const std::vector<double>& epsilons, const SpectralField& Z0,
                                  const RelaxConfig& cfg = {}) {
  if (epsilons.size() < 3) throw InvalidArgument("convergence_study: need at least 3 eps values");
  for (size_t i = 0; i < epsilons.size(); ++i)
    if (!(epsilons[i] > 0) || (i > 0 && !(epsilons[i] < epsilons[i - 1])))
      throw InvalidArgument("convergence_study: eps must be positive and strictly decreasing");
  if (cfg.samples < 2 || !(cfg.T_tau > 0)) throw InvalidArgument("convergence_study: bad sampling");
  const LimitEquation le = extract_limit_equation(spec);
  const int n1 = spec.dims.n1;
  const SpectralField Zm = real_projection(apply_dealias(Z0));
  const SpectralField N0 = Zm.component_range(0, n1);

  // limit trajectory at the comparison points
  std::vector<SpectralField> N;
  const double dtau = cfg.T_tau / cfg.samples;
  LimitConfig lc;
  lc.T = cfg.T_tau;
  const int per = std::max(1, static_cast<int>(std::ceil(dtau / cfg.limit_dt - 1e-9)));
  lc.dt = dtau / per;
  lc.record_stride = per;
  lc.observer = [&](double, const SpectralField& n) { N.push_back(n); };
  const LimitReport lim = solve_limit(le, N0, lc);
  if (!lim.completed) throw NumericalFailure("convergence_study: limit solve failed: " + lim.failure);
  if (static_cast<int>(N.size()) != cfg.samples + 1) throw NumericalFailure("convergence_study: limit sampling mismatch");

  EpsSweep sw;
  sw.limit_bound_constant = lim.bound_constant;
  sw.runs.resize(epsilons.size());
  if (cfg.threads > 1) {
    std::vector<std::future<EpsRun>> fut;
    for (double e : epsilons)
      fut.push_back(std::async(std::launch::async, [&, e] { return relax_run(spec, e, Zm, N, cfg); }));
    for (size_t i = 0; i < fut.size(); ++i) sw.runs[i] = fut[i].get();
  } else {
    for (size_t i = 0; i < epsilons.size(); ++i) sw.runs[i] = relax_run(spec, epsilons[i], Zm, N, cfg);
  }
  for (const EpsRun& r : sw.runs)
    if (!r.completed) throw NumericalFailure("convergence_study: eps = " + std::to_string(r.eps) + ": " + r.failure);

  auto slope = [&](auto get) {
    std::vector<double> x, y;
    for (const EpsRun& r : sw.runs) {
      x.push_back(std::log(r.eps));
      y.push_back(std::log(get(r)));
    }
    return fit_line(x, y).slope;
  };
  sw.slope_delta_sup = slope([](const EpsRun& r) { return r.delta_sup; });
  sw.slope_delta_l1 = slope([](const EpsRun& r) { return r.delta_l1; });
  sw.slope_w = slope([](const EpsRun& r) { return r.w_l1; });
  sw.slope_z2 = slope([](const EpsRun& r) { return r.z2_l2; });
  sw.slope_s = slope([](const EpsRun& r) { return r.s_l1; });
  sw.slope_w_check = slope([](const EpsRun& r) { return r.w_check_l1; });
  sw.monotone = true;
  for (size_t i = 1; i < sw.runs.size(); ++i) sw.monotone = sw.monotone && sw.runs[i].delta_sup < sw.runs[i - 1].delta_sup;
  return sw;
}

struct MaxRegReport {
  double lhs = 0;       // ||z(t)||_s + int ||z||_{s+gamma}
  double data = 0;      // ||z0||_s + int ||f||_s
  double constant = 0;  // lhs / data
  SpectralField final_state;
};

// Exact per-mode Duhamel for d_t z + A(D) z = f on [0, t]; Gauss-Legendre in each panel.
inline MaxRegReport maximal_regularity_check(const HermitianSymbol& A, double gamma, const SpectralField& z0,
                                             const std::function<SpectralField(double)>& f, double t, double s,
                                             int p = 2, int panels = 200) {
  if (!(t > 0) || panels < 1) throw InvalidArgument("maximal_regularity_check: need t > 0, panels >= 1");
  const GridPtr& g = z0.grid;
  const Eigen::Index M = g->size();
  const int n = z0.components();
  std::vector<Vec> lam(M);
  std::vector<CMat> V(M);
  for (Eigen::Index m = 1; m < M; ++m) {
    const Vec xi = g->xi().col(m);
    const CMat a = A(xi);
    if ((a - a.adjoint()).norm() > 1e-12 * (1 + a.norm()))
      throw InvalidArgument("maximal_regularity_check: symbol not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat> es(a);
    if (!(es.eigenvalues()(0) > 0)) throw InvalidArgument("maximal_regularity_check: symbol is not strictly elliptic");
    lam[m] = es.eigenvalues();
    V[m] = es.eigenvectors();
  }
  auto semigroup = [&](const SpectralField& u, double tau) {
    SpectralField o(g, n);
    for (Eigen::Index m = 1; m < M; ++m)
      o.c.row(m) = (V[m] * (-tau * lam[m].array()).exp().matrix().asDiagonal() * V[m].adjoint() *
                    u.c.row(m).transpose()).transpose();
    o.c.row(0) = u.c.row(0);
    return o;
  };
  const FilterBank fb(g);
  const Quadrature q = gauss_legendre(4);
  const double h = t / panels;
  SpectralField z = z0;
  MaxRegReport r;
  r.data = fb.besov(z0, s, p);
  double diss = 0, prev = fb.besov(z0, s + gamma, p), fprev = f ? fb.besov(f(0.0), s, p) : 0.0;
  for (int i = 0; i < panels; ++i) {
    const double t0 = i * h;
    SpectralField next = semigroup(z, h);
    if (f)
      for (Eigen::Index k = 0; k < q.nodes.size(); ++k) {
        const double tk = t0 + 0.5 * h * (1 + q.nodes(k));
        next = next + semigroup(f(tk), t0 + h - tk) * (0.5 * h * q.weights(k));
      }
    z = next;
    const double cur = fb.besov(z, s + gamma, p);
    diss += 0.5 * h * (prev + cur);
    prev = cur;
    if (f) {
      const double fc = fb.besov(f(t0 + h), s, p);
      r.data += 0.5 * h * (fprev + fc);
      fprev = fc;
    }
  }
  r.lhs = fb.besov(z, s, p) + diss;
  r.constant = r.data > 0 ? r.lhs / r.data : 0.0;
  r.final_state = z;
  return r;
}

inline MaxRegReport maximal_regularity_check(const LimitEquation& le, const SpectralField& z0,
                                             const std::function<SpectralField(double)>& f, double t, double s,
                                             int p = 2, int panels = 200) {
  if (!(le.ellipticity(make_direction_sample(le.d, 64).directions) > 0))
    throw InvalidArgument("maximal_regularity_check: limit operator is not elliptic");
  const HermitianSymbol A = [&le](const Vec& xi) {
    const Mat s = le.symbol(xi);
    return CMat((0.5 * (s + s.transpose())).cast<cdouble>());
  };
  return maximal_regularity_check(A, 2.0, z0, f, t, s, p, panels);
}

}  // namespace pds
