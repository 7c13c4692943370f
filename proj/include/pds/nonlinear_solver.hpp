#pragma once

#include "pds/linear_propagator.hpp"

#include <array>
#include <limits>

namespace pds {

// Which low-frequency regularity drives the monitors: d/2 - 1 or d/2 (the H3 framework).
enum class Regularity { Auto, Critical, Shifted };

struct SolverConfig {
  double dt = 1e-2;       // upper bound; the actual step divides T evenly
  double T = 1.0;
  bool dealias = true;
  int record_stride = 10;
  double cfl_safety = 2.5;
  double smallness_factor = 0.1;
  double alpha = std::numeric_limits<double>::infinity();  // data-norm gate
  double threshold = 1.0;  // low/high frequency split
  Regularity regularity = Regularity::Auto;
  std::function<void(double, const SpectralField&)> observer;  // called at every record
};

struct TrajectoryRecord {
  double t = 0;
  double energy = 0;       // 1/2 ||Z||^2
  double low = 0;          // ||Z||^l at s_low
  double high = 0;         // ||Z||^h at d/2 + 1
  double lyap = 0;         // block-weighted sum of sqrt(L_j)
  double dissipation = 0;  // H
  std::array<double, 6> x{};  // integrands of the critical functional
  std::array<double, 6> y{};  // integrands of the shifted functional
  double w_low = 0, w_high = 0;
  double energy_residual = 0;  // max energy-identity residual per unit time since the previous record
  double max_abs = 0;
  double smallness = 0;  // ||Z||_{B^{d/2}}
};

struct TrajectoryReport {
  std::vector<TrajectoryRecord> records;
  int d = 0;
  double s_low = 0;
  double threshold = 1;
  double smallness_limit = 0;
  double lyap_rate = 0;  // c/2 of the monitored inequality
  double data_critical = 0;
  double data_shifted = 0;
  double dt = 0;
  long steps = 0;
  double t_end = 0;
  double max_energy_residual = 0;
  double max_cfl = 0;
  bool completed = false;
  bool smallness_tripped = false;
  std::string failure;
  SpectralField final_state;
};

namespace detail {

// Time-Lebesgue kinds for the six-term functionals.
enum class TimeNorm { Sup, L1, L2 };
inline constexpr std::array<TimeNorm, 6> kXNorms{TimeNorm::Sup, TimeNorm::Sup, TimeNorm::L1,
                                                 TimeNorm::L1,  TimeNorm::L1,  TimeNorm::L2};
inline constexpr std::array<TimeNorm, 6> kYNorms{TimeNorm::Sup, TimeNorm::L1, TimeNorm::L1,
                                                 TimeNorm::L2,  TimeNorm::L1, TimeNorm::L1};

inline CMat apply_blockwise(const std::vector<CMat>& P, const CMat& c) {
  CMat out(c.rows(), c.cols());
  for (Eigen::Index m = 0; m < c.rows(); ++m) out.row(m) = (P[m] * c.row(m).transpose()).transpose();
  return out;
}

}  // namespace detail

class NonlinearSolver {
 public:
  NonlinearSolver(const SystemSpec& spec, GridPtr grid, bool dealias = true)
      : spec_(spec), grid_(grid), plan_(spec, grid), dealias_(dealias) {
    const int n = spec.n();
    gnorm_.assign(spec.d(), std::vector<double>(n, 0.0));
    base_norm_.assign(spec.d(), 0.0);
    for (int k = 0; k < spec.d(); ++k) {
      base_norm_[k] = spec.flux.base[k].operatorNorm();
      for (int m = 0; m < n; ++m) {
        const Mat& G = spec.flux.grad[k][m];
        if (G.cwiseAbs().maxCoeff() == 0.0) continue;
        gnorm_[k][m] = G.operatorNorm();
        active_.push_back({k, m});
      }
    }
    Bsym_ = 0.5 * (spec.B() + spec.B().transpose());
  }

  const SystemSpec& spec() const { return spec_; }
  const GridPtr& grid() const { return grid_; }
  const PropagatorPlan& plan() const { return plan_; }
  bool dealias() const { return dealias_; }

  SpectralField mask(const SpectralField& z) const { return dealias_ ? apply_dealias(z) : z; }

  // F = sum_k (bar A^k - A^k(Z)) d_k Z evaluated pointwise, then truncated.
  SpectralField nonlinearity(const SpectralField& Z) const {
    plan_.check(Z);
    SpectralField F(grid_, spec_.n());
    if (active_.empty()) return F;
    const SpectralField Zm = mask(Z);
    const Mat z = to_physical(Zm);
    Mat f = Mat::Zero(z.rows(), z.cols());
    for (int k = 0; k < spec_.d(); ++k) {
      bool any = false;
      for (const auto& km : active_) any = any || km.first == k;
      if (!any) continue;
      const Mat dz = to_physical(derivative(Zm, k));
      for (const auto& [kk, m] : active_) {
        if (kk != k) continue;
        f.noalias() -= z.col(m).asDiagonal() * (dz * spec_.flux.grad[k][m].transpose());
      }
    }
    return mask(from_physical(grid_, f));
  }

  // dZ/dt = -sum bar A^k d_k Z - B Z + F.
  SpectralField time_derivative(const SpectralField& Z) const {
    SpectralField out = nonlinearity(Z);
    for (Eigen::Index m = 0; m < grid_->size(); ++m)
      out.c.row(m) -= (plan_.symbol(m) * Z.c.row(m).transpose()).transpose();
    return out;
  }

  // dt max|xi| max_{k,x} ||A^k(Z(x))||, with the operator norm bounded by the triangle inequality.
  double cfl_number(const SpectralField& Z, double dt) const {
    double amax = 0;
    Mat z;
    if (!active_.empty()) z = to_physical(mask(Z));
    for (int k = 0; k < spec_.d(); ++k) {
      double a = base_norm_[k];
      if (!active_.empty()) {
        Eigen::ArrayXd pt = Eigen::ArrayXd::Constant(z.rows(), base_norm_[k]);
        for (const auto& [kk, m] : active_)
          if (kk == k) pt += z.col(m).array().abs() * gnorm_[k][m];
        a = pt.maxCoeff();
      }
      amax = std::max(amax, a);
    }
    return std::abs(dt) * grid_->max_frequency() * amax;
  }

  // d/dt (1/2)||Z||^2 = (1/2) sum_k int Z . d_k(A^k(Z)) Z - int B Z . Z
  double energy_rate(const SpectralField& Z) const {
    double damp = 0;
    for (Eigen::Index m = 0; m < grid_->size(); ++m) {
      const CVec c = Z.c.row(m).transpose();
      damp += (c.adjoint() * Bsym_.cast<cdouble>() * c)(0, 0).real();
    }
    damp *= grid_->volume();
    if (active_.empty()) return -damp;
    const SpectralField Zm = mask(Z);
    const Mat z = to_physical(Zm);
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(z.rows());
    for (int k = 0; k < spec_.d(); ++k) {
      const Mat dz = to_physical(derivative(Zm, k));
      for (const auto& [kk, m] : active_) {
        if (kk != k) continue;
        const Mat& G = spec_.flux.grad[k][m];
        acc += dz.col(m).array() * (z * G).cwiseProduct(z).rowwise().sum().array();
      }
    }
    return 0.5 * acc.sum() * grid_->cell() - damp;
  }

  // One integrating-factor RK4 step.
  SpectralField step(const SpectralField& Z, double dt) {
    plan_.check(Z);
    if (!(dt != 0.0) || !std::isfinite(dt)) throw InvalidArgument("step: dt must be finite and nonzero");
    const double cfl = cfl_number(Z, dt);
    last_cfl_ = cfl;
    if (!(cfl <= cfl_safety_)) {
      std::ostringstream os;
      os << "step: CFL number " << cfl << " exceeds " << cfl_safety_;
      throw NumericalFailure(os.str());
    }
    if (dt != cached_dt_) {
      Ph_ = plan_.exponentials(dt);
      Phalf_ = plan_.exponentials(0.5 * dt);
      cached_dt_ = dt;
    }
    const double h = dt;
    const CMat& u = Z.c;
    const CMat Pu = detail::apply_blockwise(Phalf_, u);
    const CMat k1 = nonlinearity(Z).c;
    const CMat k2 = nonlinearity({grid_, detail::apply_blockwise(Phalf_, u + 0.5 * h * k1)}).c;
    const CMat k3 = nonlinearity({grid_, Pu + 0.5 * h * k2}).c;
    const CMat k4 = nonlinearity({grid_, detail::apply_blockwise(Ph_, u) + h * detail::apply_blockwise(Phalf_, k3)}).c;
    SpectralField out(grid_, detail::apply_blockwise(Ph_, u + (h / 6.0) * k1) +
                                 (h / 6.0) * (2.0 * detail::apply_blockwise(Phalf_, k2 + k3) + k4));
    if (!out.c.allFinite()) throw NumericalFailure("step: non-finite state");
    return out;
  }

  // W = Z2 + B22^{-1} (sum_k A^k(Z) d_k Z)_2, so that d_t Z2 + B22 W = 0.
  SpectralField damped_mode(const SpectralField& Z) const {
    plan_.check(Z);
    const int n2 = spec_.dims.n2;
    const SpectralField F = nonlinearity(Z);
    const Eigen::PartialPivLU<Mat> lu(spec_.B22());
    const CMat Binv = lu.inverse().cast<cdouble>();
    SpectralField W(grid_, n2);
    for (Eigen::Index m = 0; m < grid_->size(); ++m) {
      const CVec z = Z.c.row(m).transpose();
      const CVec conv = convective_part(m) * z - F.c.row(m).transpose();
      W.c.row(m) = (z.tail(n2) + Binv * conv.tail(n2)).transpose();
    }
    return W;
  }

  double cfl_safety() const { return cfl_safety_; }
  void set_cfl_safety(double s) { cfl_safety_ = s; }
  double last_cfl() const { return last_cfl_; }

 private:
  CMat convective_part(Eigen::Index m) const { return plan_.symbol(m) - plan_.damping(); }

  SystemSpec spec_;
  GridPtr grid_;
  PropagatorPlan plan_;
  bool dealias_;
  std::vector<std::pair<int, int>> active_;
  std::vector<std::vector<double>> gnorm_;
  std::vector<double> base_norm_;
  Mat Bsym_;
  double cfl_safety_ = 2.5;
  double last_cfl_ = 0;
  double cached_dt_ = std::numeric_limits<double>::quiet_NaN();
  std::vector<CMat> Ph_, Phalf_;
};

inline SpectralField step(const SystemSpec& spec, const SpectralField& Z, double dt) {
  NonlinearSolver s(spec, Z.grid);
  return s.step(Z, dt);
}

inline SpectralField damped_mode(const SystemSpec& spec, const SpectralField& Z) {
  return NonlinearSolver(spec, Z.grid).damped_mode(Z);
}

// 0.1 coercivity / ||flux gradients||, with the coercivity of the effective block L2 / epsilon.
inline double smallness_limit(const SystemSpec& spec, double factor = 0.1) {
  const double g = spec.flux.gradient_norm();
  if (g == 0.0) return std::numeric_limits<double>::infinity();
  return factor * sym_min_eig(spec.B22()) / g;
}

inline double low_regularity(const SystemSpec& spec, Regularity r) {
  const double d = spec.d();
  if (r == Regularity::Critical) return 0.5 * d - 1.0;
  if (r == Regularity::Shifted) return 0.5 * d;
  return spec.d() == 1 ? 0.5 * d : 0.5 * d - 1.0;
}

// Per-mode quadratic forms of the certificate, with the block weights folded in.
class LyapunovBlocks {
 public:
  LyapunovBlocks(const LyapunovCertificate& cert, const FilterBank& fb) : fb_(fb) {
    const auto& g = *fb.grid();
    H_.resize(g.size());
    for (Eigen::Index m = 1; m < g.size(); ++m) {
      const double rho = g.nyquist(m) ? 0.0 : g.rho()(m);
      if (rho == 0.0) {
        H_[m] = CMat::Identity(cert.n(), cert.n());
        continue;
      }
      const Vec w = g.xi().col(m).matrix() / rho;
      H_[m] = detail::functional_matrix(cert.epsilons, cert.Bw, cert.A_omega(w), cert.kappa * rho);
    }
  }

  // L_j for j = jmin..jmax.
  Vec blocks(const SpectralField& Z) const {
    const auto& g = *fb_.grid();
    Vec L = Vec::Zero(fb_.count());
    for (Eigen::Index m = 1; m < g.size(); ++m) {
      const CVec z = Z.c.row(m).transpose();
      if (z.squaredNorm() == 0.0) continue;
      const double q = (z.adjoint() * H_[m] * z)(0, 0).real();
      for (int j = fb_.jmin(); j <= fb_.jmax(); ++j) {
        const double w = fb_.weight(m, j);
        if (w != 0.0) L(j - fb_.jmin()) += w * w * q;
      }
    }
    return L * g.volume();
  }

 private:
  const FilterBank& fb_;
  std::vector<CMat> H_;
};

// c/2 such that the per-block linear decay gives L(t) + (c/2) int H <= L(t0).
inline double lyapunov_rate(const LyapunovCertificate& cert, double threshold) {
  const int js = FilterBank::split_index(threshold);
  const double k = cert.kappa;
  const double low = std::min(std::pow(4.0, 1 - js) / k, k / 4.0);
  const double high = std::min(1.0 / k, k * std::pow(4.0, js - 1));
  return 0.5 * cert.c_decay * std::sqrt(cert.h_min) * std::min(low, high);
}

namespace detail {

struct Monitors {
  const SystemSpec& spec;
  const NonlinearSolver& solver;
  const FilterBank& fb;
  const LyapunovBlocks& lb;
  double s_low, threshold;

  TrajectoryRecord record(double t, const SpectralField& Z) const {
    TrajectoryRecord r;
    r.t = t;
    const int n1 = spec.dims.n1, n2 = spec.dims.n2;
    const double h = 0.5 * spec.d();
    const double thr = threshold;
    r.energy = 0.5 * Z.l2_squared();
    const Vec bZ = fb.block_l2(Z);
    const Vec bZ1 = fb.block_l2(SpectralField(Z.grid, Z.c.leftCols(n1)));
    const Vec bZ2 = fb.block_l2(SpectralField(Z.grid, Z.c.rightCols(n2)));
    const SpectralField dZ = solver.time_derivative(Z);
    const Vec bD2 = fb.block_l2(SpectralField(Z.grid, dZ.c.rightCols(n2)));
    const int js = FilterBank::split_index(thr);
    auto full = [&](const Vec& b, double s) { return fb.combine(b, s, false, fb.jmin(), fb.jmax()); };
    r.low = fb.lf_from(bZ, s_low, thr);
    r.high = fb.hf_from(bZ, h + 1, thr);
    r.x = {fb.lf_from(bZ, h - 1, thr), fb.hf_from(bZ, h + 1, thr), full(bZ, h + 1),
           full(bD2, h - 1),          fb.lf_from(bZ2, h, thr),   fb.lf_from(bZ2, h - 1, thr)};
    r.y = {fb.lf_from(bZ, h, thr) + fb.hf_from(bZ, h + 1, thr), fb.lf_from(bZ1, h + 2, thr),
           fb.lf_from(bZ2, h + 1, thr), fb.lf_from(bZ2, h, thr), fb.hf_from(bZ, h + 1, thr), full(bD2, h)};
    const Vec L = lb.blocks(Z);
    double lyap = 0;
    for (int j = fb.jmin(); j <= fb.jmax(); ++j)
      lyap += std::pow(2.0, j * (j < js ? s_low : h + 1)) * std::sqrt(std::max(L(j - fb.jmin()), 0.0));
    r.lyap = lyap;
    r.dissipation = fb.lf_from(bZ, s_low + 2, thr) + fb.hf_from(bZ, h + 1, thr);
    const SpectralField W = solver.damped_mode(Z);
    const Vec bW = fb.block_l2(W);
    r.w_low = fb.lf_from(bW, s_low, thr);
    r.w_high = fb.hf_from(bW, s_low, thr);
    r.max_abs = to_physical(Z).rowwise().norm().maxCoeff();
    r.smallness = full(bZ, h);
    return r;
  }
};

}  // namespace detail

inline TrajectoryReport solve(const SystemSpec& spec, const SpectralField& Z0, const SolverConfig& cfg,
                              const LyapunovCertificate& cert) {
  if (!(cfg.dt > 0) || !(cfg.T >= 0)) throw InvalidArgument("solve: need dt > 0 and T >= 0");
  if (cfg.record_stride < 1) throw InvalidArgument("solve: record_stride must be >= 1");
  if (Z0.grid->d() != spec.d() || Z0.components() != spec.n()) throw InvalidArgument("solve: data does not match system");
  NonlinearSolver solver(spec, Z0.grid, cfg.dealias);
  solver.set_cfl_safety(cfg.cfl_safety);
  const FilterBank fb(Z0.grid);
  const LyapunovBlocks lb(cert, fb);

  TrajectoryReport rep;
  rep.d = spec.d();
  rep.s_low = low_regularity(spec, cfg.regularity);
  rep.threshold = cfg.threshold;
  rep.smallness_limit = smallness_limit(spec, cfg.smallness_factor);
  rep.lyap_rate = lyapunov_rate(cert, cfg.threshold);
  const detail::Monitors mon{spec, solver, fb, lb, rep.s_low, cfg.threshold};

  SpectralField Z = solver.mask(real_projection(Z0));
  const double h = 0.5 * spec.d();
  rep.data_critical = fb.hybrid(Z, h - 1, h + 1, cfg.threshold);
  rep.data_shifted = fb.hybrid(Z, h, h + 1, cfg.threshold);
  const double gate = rep.s_low == h ? rep.data_shifted : rep.data_critical;
  if (gate > cfg.alpha) throw InvalidArgument("solve: data norm exceeds the configured smallness alpha");

  const long nsteps = cfg.T == 0 ? 0 : static_cast<long>(std::ceil(cfg.T / cfg.dt - 1e-9));
  const double dt = nsteps ? cfg.T / nsteps : 0.0;
  rep.dt = dt;

  auto push = [&](double t, double eres) {
    TrajectoryRecord r = mon.record(t, Z);
    r.energy_residual = eres;
    rep.records.push_back(r);
    if (cfg.observer) cfg.observer(t, Z);
    return r.smallness;
  };
  if (push(0.0, 0.0) > rep.smallness_limit) {
    rep.smallness_tripped = true;
    rep.failure = "smallness monitor tripped at t = 0";
    rep.final_state = Z;
    return rep;
  }

  // Simpson over pairs of steps: |E(t+2h) - E(t) - int rate| / (2h E(t))
  double rate_a = solver.energy_rate(Z), rate_b = 0, e_a = 0.5 * Z.l2_squared();
  double window = 0;
  for (long s = 1; s <= nsteps; ++s) {
    SpectralField next;
    try {
      next = solver.step(Z, dt);
    } catch (const NumericalFailure& e) {
      rep.failure = e.what();
      break;
    }
    rep.max_cfl = std::max(rep.max_cfl, solver.last_cfl());
    const double rate1 = solver.energy_rate(next);
    if (s % 2 == 1) {
      rate_b = rate1;
    } else {
      const double e1 = 0.5 * next.l2_squared();
      const double res =
          e_a > 0 ? std::abs(e1 - e_a - (dt / 3.0) * (rate_a + 4.0 * rate_b + rate1)) / (2.0 * dt * e_a) : 0.0;
      window = std::max(window, res);
      rep.max_energy_residual = std::max(rep.max_energy_residual, res);
      rate_a = rate1;
      e_a = e1;
    }
    Z = std::move(next);
    rep.steps = s;
    rep.t_end = s * dt;
    const double small = fb.besov(Z, h);
    if (small > rep.smallness_limit) {
      push(rep.t_end, window);
      rep.smallness_tripped = true;
      std::ostringstream os;
      os << "smallness monitor tripped at t = " << rep.t_end;
      rep.failure = os.str();
      break;
    }
    if (s % cfg.record_stride == 0 || s == nsteps) {
      push(rep.t_end, window);
      window = 0;
    }
  }
  rep.completed = rep.failure.empty() && rep.steps == nsteps;
  rep.final_state = Z;
  return rep;
}

inline TrajectoryReport solve(const SystemSpec& spec, const SpectralField& Z0, const SolverConfig& cfg) {
  return solve(spec, Z0, cfg, construct(spec));
}

namespace detail {

inline double time_functional(const TrajectoryReport& rep, double t, bool critical) {
  const auto& kinds = critical ? kXNorms : kYNorms;
  const auto& R = rep.records;
  if (R.empty()) return 0.0;
  std::array<double, 6> acc{};
  auto val = [&](size_t i, int c) { return critical ? R[i].x[c] : R[i].y[c]; };
  for (int c = 0; c < 6; ++c)
    if (kinds[c] == TimeNorm::Sup) acc[c] = val(0, c);
  for (size_t i = 1; i < R.size() && R[i].t <= t + 1e-12; ++i) {
    const double dt = R[i].t - R[i - 1].t;
    for (int c = 0; c < 6; ++c) {
      const double a = val(i - 1, c), b = val(i, c);
      switch (kinds[c]) {
        case TimeNorm::Sup: acc[c] = std::max(acc[c], b); break;
        case TimeNorm::L1: acc[c] += 0.5 * dt * (a + b); break;
        case TimeNorm::L2: acc[c] += 0.5 * dt * (a * a + b * b); break;
      }
    }
  }
  double total = 0;
  for (int c = 0; c < 6; ++c) total += kinds[c] == TimeNorm::L2 ? std::sqrt(acc[c]) : acc[c];
  return total;
}

}  // namespace detail

inline double functional_X(const TrajectoryReport& rep, double t) { return detail::time_functional(rep, t, true); }
inline double functional_Y(const TrajectoryReport& rep, double t) { return detail::time_functional(rep, t, false); }

struct LyapunovVerdict {
  bool holds = true;
  double max_residual = 0;  // relative to L(0)
  double worst_t0 = 0, worst_t = 0;
  long pairs = 0;
};

// Checks L(t) + rate int_{t0}^t H <= L(t0) + slack L(0) over all recorded pairs.
inline LyapunovVerdict lyapunov_monitor(const TrajectoryReport& rep, double slack = 1e-6, double rate = -1) {
  const double c = rate < 0 ? rep.lyap_rate : rate;
  const auto& R = rep.records;
  std::vector<double> I(R.size(), 0.0);
  for (size_t i = 1; i < R.size(); ++i)
    I[i] = I[i - 1] + 0.5 * (R[i].t - R[i - 1].t) * (R[i].dissipation + R[i - 1].dissipation);
  LyapunovVerdict v;
  v.max_residual = -std::numeric_limits<double>::infinity();
  const double scale = !R.empty() && R[0].lyap > 0 ? R[0].lyap : 1.0;
  for (size_t a = 0; a < R.size(); ++a) {
    const double L0 = R[a].lyap;
    for (size_t b = a; b < R.size(); ++b) {
      const double lhs = R[b].lyap + c * (I[b] - I[a]);
      const double res = (lhs - L0) / scale;
      ++v.pairs;
      if (res > v.max_residual) {
        v.max_residual = res;
        v.worst_t0 = R[a].t;
        v.worst_t = R[b].t;
      }
    }
  }
  if (R.empty()) v.max_residual = 0;
  v.holds = v.max_residual <= slack;
  return v;
}

}  // namespace pds
