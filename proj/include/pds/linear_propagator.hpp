#pragma once

#include "pds/lyapunov_certificate.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace pds {

// Per-mode exponentials of -t E(xi) for a constant-coefficient system on a grid.
class PropagatorPlan {
 public:
  static constexpr double kConditionLimit = 1e6;

  PropagatorPlan(const SystemSpec& spec, GridPtr grid) : grid_(std::move(grid)), n_(spec.n()), n1_(spec.dims.n1) {
    if (grid_->d() != spec.d()) throw InvalidArgument("PropagatorPlan: grid and system dimensions differ");
    const Eigen::Index M = grid_->size();
    E_.resize(M);
    V_.resize(M);
    Vinv_.resize(M);
    lam_.resize(M);
    fast_.assign(M, 0);
    B_ = spec.B().cast<cdouble>();
    B22inv_ = spec.B22().inverse();
    P_ = Mat::Zero(n_, n_);
    P_.bottomRightCorner(n_ - n1_, n_ - n1_).setIdentity();
    for (Eigen::Index m = 0; m < M; ++m) {
      // Nyquist modes carry no derivative, matching the spectral derivative
      const Vec xi = grid_->nyquist(m) ? Vec::Zero(grid_->d()).eval() : grid_->xi().col(m).matrix().eval();
      E_[m] = convective_symbol(spec, xi) + B_;
      Eigen::ComplexEigenSolver<CMat> es(E_[m]);
      if (es.info() != Eigen::Success) continue;
      const CMat& V = es.eigenvectors();
      Eigen::JacobiSVD<CMat> svd(V);
      const auto& sv = svd.singularValues();
      const double cond = sv(0) / sv(sv.size() - 1);
      if (!(cond < kConditionLimit)) continue;
      V_[m] = V;
      Vinv_[m] = V.inverse();
      lam_[m] = es.eigenvalues();
      fast_[m] = 1;
    }
  }

  const GridPtr& grid() const { return grid_; }
  int n() const { return n_; }
  int n1() const { return n1_; }
  const CMat& symbol(Eigen::Index m) const { return E_[m]; }
  const CMat& damping() const { return B_; }
  // Orthogonal projector onto M^perp = {0} x R^{n2}.
  const Mat& projector() const { return P_; }
  const Mat& B22_inverse() const { return B22inv_; }
  bool fast_path(Eigen::Index m) const { return fast_[m] != 0; }
  Eigen::Index fallback_count() const {
    return static_cast<Eigen::Index>(std::count(fast_.begin(), fast_.end(), 0));
  }

  CMat exponential(Eigen::Index m, double t) const {
    if (t == 0.0) return CMat::Identity(n_, n_);
    if (fast_[m]) return V_[m] * (-t * lam_[m].array()).exp().matrix().asDiagonal() * Vinv_[m];
    return (-t * E_[m]).exp();
  }

  std::vector<CMat> exponentials(double t) const {
    std::vector<CMat> out(grid_->size());
    for (Eigen::Index m = 0; m < grid_->size(); ++m) out[m] = exponential(m, t);
    return out;
  }

  SpectralField apply(const SpectralField& z, double t) const {
    check(z);
    if (t == 0.0) return z;
    SpectralField out(z.grid, n_);
    for (Eigen::Index m = 0; m < grid_->size(); ++m) {
      const CVec c = z.c.row(m).transpose();
      if (c.squaredNorm() == 0.0) continue;
      if (fast_[m]) {
        const CVec y = (-t * lam_[m].array()).exp().matrix().cwiseProduct(Vinv_[m] * c);
        out.c.row(m) = (V_[m] * y).transpose();
      } else {
        out.c.row(m) = ((-t * E_[m]).exp() * c).transpose();
      }
    }
    return out;
  }

  void check(const SpectralField& z) const {
    if (z.grid != grid_ && (z.grid->N() != grid_->N() || z.grid->d() != grid_->d() || z.grid->L() != grid_->L()))
      throw InvalidArgument("PropagatorPlan: field lives on another grid");
    if (z.components() != n_) throw InvalidArgument("PropagatorPlan: field has wrong number of components");
  }

 private:
  GridPtr grid_;
  int n_, n1_;
  std::vector<CMat> E_, V_, Vinv_;
  std::vector<CVec> lam_;
  std::vector<unsigned char> fast_;
  CMat B_;
  Mat P_, B22inv_;
};

inline SpectralField propagate(const PropagatorPlan& plan, const SpectralField& Z0, double t) {
  if (t < 0) throw InvalidArgument("propagate: t must be nonnegative");
  return plan.apply(Z0, t);
}

inline SpectralField propagate(const SystemSpec& spec, const SpectralField& Z0, double t) {
  return propagate(PropagatorPlan(spec, Z0.grid), Z0, t);
}

// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
struct Quadrature {
  Vec nodes, weights;
};

inline Quadrature gauss_legendre(int q) {
  if (q < 1 || q > 16) throw InvalidArgument("gauss_legendre: order must be in 1..16");
  Mat J = Mat::Zero(q, q);
  for (int k = 1; k < q; ++k) J(k, k - 1) = J(k - 1, k) = k / std::sqrt(4.0 * k * k - 1.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  Quadrature g{es.eigenvalues(), 2.0 * es.eigenvectors().row(0).array().square().matrix().transpose()};
  return g;
}

using Source = std::function<SpectralField(double)>;

// Source known at sample times; evaluated by local cubic Lagrange interpolation.
struct SampledSource {
  std::vector<double> times;
  std::vector<SpectralField> values;

  double max_gap() const {
    double g = 0;
    for (size_t i = 1; i < times.size(); ++i) g = std::max(g, times[i] - times[i - 1]);
    return g;
  }

  SpectralField operator()(double t) const {
    if (times.empty()) throw InvalidArgument("SampledSource: no samples");
    if (times.size() == 1) return values[0];
    const size_t k = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    const size_t npts = std::min<size_t>(4, times.size());
    size_t lo = k >= 2 ? k - 2 : 0;
    if (lo + npts > times.size()) lo = times.size() - npts;
    SpectralField out(values[lo].grid, values[lo].components());
    for (size_t i = lo; i < lo + npts; ++i) {
      double w = 1.0;
      for (size_t j = lo; j < lo + npts; ++j)
        if (j != i) w *= (t - times[j]) / (times[i] - times[j]);
      out.c += w * values[i].c;
    }
    return out;
  }
};

// One panel: T(h) Z + int_{t0}^{t0+h} T(t0 + h - tau) F(tau) dtau.
inline SpectralField duhamel_step(const PropagatorPlan& plan, const SpectralField& Z, const Source& F, double t0,
                                  double h, const Quadrature& q) {
  SpectralField out = plan.apply(Z, h);
  if (!F) return out;
  for (Eigen::Index i = 0; i < q.nodes.size(); ++i) {
    const double s = 0.5 * h * (q.nodes(i) + 1.0);
    const SpectralField f = F(t0 + s);
    plan.check(f);
    out.c += (0.5 * h * q.weights(i)) * plan.apply(f, h - s).c;
  }
  return out;
}

inline SpectralField duhamel(const PropagatorPlan& plan, const SpectralField& Z0, const Source& F, double t,
                             double panel_width, int nodes = 4) {
  if (t < 0) throw InvalidArgument("duhamel: t must be nonnegative");
  if (!(panel_width > 0)) throw InvalidArgument("duhamel: panel width must be positive");
  if (t == 0) return Z0;
  const int panels = static_cast<int>(std::ceil(t / panel_width - 1e-12));
  const double h = t / panels;
  const Quadrature q = gauss_legendre(nodes);
  SpectralField Z = Z0;
  for (int k = 0; k < panels; ++k) Z = duhamel_step(plan, Z, F, k * h, h, q);
  return Z;
}

inline SpectralField duhamel(const PropagatorPlan& plan, const SpectralField& Z0, const SampledSource& F, double t,
                             double panel_width, int nodes = 4) {
  if (F.max_gap() > panel_width * (1 + 1e-12))
    throw InvalidArgument("duhamel: source sampling is coarser than the panel width");
  if (!F.times.empty() && (F.times.front() > 0 || F.times.back() < t))
    throw InvalidArgument("duhamel: source samples do not cover [0, t]");
  return duhamel(plan, Z0, Source([&F](double s) { return F(s); }), t, panel_width, nodes);
}

// W = P E(D) Z restricted to the last n2 components; normalized = B22^{-1} of that,
// i.e. Z2 + B22^{-1}(A21(D) Z1 + A22(D) Z2).
inline SpectralField damped_mode_linear(const PropagatorPlan& plan, const SpectralField& Z, bool normalized = false) {
  plan.check(Z);
  const int n1 = plan.n1(), n2 = plan.n() - n1;
  SpectralField W(Z.grid, n2);
  const CMat Binv = plan.B22_inverse().cast<cdouble>();
  for (Eigen::Index m = 0; m < Z.grid->size(); ++m) {
    const CMat& E = plan.symbol(m);
    CVec w = E.bottomRows(n2) * Z.c.row(m).transpose();
    if (normalized) w = Binv * w;
    W.c.row(m) = w.transpose();
  }
  return W;
}

inline SpectralField damped_mode_linear(const SystemSpec& spec, const SpectralField& Z, bool normalized = false) {
  return damped_mode_linear(PropagatorPlan(spec, Z.grid), Z, normalized);
}

struct ModeDecayReport {
  double max_ratio = 0;
  Eigen::Index worst_mode = -1;
  double worst_time = 0;
};

// max over modes and times of |Z(t, xi)| / (envelope(xi, t) |Z0(xi)|)
inline ModeDecayReport verify_mode_decay(const PropagatorPlan& plan, const LyapunovCertificate& cert,
                                         const SpectralField& Z0, const std::vector<double>& times) {
  plan.check(Z0);
  ModeDecayReport r;
  const auto& g = *Z0.grid;
  for (double t : times) {
    const SpectralField Z = plan.apply(Z0, t);
    for (Eigen::Index m = 0; m < g.size(); ++m) {
      const double z0 = Z0.c.row(m).norm();
      if (z0 == 0.0) continue;
      const Vec xi = g.nyquist(m) ? Vec::Zero(g.d()).eval() : g.xi().col(m).matrix().eval();
      const double ratio = Z.c.row(m).norm() / (decay_envelope(cert, xi, t) * z0);
      if (ratio > r.max_ratio) {
        r.max_ratio = ratio;
        r.worst_mode = m;
        r.worst_time = t;
      }
    }
  }
  return r;
}

struct AprioriReport {
  double lhs = 0;                 // with certified per-block rates
  double rhs = 0;                 // 2 (||Z0|| + int ||F||)
  double residual = 0;            // lhs - rhs
  double lhs_raw = 0;             // ||Z(t)|| + int (||Z||^l_{s+2} + ||Z||^h_{s'})
  double data = 0;                // ||Z0|| + int ||F||
  double measured_constant = 0;   // lhs_raw / data
};

// Block-level a priori inequality along a Duhamel trajectory on [0, t] with `steps` panels.
inline AprioriReport a_priori_residual(const PropagatorPlan& plan, const FilterBank& fb,
                                       const LyapunovCertificate& cert, const SpectralField& Z0, const Source& F,
                                       double t, double s, double s_high, int steps = 200, double threshold = 1.0) {
  plan.check(Z0);
  if (t < 0 || steps < 1) throw InvalidArgument("a_priori_residual: need t >= 0 and steps >= 1");
  const int js = FilterBank::split_index(threshold);
  const int nb = fb.count();
  auto weight = [&](int j) { return std::pow(2.0, j * (j < js ? s : s_high)); };
  auto hybrid = [&](const Vec& b) {
    double v = 0;
    for (int j = fb.jmin(); j <= fb.jmax(); ++j) v += weight(j) * b(j - fb.jmin());
    return v;
  };
  const double c = 0.5 * cert.c_decay;
  Vec rate(nb);
  for (int j = fb.jmin(); j <= fb.jmax(); ++j)
    rate(j - fb.jmin()) = c * std::min(1.0 / cert.kappa, cert.kappa * std::ldexp(1.0, 2 * (j - 1)));

  const Quadrature q = gauss_legendre(4);
  const double h = t / steps;
  SpectralField Z = Z0;
  Vec b_prev = fb.block_l2(Z0);
  Vec int_blocks = Vec::Zero(nb);
  double int_raw = 0, int_f = 0;
  auto raw_dissipation = [&](const Vec& b) { return fb.lf_from(b, s + 2, threshold) + fb.hf_from(b, s_high, threshold); };
  double raw_prev = raw_dissipation(b_prev);
  double f_prev = F ? hybrid(fb.block_l2(F(0.0))) : 0.0;
  for (int k = 0; k < steps && t > 0; ++k) {
    Z = duhamel_step(plan, Z, F, k * h, h, q);
    const Vec b = fb.block_l2(Z);
    int_blocks += 0.5 * h * (b + b_prev);
    const double raw = raw_dissipation(b);
    int_raw += 0.5 * h * (raw + raw_prev);
    if (F) {
      const double fn = hybrid(fb.block_l2(F((k + 1) * h)));
      int_f += 0.5 * h * (fn + f_prev);
      f_prev = fn;
    }
    b_prev = b;
    raw_prev = raw;
  }
  AprioriReport r;
  const Vec bt = fb.block_l2(Z);
  r.data = hybrid(fb.block_l2(Z0)) + int_f;
  for (int j = fb.jmin(); j <= fb.jmax(); ++j) {
    const int i = j - fb.jmin();
    r.lhs += weight(j) * (bt(i) + rate(i) * int_blocks(i));
  }
  r.rhs = 2.0 * r.data;
  r.residual = r.lhs - r.rhs;
  r.lhs_raw = hybrid(bt) + int_raw;
  r.measured_constant = r.data > 0 ? r.lhs_raw / r.data : 0.0;
  return r;
}

using HermitianSymbol = std::function<CMat(const Vec& xi)>;

struct SemigroupBound {
  double ratio = 0;
  double c0 = 0;
  double annulus_constant = 0;  // inf over supp phi_j of lambda_min(A(xi)) / 2^{gamma j}
};

// ||Delta_j e^{-t A(D)} z||_{L^p} / (e^{-c0 2^{gamma j} t} ||Delta_j z||_{L^p}), c0 half the annulus constant.
inline SemigroupBound semigroup_lp_bound(const FilterBank& fb, const HermitianSymbol& A, double gamma, int j, double t,
                                         int p, const SpectralField& z) {
  const auto& g = *z.grid;
  SemigroupBound r;
  r.annulus_constant = std::numeric_limits<double>::infinity();
  const SpectralField zj = fb.block(z, j);
  SpectralField out(z.grid, z.components());
  for (Eigen::Index m = 1; m < g.size(); ++m) {
    if (fb.weight(m, j) == 0.0) continue;
    const Vec xi = g.xi().col(m);
    const CMat a = A(xi);
    if ((a - a.adjoint()).norm() > 1e-12 * (1 + a.norm())) throw InvalidArgument("semigroup_lp_bound: symbol not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat> es(a);
    const double lmin = es.eigenvalues()(0);
    if (!(lmin > 0)) throw InvalidArgument("semigroup_lp_bound: symbol is not strictly elliptic");
    r.annulus_constant = std::min(r.annulus_constant, lmin / std::pow(2.0, gamma * j));
    const CMat et = es.eigenvectors() * (-t * es.eigenvalues().array()).exp().matrix().asDiagonal() *
                    es.eigenvectors().adjoint();
    out.c.row(m) = (et * zj.c.row(m).transpose()).transpose();
  }
  r.c0 = 0.5 * r.annulus_constant;
  const double den = fb.lp_norm(zj, p);
  r.ratio = den > 0 ? fb.lp_norm(out, p) / (std::exp(-r.c0 * std::pow(2.0, gamma * j) * t) * den) : 0.0;
  return r;
}

}  // namespace pds
