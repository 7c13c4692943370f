#pragma once

#include "pds/spectral.hpp"

#include <map>

namespace pds {

enum class CutoffKind { Smoothstep3, Smoothstep5, Mollified };

// Radial cutoff chi: 1 on [0,1], 0 on [2, inf).
inline double chi(double rho, CutoffKind kind = CutoffKind::Smoothstep5) {
  if (rho <= 1.0) return 1.0;
  if (rho >= 2.0) return 0.0;
  const double t = rho - 1.0;
  switch (kind) {
    case CutoffKind::Smoothstep3:
      return 1.0 - t * t * (3.0 - 2.0 * t);
    case CutoffKind::Smoothstep5:
      return 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    case CutoffKind::Mollified: {
      const double a = std::exp(-1.0 / (1.0 - t)), b = std::exp(-1.0 / t);
      return a / (a + b);
    }
  }
  return 0.0;
}

// phi(2^{-j} xi) = chi(2^{-j} xi) - chi(2^{1-j} xi), supported in 2^{j-1} <= |xi| <= 2^{j+1}.
inline double phi_j(double rho, int j, CutoffKind kind = CutoffKind::Smoothstep5) {
  return chi(std::ldexp(rho, -j), kind) - chi(std::ldexp(rho, 1 - j), kind);
}

struct NormSpec {
  double s = 0;
  int p = 2;       // 1, 2, or 0 for infinity
  bool sup = false;  // q = infinity
};

inline constexpr int kInf = 0;

class FilterBank {
 public:
  explicit FilterBank(GridPtr g, CutoffKind kind = CutoffKind::Smoothstep5) : grid_(std::move(g)), kind_(kind) {
    const double rmin = grid_->min_frequency();
    const double rmax = grid_->max_frequency();
    jmin_ = static_cast<int>(std::floor(std::log2(rmin)));
    jmax_ = static_cast<int>(std::ceil(std::log2(rmax)));
    const Eigen::Index M = grid_->size();
    j0_.resize(M);
    w0_.resize(M);
    w1_.resize(M);
    for (Eigen::Index m = 0; m < M; ++m) {
      const double r = grid_->rho()(m);
      if (r == 0.0) {
        j0_(m) = jmin_ - 10;
        w0_(m) = w1_(m) = 0.0;
        continue;
      }
      int j = static_cast<int>(std::floor(std::log2(r)));
      // guard log2 rounding at exact powers of two
      if (std::ldexp(1.0, j) > r) --j;
      if (std::ldexp(1.0, j + 1) <= r) ++j;
      j0_(m) = j;
      w0_(m) = phi_j(r, j, kind_);
      w1_(m) = phi_j(r, j + 1, kind_);
    }
  }

  const GridPtr& grid() const { return grid_; }
  CutoffKind kind() const { return kind_; }
  int jmin() const { return jmin_; }
  int jmax() const { return jmax_; }
  int count() const { return jmax_ - jmin_ + 1; }

  // phi_j at mode m.
  double weight(Eigen::Index m, int j) const {
    if (j == j0_(m)) return w0_(m);
    if (j == j0_(m) + 1) return w1_(m);
    return 0.0;
  }

  Eigen::ArrayXd mask(int j) const {
    Eigen::ArrayXd w(grid_->size());
    for (Eigen::Index m = 0; m < grid_->size(); ++m) w(m) = weight(m, j);
    return w;
  }

  // max over nonzero modes of |sum_j phi_j - 1|
  double partition_residual() const {
    double r = 0;
    for (Eigen::Index m = 1; m < grid_->size(); ++m) {
      double s = 0;
      for (int j = jmin_; j <= jmax_; ++j) s += weight(m, j);
      r = std::max(r, std::abs(s - 1.0));
    }
    return r;
  }

  SpectralField block(const SpectralField& u, int j) const {
    SpectralField out(u.grid, u.components());
    for (Eigen::Index m = 0; m < grid_->size(); ++m) {
      const double w = weight(m, j);
      if (w != 0.0) out.c.row(m) = w * u.c.row(m);
    }
    return out;
  }

  // ||Delta_j u||_{L^2} for j = jmin..jmax (index j - jmin).
  Vec block_l2(const SpectralField& u) const {
    Vec e = Vec::Zero(count());
    for (Eigen::Index m = 1; m < grid_->size(); ++m) {
      const double a = u.c.row(m).squaredNorm();
      if (a == 0.0) continue;
      const int i = j0_(m) - jmin_;
      if (i >= 0 && i < count()) e(i) += w0_(m) * w0_(m) * a;
      if (i + 1 >= 0 && i + 1 < count()) e(i + 1) += w1_(m) * w1_(m) * a;
    }
    return (e * grid_->volume()).cwiseSqrt();
  }

  // ||Delta_j u||_{L^p} for p in {1, 2, inf}.
  Vec block_lp(const SpectralField& u, int p) const {
    if (p == 2) return block_l2(u);
    if (p != 1 && p != kInf) throw InvalidArgument("block_lp: p must be 1, 2 or infinity");
    Vec out = Vec::Zero(count());
    for (int j = jmin_; j <= jmax_; ++j) out(j - jmin_) = lp_norm(block(u, j), p);
    return out;
  }

  double lp_norm(const SpectralField& u, int p) const {
    const Mat x = to_physical(u);
    const Eigen::ArrayXd pt = x.rowwise().norm().array();
    if (p == kInf) return pt.maxCoeff();
    if (p == 1) return pt.sum() * grid_->cell();
    if (p == 2) return std::sqrt(pt.square().sum() * grid_->cell());
    throw InvalidArgument("lp_norm: p must be 1, 2 or infinity");
  }

  // Weighted combination of block norms restricted to jlo <= j <= jhi.
  double combine(const Vec& blocks, double s, bool sup, int jlo, int jhi) const {
    double acc = 0.0, comp = 0.0;
    for (int j = std::max(jlo, jmin_); j <= std::min(jhi, jmax_); ++j) {
      const double v = std::pow(2.0, j * s) * blocks(j - jmin_);
      if (sup) {
        acc = std::max(acc, v);
      } else {
        // Kahan summation for a fixed-order, low-error total
        const double y = v - comp;
        const double t = acc + y;
        comp = (t - acc) - y;
        acc = t;
      }
    }
    return acc;
  }

  double besov(const SpectralField& u, double s, int p = 2, bool sup = false) const {
    return combine(block_lp(u, p), s, sup, jmin_, jmax_);
  }

  // Index of the first block counted as high frequency: 2^j >= threshold.
  static int split_index(double threshold) {
    return static_cast<int>(std::ceil(std::log2(threshold) - 1e-12));
  }

  double lf(const SpectralField& u, double s, double threshold = 1.0, int p = 2) const {
    return combine(block_lp(u, p), s, false, jmin_, split_index(threshold) - 1);
  }
  double hf(const SpectralField& u, double s, double threshold = 1.0, int p = 2) const {
    return combine(block_lp(u, p), s, false, split_index(threshold), jmax_);
  }
  double hybrid(const SpectralField& u, double s_low, double s_high, double threshold = 1.0, int p = 2) const {
    const Vec b = block_lp(u, p);
    const int js = split_index(threshold);
    return combine(b, s_low, false, jmin_, js - 1) + combine(b, s_high, false, js, jmax_);
  }

  // Cheap versions from precomputed L2 blocks.
  double lf_from(const Vec& b, double s, double threshold = 1.0) const {
    return combine(b, s, false, jmin_, split_index(threshold) - 1);
  }
  double hf_from(const Vec& b, double s, double threshold = 1.0) const {
    return combine(b, s, false, split_index(threshold), jmax_);
  }

 private:
  GridPtr grid_;
  CutoffKind kind_;
  int jmin_ = 0, jmax_ = 0;
  Eigen::ArrayXi j0_;
  Eigen::ArrayXd w0_, w1_;
};

// Coefficientwise scalar multiplier; the zero mode is mapped to zero.
inline SpectralField multiplier_apply(const SpectralField& u, const std::function<cdouble(const Vec& xi)>& M) {
  SpectralField out(u.grid, u.components());
  const auto& xi = u.grid->xi();
  for (Eigen::Index m = 1; m < u.grid->size(); ++m) out.c.row(m) = M(xi.col(m).matrix()) * u.c.row(m);
  return out;
}

// Matrix-valued multiplier: out(xi) = M(xi) u(xi).
inline SpectralField multiplier_apply_matrix(const SpectralField& u, const std::function<CMat(const Vec& xi)>& M,
                                             int out_components) {
  SpectralField out(u.grid, out_components);
  const auto& xi = u.grid->xi();
  for (Eigen::Index m = 1; m < u.grid->size(); ++m)
    out.c.row(m) = (M(xi.col(m).matrix()) * u.c.row(m).transpose()).transpose();
  return out;
}

// Homogeneous |D|^s (zero mode dropped).
inline SpectralField fractional_derivative(const SpectralField& u, double s) {
  return multiplier_apply(u, [s](const Vec& xi) { return cdouble(std::pow(xi.norm(), s), 0.0); });
}

struct BernsteinReport {
  double direct = 0;   // ||D^a u||_{L^q} / (lambda^{a + d(1/p-1/q)} ||u||_{L^p})
  double reverse = 0;  // ||D^a u||_{L^p} / (lambda^a ||u||_{L^p})
  double lambda = 0;
};

inline double inv_p(int p) { return p == kInf ? 0.0 : 1.0 / p; }

// Spectral support of u must lie in the ball |xi| <= 2 lambda; for the reverse ratio, in the annulus [lambda/2, 2 lambda].
inline BernsteinReport bernstein_check(const FilterBank& fb, const SpectralField& u, double lambda, int order, int p,
                                       int q) {
  const auto& rho = u.grid->rho();
  bool annulus = true;
  // transform rounding leaves ~1e-17 residue outside the support
  const double floor2 = 1e-26 * u.c.rowwise().squaredNorm().maxCoeff();
  for (Eigen::Index m = 0; m < u.grid->size(); ++m) {
    if (u.c.row(m).squaredNorm() <= floor2) continue;
    if (rho(m) > 2.0 * lambda * (1 + 1e-12)) throw InvalidArgument("bernstein_check: field not localized in the ball");
    if (rho(m) < 0.5 * lambda * (1 - 1e-12)) annulus = false;
  }
  BernsteinReport r;
  r.lambda = lambda;
  const SpectralField du = fractional_derivative(u, order);
  const double d = u.grid->d();
  r.direct = fb.lp_norm(du, q) / (std::pow(lambda, order + d * (inv_p(p) - inv_p(q))) * fb.lp_norm(u, p));
  r.reverse = annulus ? fb.lp_norm(du, p) / (std::pow(lambda, order) * fb.lp_norm(u, p))
                      : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace pds
