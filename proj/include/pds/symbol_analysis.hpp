#pragma once

#include "pds/system_model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <utility>

namespace pds {

struct DirectionSample {
  int d = 1;
  int size_parameter = 0;
  std::vector<Vec> directions;
};

// +-e_k plus m*(d-1) quasi-uniform directions (golden-angle circle / Fibonacci sphere).
inline DirectionSample make_direction_sample(int d, int m = 64) {
  if (d < 1 || d > 3) throw InvalidArgument("make_direction_sample: d must be in {1,2,3}");
  DirectionSample s;
  s.d = d;
  s.size_parameter = m;
  for (int k = 0; k < d; ++k) {
    Vec e = Vec::Zero(d);
    e(k) = 1.0;
    s.directions.push_back(e);
    s.directions.push_back(-e);
  }
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  if (d == 2) {
    for (int i = 0; i < m; ++i) {
      const double th = 2.0 * kPi * std::fmod((i + 0.5) * golden, 1.0);
      Vec w(2);
      w << std::cos(th), std::sin(th);
      s.directions.push_back(w);
    }
  } else if (d == 3) {
    const int cnt = 2 * m;
    for (int i = 0; i < cnt; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / cnt;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double th = 2.0 * kPi * std::fmod(i * golden, 1.0);
      Vec w(3);
      w << rho * std::cos(th), rho * std::sin(th), z;
      s.directions.push_back(w / w.norm());
    }
  }
  return s;
}

struct FrequencySymbol {
  CMat A;
  CMat B;
  CMat E;
};

// i sum_k xi_k barA^k
inline CMat convective_symbol(const SystemSpec& spec, const Vec& xi) {
  if (xi.size() != spec.d()) throw InvalidArgument("convective_symbol: xi has wrong dimension");
  Mat S = Mat::Zero(spec.n(), spec.n());
  for (int k = 0; k < spec.d(); ++k) S += xi(k) * spec.flux.base[k];
  return kI * S.cast<cdouble>();
}

inline FrequencySymbol symbol_at(const SystemSpec& spec, const Vec& xi) {
  FrequencySymbol f;
  f.A = convective_symbol(spec, xi);
  f.B = spec.B().cast<cdouble>();
  f.E = f.A + f.B;
  return f;
}

inline RankResult kalman_rank(const CMat& A_omega, const CMat& B) {
  if (A_omega.rows() != A_omega.cols() || B.rows() != B.cols() || A_omega.rows() != B.rows())
    throw InvalidArgument("kalman_rank: need square matrices of equal size");
  return numerical_rank(kalman_matrix(A_omega, B));
}

namespace detail {

// Eigen-decomposition of a skew-Hermitian A through the Hermitian matrix -iA.
struct SkewEigen {
  Vec mu;   // A v = i mu v
  CMat V;
};

inline SkewEigen skew_eigen(const CMat& A) {
  CMat H = -kI * A;
  H = 0.5 * (H + H.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMat> es(H);
  return {es.eigenvalues(), es.eigenvectors()};
}

// First vector in (eigenspace of A) ∩ ker B, if any. Eigenspaces are clustered with a relative gap.
inline std::optional<CVec> kernel_eigenvector(const CMat& A, const CMat& B, double ker_tol) {
  const SkewEigen se = skew_eigen(A);
  const Eigen::Index n = A.rows();
  const double scale = std::max(1.0, se.mu.cwiseAbs().maxCoeff());
  const double bnorm = std::max(B.norm(), 1e-300);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i + 1;
    while (j < n && se.mu(j) - se.mu(j - 1) <= 1e-8 * scale) ++j;
    const CMat Vb = se.V.middleCols(i, j - i);
    const CMat BV = B * Vb;
    Eigen::JacobiSVD<CMat> svd(BV, Eigen::ComputeFullV);
    const Vec sv = svd.singularValues();
    const Eigen::Index m = j - i;
    const double smin = (sv.size() < m) ? 0.0 : sv(m - 1);
    if (smin <= ker_tol * bnorm) {
      CVec w = Vb * svd.matrixV().col(m - 1);
      return w / w.norm();
    }
    i = j;
  }
  return std::nullopt;
}

}  // namespace detail

struct SkVerdict {
  bool holds = true;
  int directions_checked = 0;
  int min_rank = 0;
  std::optional<Vec> failing_omega;
  std::optional<CVec> witness;
  std::string sampling_caveat =
      "SK decided on a finite direction sample; directions between samples are not certified";
};

inline SkVerdict sk_condition(const SystemSpec& spec, const DirectionSample& sample) {
  if (sample.directions.empty()) throw InvalidArgument("sk_condition: empty direction sample");
  SkVerdict v;
  const CMat B = spec.B().cast<cdouble>();
  v.min_rank = spec.n();
  for (const Vec& w : sample.directions) {
    const CMat Aw = convective_symbol(spec, w);
    const RankResult rr = kalman_rank(Aw, B);
    ++v.directions_checked;
    v.min_rank = std::min(v.min_rank, rr.rank);
    if (rr.rank < spec.n() && v.holds) {
      v.holds = false;
      v.failing_omega = w;
      v.witness = detail::kernel_eigenvector(Aw, B, 1e-10);
    }
  }
  return v;
}

inline SkVerdict sk_condition(const SystemSpec& spec) {
  return sk_condition(spec, make_direction_sample(spec.d()));
}

struct LemmaReport {
  bool positivity = false;   // (1) inf over the sphere of sum |B A^l eta|^2 > 0
  bool kalman = false;       // (2) Kalman rank = n
  bool no_kernel_eigvec = false;  // (3) no eigenvector of A in ker B
  bool spectral = false;     // (4) min Re eig(A+B) > tol
  double gram_min = 0, gram_max = 0;
  int rank = 0;
  double abscissa = 0;
  bool agree() const {
    return positivity == kalman && kalman == no_kernel_eigvec && no_kernel_eigvec == spectral;
  }
};

struct LemmaTolerances {
  double eig_real = 1e-9;
  double kernel = 1e-10;
  double gram_relative = 1e-10;
};

inline LemmaReport check_lemma_equivalences(const CMat& A, const CMat& B, const LemmaTolerances& tol = {}) {
  const Eigen::Index n = A.rows();
  LemmaReport r;
  const CMat K = kalman_matrix(A, B);
  CMat G = K.adjoint() * K;
  G = 0.5 * (G + G.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMat> ges(G, Eigen::EigenvaluesOnly);
  r.gram_min = ges.eigenvalues()(0);
  r.gram_max = ges.eigenvalues()(n - 1);
  r.positivity = r.gram_min > tol.gram_relative * r.gram_max;
  const RankResult rr = numerical_rank(K);
  r.rank = rr.rank;
  r.kalman = rr.rank == n;
  r.no_kernel_eigvec = !detail::kernel_eigenvector(A, B, tol.kernel).has_value();
  Eigen::ComplexEigenSolver<CMat> ces(A + B, false);
  r.abscissa = ces.eigenvalues().real().minCoeff();
  r.spectral = r.abscissa > tol.eig_real;
  return r;
}

struct AbscissaResult {
  double abscissa = 0;
  std::vector<cdouble> eigenvalues;
};

inline AbscissaResult spectral_abscissa(const SystemSpec& spec, const Vec& xi) {
  const FrequencySymbol f = symbol_at(spec, xi);
  Eigen::ComplexEigenSolver<CMat> ces(f.E, false);
  AbscissaResult r;
  r.abscissa = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ces.eigenvalues().size(); ++i) {
    r.eigenvalues.push_back(ces.eigenvalues()(i));
    r.abscissa = std::min(r.abscissa, ces.eigenvalues()(i).real());
  }
  std::sort(r.eigenvalues.begin(), r.eigenvalues.end(), [](cdouble a, cdouble b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return r;
}

// Closed-form eigenvalues (lambda+, lambda-) of [[0, i xi], [i xi, 1/eps]].
inline std::pair<cdouble, cdouble> euler_dispersion(double xi, double epsilon) {
  if (!(epsilon > 0)) throw InvalidArgument("euler_dispersion: epsilon must be positive");
  const double h = 0.5 / epsilon;
  const double q = 2.0 * epsilon * xi;
  const double disc = 1.0 - q * q;
  if (disc >= 0) {
    const double s = std::sqrt(disc);
    // lambda- via the product lambda+ lambda- = xi^2 to avoid cancellation
    const double lp = h * (1.0 + s);
    return {cdouble(lp, 0.0), cdouble(xi * xi / lp, 0.0)};
  }
  const double s = std::sqrt(-disc);
  return {cdouble(h, h * s), cdouble(h, -h * s)};
}

struct EllipticResult {
  double lambda_min = 0;
  Vec worst_omega;
  bool positive = false;
};

inline EllipticResult elliptic_block_check(const SystemSpec& spec, const DirectionSample& sample) {
  const int n1 = spec.dims.n1, n2 = spec.dims.n2;
  for (const Mat& A : spec.flux.base)
    if (A.topLeftCorner(n1, n1).cwiseAbs().maxCoeff() != 0.0)
      throw InvalidArgument("elliptic_block_check: requires barA^k_11 = 0");
  const Mat Binv = spec.B22().inverse();
  EllipticResult r;
  r.lambda_min = std::numeric_limits<double>::infinity();
  for (const Vec& w : sample.directions) {
    Mat A12 = Mat::Zero(n1, n2), A21 = Mat::Zero(n2, n1);
    for (int k = 0; k < spec.d(); ++k) {
      A12 += w(k) * spec.flux.base[k].topRightCorner(n1, n2);
      A21 += w(k) * spec.flux.base[k].bottomLeftCorner(n2, n1);
    }
    const double lm = sym_min_eig(A12 * Binv * A21);
    if (lm < r.lambda_min) {
      r.lambda_min = lm;
      r.worst_omega = w;
    }
  }
  r.positive = r.lambda_min > 1e-12;
  return r;
}

}  // namespace pds
