#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pds {

using cdouble = std::complex<double>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cdouble kI{0.0, 1.0};

// Thrown for inputs that violate an operation's preconditions.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a numerical routine cannot deliver (NaN, CFL, bisection exhausted).
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RankResult {
  int rank = 0;
  double smallest_retained = 0.0;
  double threshold = 0.0;
  Vec singular_values;
};

// Numerical rank via SVD, threshold max(rows, cols) * eps * sigma_max.
inline RankResult numerical_rank(const CMat& K) {
  RankResult out;
  const Eigen::Index n = K.cols();
  if (K.size() == 0) return out;
  const CMat& Ks = K;
  Eigen::JacobiSVD<CMat> svd(Ks);
  out.singular_values = svd.singularValues();
  const double smax = out.singular_values.size() ? out.singular_values(0) : 0.0;
  out.threshold = static_cast<double>(std::max(K.rows(), n)) * std::numeric_limits<double>::epsilon() * smax;
  out.smallest_retained = 0.0;
  for (Eigen::Index i = 0; i < out.singular_values.size(); ++i) {
    if (out.singular_values(i) > out.threshold) {
      ++out.rank;
      out.smallest_retained = out.singular_values(i);
    }
  }
  return out;
}

// Stacked (B; BA; ...; BA^{n-1}).
inline CMat kalman_matrix(const CMat& A, const CMat& B) {
  const Eigen::Index n = A.rows();
  CMat K(n * n, n);
  CMat P = B;
  for (Eigen::Index l = 0; l < n; ++l) {
    K.block(l * n, 0, n, n) = P;
    P = P * A;
  }
  return K;
}

inline double sym_min_eig(const Mat& M) {
  Mat S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double herm_max_eig(const CMat& M) {
  CMat S = 0.5 * (M + M.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

inline double herm_min_eig(const CMat& M) {
  CMat S = 0.5 * (M + M.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Ordinary least squares slope/intercept of y on x.
struct LineFit {
  double slope = 0, intercept = 0, residual = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_line: need >= 2 matching points");
  const double m = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) { sx += x[i]; sy += y[i]; }
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) throw InvalidArgument("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rr = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    rr += e * e;
  }
  f.residual = std::sqrt(rr / m);
  return f;
}

}  // namespace pds
