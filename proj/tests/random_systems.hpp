#pragma once

#include "pds/symbol_analysis.hpp"

#include <random>

namespace pds::testing {

struct SymbolPair {
  CMat A;
  CMat B;
  bool constructed_failure = false;
};

inline CMat random_complex(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> g;
  CMat M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = cdouble(g(rng), g(rng));
  return M;
}

// B = diag(0, B22) with B22 having a positive symmetric part; A skew-Hermitian.
// With fail = true, a unit vector of ker B is planted as an eigenvector of A.
inline SymbolPair random_symbol_pair(std::mt19937_64& rng, int n, int n1, bool fail) {
  std::normal_distribution<double> g;
  SymbolPair p;
  p.constructed_failure = fail;
  CMat M = random_complex(rng, n, n);
  p.A = 0.5 * (M - M.adjoint());
  const int n2 = n - n1;
  Mat R(n2, n2), S(n2, n2);
  for (int i = 0; i < n2; ++i)
    for (int j = 0; j < n2; ++j) { R(i, j) = g(rng); S(i, j) = g(rng); }
  Mat B22 = R * R.transpose() + 0.5 * Mat::Identity(n2, n2) + 0.3 * (S - S.transpose());
  p.B = CMat::Zero(n, n);
  p.B.bottomRightCorner(n2, n2) = B22.cast<cdouble>();
  if (fail) {
    CVec v = CVec::Zero(n);
    for (int i = 0; i < n1; ++i) v(i) = cdouble(g(rng), g(rng));
    v /= v.norm();
    const CMat P = CMat::Identity(n, n) - v * v.adjoint();
    p.A = P * p.A * P + kI * g(rng) * (v * v.adjoint());
    p.A = 0.5 * (p.A - p.A.adjoint()).eval();
  }
  return p;
}

// Constant-coefficient real symmetric system with barA_11 = 0.
inline SystemSpec random_structured_system(std::mt19937_64& rng, int n1, int n2, int d) {
  std::normal_distribution<double> g;
  const int n = n1 + n2;
  std::vector<Mat> base;
  for (int k = 0; k < d; ++k) {
    Mat A = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        if (i < n1 && j < n1) continue;
        A(i, j) = A(j, i) = g(rng);
      }
    base.push_back(A);
  }
  Mat R(n2, n2);
  for (int i = 0; i < n2; ++i)
    for (int j = 0; j < n2; ++j) R(i, j) = g(rng);
  Mat L2 = R * R.transpose() + 0.5 * Mat::Identity(n2, n2);
  return make_linear_system(base, L2, n1);
}

}  // namespace pds::testing
