#pragma once

#include "pds/core.hpp"

#include <sstream>

namespace pds {

struct BlockDims {
  int n1 = 1;
  int n2 = 1;
  int d = 1;
  int n() const { return n1 + n2; }
};

struct StructureFlags {
  bool h3 = false;          // bar A^k_11 = 0 and A^k_11 linear in Z2
  bool a11_z2_only = false; // tilde A_11 linear in Z2, independent of Z1
  bool offdiag_z1_only = false;  // tilde A_12, tilde A_21 linear in Z1, independent of Z2
  bool a22_linear = false;  // tilde A_22 linear in Z (automatic for affine families)
  bool sk = false;          // SK for (A(xi), B)
  bool all_relax() const { return a11_z2_only && offdiag_z1_only && a22_linear && sk; }
};

// A^k(Z) = base[k] + sum_m Z_m grad[k][m].
struct AffineFluxFamily {
  std::vector<Mat> base;
  std::vector<std::vector<Mat>> grad;
  StructureFlags flags;

  int d() const { return static_cast<int>(base.size()); }

  Mat eval(int k, const Vec& Z) const {
    Mat A = base.at(k);
    const auto& g = grad.at(k);
    for (size_t m = 0; m < g.size(); ++m)
      if (Z(m) != 0.0) A += Z(m) * g[m];
    return A;
  }

  bool has_gradients() const {
    for (const auto& gk : grad)
      for (const auto& g : gk)
        if (g.cwiseAbs().maxCoeff() != 0.0) return true;
    return false;
  }

  double gradient_norm() const {
    double s = 0;
    for (const auto& gk : grad)
      for (const auto& g : gk) s = std::max(s, g.norm());
    return s;
  }
};

struct RelaxationBlock {
  Mat L2;
  double coercivity = 0.0;
  double epsilon = 1.0;
};

struct SystemSpec {
  std::string name;
  BlockDims dims;
  AffineFluxFamily flux;
  RelaxationBlock relax;
  Vec vbar;
  // Isentropic parameters, kept for change of variables (zero otherwise).
  double gamma = 0, a = 0, rhobar = 0, cbar = 0;

  int n() const { return dims.n(); }
  int d() const { return dims.d; }

  // Effective damping block L2 / epsilon.
  Mat B22() const { return relax.L2 / relax.epsilon; }

  Mat B() const {
    Mat B = Mat::Zero(n(), n());
    B.bottomRightCorner(dims.n2, dims.n2) = B22();
    return B;
  }

  // H(V) = -(0, L2 (V2 - bar V2)).
  Vec H(const Vec& V) const {
    Vec h = Vec::Zero(n());
    h.tail(dims.n2) = -relax.L2 * (V.tail(dims.n2) - vbar.tail(dims.n2));
    return h;
  }

  Mat DH() const {
    Mat J = Mat::Zero(n(), n());
    J.bottomRightCorner(dims.n2, dims.n2) = -relax.L2;
    return J;
  }
};

inline Mat evaluate_flux_matrix(const SystemSpec& spec, int k, const Vec& Z) {
  if (k < 1 || k > spec.d()) throw InvalidArgument("evaluate_flux_matrix: k out of range");
  return spec.flux.eval(k - 1, Z);
}

namespace detail {

inline bool block_zero(const Mat& M, int r0, int c0, int nr, int nc, double tol = 0.0) {
  if (nr == 0 || nc == 0) return true;
  return M.block(r0, c0, nr, nc).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace detail

// Structural flags derived from the stored matrices (SK excluded).
inline StructureFlags structural_flags(const SystemSpec& s) {
  const int n1 = s.dims.n1, n2 = s.dims.n2, n = s.n();
  StructureFlags f;
  bool h3 = true, a11 = true, off = true;
  for (int k = 0; k < s.d(); ++k) {
    if (!detail::block_zero(s.flux.base[k], 0, 0, n1, n1)) { h3 = false; a11 = false; }
    for (int m = 0; m < n; ++m) {
      const Mat& G = s.flux.grad[k][m];
      const bool is_z1 = m < n1;
      if (is_z1) {
        if (!detail::block_zero(G, 0, 0, n1, n1)) { h3 = false; a11 = false; }
      } else {
        if (!detail::block_zero(G, 0, n1, n1, n2) || !detail::block_zero(G, n1, 0, n2, n1)) off = false;
      }
    }
  }
  f.h3 = h3;
  f.a11_z2_only = a11;
  f.offdiag_z1_only = off;
  f.a22_linear = true;
  return f;
}

struct ValidationReport {
  bool ok = true;
  double max_symmetry_residual = 0.0;
  double coercivity = 0.0;
  std::vector<cdouble> dh_spectrum;
  StructureFlags derived_flags;
  std::vector<std::string> failures;
};

inline ValidationReport validate(const SystemSpec& s) {
  ValidationReport r;
  auto fail = [&](const std::string& m) { r.ok = false; r.failures.push_back(m); };
  const int n = s.n();
  if (s.dims.n1 < 1 || s.dims.n2 < 1) fail("dims: n1 and n2 must be >= 1");
  if (s.dims.d < 1 || s.dims.d > 3) fail("dims: d must be in {1,2,3}");
  if (!r.ok) return r;
  if (static_cast<int>(s.flux.base.size()) != s.d() || static_cast<int>(s.flux.grad.size()) != s.d()) {
    fail("flux: need one base matrix and one gradient family per direction");
    return r;
  }
  for (int k = 0; k < s.d(); ++k) {
    const Mat& A = s.flux.base[k];
    if (A.rows() != n || A.cols() != n) { fail("flux: base matrix has wrong size"); return r; }
    r.max_symmetry_residual = std::max(r.max_symmetry_residual, (A - A.transpose()).cwiseAbs().maxCoeff());
    if (static_cast<int>(s.flux.grad[k].size()) != n) { fail("flux: gradient family has wrong length"); return r; }
    for (const Mat& G : s.flux.grad[k]) {
      if (G.rows() != n || G.cols() != n) { fail("flux: gradient matrix has wrong size"); return r; }
      r.max_symmetry_residual = std::max(r.max_symmetry_residual, (G - G.transpose()).cwiseAbs().maxCoeff());
    }
  }
  if (r.max_symmetry_residual > 0.0) {
    std::ostringstream os;
    os << "H1: flux matrices not symmetric (residual " << r.max_symmetry_residual << ")";
    fail(os.str());
  }
  if (s.relax.L2.rows() != s.dims.n2 || s.relax.L2.cols() != s.dims.n2) {
    fail("relax: L2 has wrong size");
    return r;
  }
  if (!(s.relax.epsilon > 0)) fail("relax: epsilon must be positive");
  r.coercivity = sym_min_eig(s.relax.L2);
  if (!(r.coercivity > 0)) {
    std::ostringstream os;
    os << "coercivity: lambda_min((L2+L2^T)/2) = " << r.coercivity << " is not positive";
    fail(os.str());
  }
  Eigen::EigenSolver<Mat> es(s.DH());
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    r.dh_spectrum.push_back(es.eigenvalues()(i));
    if (es.eigenvalues()(i).real() > 1e-12) fail("H2: DH(Vbar) has an eigenvalue with positive real part");
  }
  if (s.vbar.size() != n) fail("vbar: wrong size");
  r.derived_flags = structural_flags(s);
  const StructureFlags& st = s.flux.flags;
  if (st.h3 && !r.derived_flags.h3) fail("flags: H3 set but matrices violate it");
  if (st.a11_z2_only && !r.derived_flags.a11_z2_only) fail("flags: A11 hypothesis set but matrices violate it");
  if (st.offdiag_z1_only && !r.derived_flags.offdiag_z1_only) fail("flags: A12/A21 hypothesis set but matrices violate it");
  return r;
}

inline void finalize_relaxation(SystemSpec& s) {
  s.relax.coercivity = sym_min_eig(s.relax.L2);
}

inline SystemSpec build_linearized_euler(int d, double f) {
  if (d < 1 || d > 3) throw InvalidArgument("build_linearized_euler: d must be in {1,2,3}");
  if (!(f > 0)) throw InvalidArgument("build_linearized_euler: friction must be positive");
  SystemSpec s;
  s.name = "linearized-euler";
  s.dims = {1, d, d};
  const int n = d + 1;
  for (int k = 0; k < d; ++k) {
    Mat A = Mat::Zero(n, n);
    A(0, 1 + k) = A(1 + k, 0) = 1.0;
    s.flux.base.push_back(A);
    s.flux.grad.emplace_back(n, Mat::Zero(n, n));
  }
  s.relax.L2 = f * Mat::Identity(d, d);
  s.relax.epsilon = 1.0;
  s.vbar = Vec::Zero(n);
  s.flux.flags = structural_flags(s);
  s.flux.flags.sk = true;
  finalize_relaxation(s);
  return s;
}

// Sound-speed form: unknowns (c - cbar, v), with c = sqrt(gamma a) rho^gt / gt, gt = (gamma-1)/2.
inline SystemSpec build_isentropic_euler(int d, double gamma, double a, double rhobar, double epsilon) {
  if (d < 1 || d > 3) throw InvalidArgument("build_isentropic_euler: d must be in {1,2,3}");
  if (!(gamma > 1)) throw InvalidArgument("build_isentropic_euler: gamma must exceed 1");
  if (!(a > 0) || !(rhobar > 0) || !(epsilon > 0))
    throw InvalidArgument("build_isentropic_euler: a, rhobar, epsilon must be positive");
  SystemSpec s;
  s.name = "isentropic-euler";
  s.dims = {1, d, d};
  const int n = d + 1;
  const double gt = 0.5 * (gamma - 1.0);
  const double cbar = std::sqrt(gamma * a) * std::pow(rhobar, gt) / gt;
  s.gamma = gamma; s.a = a; s.rhobar = rhobar; s.cbar = cbar;
  for (int k = 0; k < d; ++k) {
    Mat A = Mat::Zero(n, n);
    A(0, 1 + k) = A(1 + k, 0) = gt * cbar;
    s.flux.base.push_back(A);
    std::vector<Mat> g(n, Mat::Zero(n, n));
    g[0](0, 1 + k) = g[0](1 + k, 0) = gt;
    g[1 + k] = Mat::Identity(n, n);
    s.flux.grad.push_back(g);
  }
  s.relax.L2 = Mat::Identity(d, d);
  s.relax.epsilon = epsilon;
  s.vbar = Vec::Zero(n);
  s.vbar(0) = cbar;
  s.flux.flags = structural_flags(s);
  s.flux.flags.sk = true;
  finalize_relaxation(s);
  return s;
}

// Two-component system whose convective symbol has e1 (in ker B) as an eigenvector.
inline SystemSpec build_sk_counterexample(int d = 1) {
  if (d < 1 || d > 3) throw InvalidArgument("build_sk_counterexample: d must be in {1,2,3}");
  SystemSpec s;
  s.name = "sk-counterexample";
  s.dims = {1, 1, d};
  for (int k = 0; k < d; ++k) {
    Mat A = Mat::Zero(2, 2);
    A(0, 0) = 1.0;
    A(1, 1) = -1.0;
    s.flux.base.push_back(A);
    s.flux.grad.emplace_back(2, Mat::Zero(2, 2));
  }
  s.relax.L2 = Mat::Identity(1, 1);
  s.relax.epsilon = 1.0;
  s.vbar = Vec::Zero(2);
  s.flux.flags = structural_flags(s);
  s.flux.flags.sk = false;
  finalize_relaxation(s);
  return s;
}

// Constant-coefficient system with given base matrices and damping block.
inline SystemSpec make_linear_system(const std::vector<Mat>& base, const Mat& L2, int n1, double epsilon = 1.0) {
  SystemSpec s;
  s.name = "custom";
  const int n = static_cast<int>(base.at(0).rows());
  s.dims = {n1, n - n1, static_cast<int>(base.size())};
  s.flux.base = base;
  for (size_t k = 0; k < base.size(); ++k) s.flux.grad.emplace_back(n, Mat::Zero(n, n));
  s.relax.L2 = L2;
  s.relax.epsilon = epsilon;
  s.vbar = Vec::Zero(n);
  s.flux.flags = structural_flags(s);
  finalize_relaxation(s);
  return s;
}

}  // namespace pds
