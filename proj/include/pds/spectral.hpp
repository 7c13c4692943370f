#pragma once

#include "pds/core.hpp"

#include <fftw3.h>

#include <array>
#include <functional>
#include <memory>
#include <mutex>

namespace pds {

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// Periodic grid of N^d points on the torus of period 2 pi L per axis.
// Mode m carries integer wave vector k and physical frequency xi = k / L.
class Grid {
 public:
  Grid(int d, int N, double L) : d_(d), N_(N), L_(L) {
    if (d < 1 || d > 3) throw InvalidArgument("Grid: d must be in {1,2,3}");
    if (N < 4 || N % 2) throw InvalidArgument("Grid: N must be even and >= 4");
    if (!(L > 0)) throw InvalidArgument("Grid: L must be positive");
    M_ = 1;
    for (int a = 0; a < d; ++a) M_ *= N;
    k_.resize(d, M_);
    xi_.resize(d, M_);
    rho_.resize(M_);
    nyq_.resize(M_);
    dealias_.resize(M_);
    for (Eigen::Index m = 0; m < M_; ++m) {
      Eigen::Index r = m;
      bool nyq = false, keep = true;
      double r2 = 0;
      // row-major index order: last axis fastest
      for (int a = d - 1; a >= 0; --a) {
        const int i = static_cast<int>(r % N);
        r /= N;
        const int k = (i < N / 2) ? i : i - N;
        k_(a, m) = k;
        xi_(a, m) = k / L;
        r2 += (k / L) * (k / L);
        if (i == N / 2) nyq = true;
        if (3 * std::abs(k) > N) keep = false;  // 2/3 rule: keep |k| <= N/3
      }
      rho_(m) = std::sqrt(r2);
      nyq_(m) = nyq ? 1 : 0;
      dealias_(m) = keep ? 1.0 : 0.0;
    }
    std::vector<int> dims(d, N);
    CVec tmp_in(M_), tmp_out(M_);
    auto* in = reinterpret_cast<fftw_complex*>(tmp_in.data());
    auto* out = reinterpret_cast<fftw_complex*>(tmp_out.data());
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fwd_ = fftw_plan_dft(d, dims.data(), in, out, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_dft(d, dims.data(), in, out, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~Grid() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }
  Grid(const Grid&) = delete;
  Grid& operator=(const Grid&) = delete;

  int d() const { return d_; }
  int N() const { return N_; }
  double L() const { return L_; }
  Eigen::Index size() const { return M_; }
  double period() const { return 2.0 * kPi * L_; }
  double volume() const { return std::pow(period(), d_); }
  double cell() const { return std::pow(period() / N_, d_); }
  const Eigen::ArrayXXi& k() const { return k_; }
  const Eigen::ArrayXXd& xi() const { return xi_; }
  const Eigen::ArrayXd& rho() const { return rho_; }
  bool nyquist(Eigen::Index m) const { return nyq_(m) != 0; }
  const Eigen::ArrayXd& dealias_mask() const { return dealias_; }
  double min_frequency() const { return 1.0 / L_; }
  double max_frequency() const { return rho_.maxCoeff(); }

  // Physical coordinates of point m (same ordering as modes).
  Vec point(Eigen::Index m) const {
    Vec x(d_);
    Eigen::Index r = m;
    for (int a = d_ - 1; a >= 0; --a) {
      x(a) = period() * static_cast<double>(r % N_) / N_;
      r /= N_;
    }
    return x;
  }

  // Coefficients c_k = (1/M) sum_x u(x) e^{-i k x / L}.
  void forward(const cdouble* in, cdouble* out) const {
    fftw_execute_dft(fwd_, reinterpret_cast<fftw_complex*>(const_cast<cdouble*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
    const double s = 1.0 / static_cast<double>(M_);
    for (Eigen::Index i = 0; i < M_; ++i) out[i] *= s;
  }
  void backward(const cdouble* in, cdouble* out) const {
    fftw_execute_dft(bwd_, reinterpret_cast<fftw_complex*>(const_cast<cdouble*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }

 private:
  int d_, N_;
  double L_;
  Eigen::Index M_;
  Eigen::ArrayXXi k_;
  Eigen::ArrayXXd xi_;
  Eigen::ArrayXd rho_;
  Eigen::Array<unsigned char, Eigen::Dynamic, 1> nyq_;
  Eigen::ArrayXd dealias_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(int d, int N, double L) { return std::make_shared<const Grid>(d, N, L); }

// Fourier coefficients of an n-component field; column c holds component c.
struct SpectralField {
  GridPtr grid;
  CMat c;

  SpectralField() = default;
  SpectralField(GridPtr g, int n) : grid(std::move(g)), c(CMat::Zero(grid->size(), n)) {}
  SpectralField(GridPtr g, CMat coeffs) : grid(std::move(g)), c(std::move(coeffs)) {}

  int components() const { return static_cast<int>(c.cols()); }

  SpectralField& operator+=(const SpectralField& o) { c += o.c; return *this; }
  SpectralField& operator-=(const SpectralField& o) { c -= o.c; return *this; }
  SpectralField operator+(const SpectralField& o) const { return {grid, c + o.c}; }
  SpectralField operator-(const SpectralField& o) const { return {grid, c - o.c}; }
  SpectralField operator*(double s) const { return {grid, c * s}; }

  // sum_k |c_k|^2 times the cell volume: the L2 norm squared on one period.
  double l2_squared() const { return grid->volume() * c.squaredNorm(); }
  double l2() const { return std::sqrt(l2_squared()); }

  SpectralField component(int i) const { return {grid, c.col(i)}; }
  SpectralField component_range(int first, int count) const { return {grid, c.middleCols(first, count)}; }
};

inline SpectralField from_physical(const GridPtr& g, const Mat& u) {
  SpectralField f(g, static_cast<int>(u.cols()));
  CVec tmp(g->size());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    tmp = u.col(j).cast<cdouble>();
    g->forward(tmp.data(), f.c.col(j).data());
  }
  return f;
}

inline Mat to_physical(const SpectralField& f) {
  const Eigen::Index M = f.grid->size();
  Mat u(M, f.c.cols());
  CVec out(M);
  CVec in(M);
  for (Eigen::Index j = 0; j < f.c.cols(); ++j) {
    in = f.c.col(j);
    f.grid->backward(in.data(), out.data());
    u.col(j) = out.real();
  }
  return u;
}

inline CMat to_physical_complex(const SpectralField& f) {
  const Eigen::Index M = f.grid->size();
  CMat u(M, f.c.cols());
  CVec in(M);
  for (Eigen::Index j = 0; j < f.c.cols(); ++j) {
    in = f.c.col(j);
    f.grid->backward(in.data(), u.col(j).data());
  }
  return u;
}

// d/dx_a: multiply by i xi_a; Nyquist modes are dropped.
inline SpectralField derivative(const SpectralField& f, int a) {
  SpectralField out(f.grid, f.components());
  const auto& xi = f.grid->xi();
  for (Eigen::Index m = 0; m < f.grid->size(); ++m) {
    if (f.grid->nyquist(m)) continue;
    out.c.row(m) = (kI * xi(a, m)) * f.c.row(m);
  }
  return out;
}

inline SpectralField apply_dealias(const SpectralField& f) {
  SpectralField out = f;
  out.c = f.grid->dealias_mask().matrix().asDiagonal() * f.c;
  return out;
}

// Real-valued projection: enforces conjugate symmetry and zeroes Nyquist modes.
inline SpectralField real_projection(const SpectralField& f) {
  const Mat u = to_physical(f);
  SpectralField g = from_physical(f.grid, u);
  for (Eigen::Index m = 0; m < g.grid->size(); ++m)
    if (g.grid->nyquist(m)) g.c.row(m).setZero();
  return g;
}

inline SpectralField zero_mean(SpectralField f) {
  f.c.row(0).setZero();
  return f;
}

}  // namespace pds
