#pragma once

#include "pds/nonlinear_solver.hpp"

namespace pds {

enum class DecayVariant { Baseline, Shifted };

struct DecaySpec {
  int d = 1;
  double sigma1 = 0;
  DecayVariant variant = DecayVariant::Baseline;
  double alpha1 = 0;
  double c0 = 0;
  // low-frequency regularity of the statement: d/2 - 1 or d/2
  double s_low() const { return variant == DecayVariant::Baseline ? 0.5 * d - 1.0 : 0.5 * d; }
};

inline double alpha1(double sigma1, int d, DecayVariant variant) {
  if (d < 1 || d > 3) throw InvalidArgument("alpha1: d must be in {1,2,3}");
  const double lo = variant == DecayVariant::Baseline ? 1.0 - 0.5 * d : -0.5 * d;
  if (!(sigma1 > lo && sigma1 <= 0.5 * d)) {
    std::ostringstream os;
    os << "alpha1: sigma1 = " << sigma1 << " outside (" << lo << ", " << 0.5 * d << "]";
    throw InvalidArgument(os.str());
  }
  return variant == DecayVariant::Baseline ? 0.5 * (sigma1 + 0.5 * d - 1.0) : 0.5 * (sigma1 + 0.5 * d);
}

inline double c0_from_data(double negative_norm, double hybrid_norm, double a1) {
  if (!(a1 > 0)) throw InvalidArgument("c0_from_data: alpha1 must be positive");
  const double s = negative_norm + hybrid_norm;
  if (!(s > 0) || !std::isfinite(s)) throw InvalidArgument("c0_from_data: data norms must be positive and finite");
  return std::pow(s, -1.0 / a1);
}

// ||z||_{B^{-sigma1}_{2,inf}}: sup_j 2^{-j sigma1} ||Delta_j z||.
inline double negative_besov(const FilterBank& fb, const SpectralField& z, double sigma1) {
  return fb.besov(z, -sigma1, 2, true);
}

inline DecaySpec make_decay_spec(const FilterBank& fb, const SpectralField& Z0, double sigma1, DecayVariant variant,
                                 double threshold = 1.0) {
  DecaySpec s;
  s.d = Z0.grid->d();
  s.sigma1 = sigma1;
  s.variant = variant;
  s.alpha1 = alpha1(sigma1, s.d, variant);
  const double h = 0.5 * s.d;
  s.c0 = c0_from_data(negative_besov(fb, Z0, sigma1), fb.hybrid(Z0, s.s_low(), h + 1, threshold), s.alpha1);
  return s;
}

struct Snapshot {
  double t = 0;
  SpectralField z;
};

// Observer that keeps every recorded state.
struct SnapshotRecorder {
  std::vector<Snapshot> snaps;
  std::function<void(double, const SpectralField&)> observer() {
    return [this](double t, const SpectralField& z) { snaps.push_back({t, z}); };
  }
};

struct NegativeBesovTrack {
  std::vector<double> times, values;
  double initial = 0;
  double sup_ratio = 0;  // measured C in sup_t ||Z(t)|| <= C ||Z0||
  bool bounded = true;
};

inline NegativeBesovTrack negative_besov_track(const FilterBank& fb, const std::vector<Snapshot>& snaps, double sigma1,
                                               double bound = 3.0) {
  NegativeBesovTrack tr;
  for (const Snapshot& s : snaps) {
    tr.times.push_back(s.t);
    tr.values.push_back(negative_besov(fb, s.z, sigma1));
  }
  if (tr.values.empty()) return tr;
  tr.initial = tr.values.front();
  const double sup = *std::max_element(tr.values.begin(), tr.values.end());
  tr.sup_ratio = tr.initial > 0 ? sup / tr.initial : (sup > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  tr.bounded = tr.sup_ratio <= bound;
  return tr;
}

struct DecayFit {
  double slope = 0;
  double intercept = 0;
  double rms_residual = 0;
  double theory = std::numeric_limits<double>::quiet_NaN();
  double relative_error = std::numeric_limits<double>::quiet_NaN();
  int points = 0;
};

// Least squares of log(norm) against log(1 + c0 t) on t_lo <= t <= t_hi.
inline DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& norm, double c0, double t_lo,
                          double t_hi, double theory = std::numeric_limits<double>::quiet_NaN()) {
  if (t.size() != norm.size()) throw InvalidArgument("fit_decay: series lengths differ");
  if (!(c0 > 0) || !(t_hi > t_lo)) throw InvalidArgument("fit_decay: need c0 > 0 and t_lo < t_hi");
  std::vector<double> x, y;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo - 1e-12 || t[i] > t_hi + 1e-12) continue;
    if (!(norm[i] > 0)) throw InvalidArgument("fit_decay: norms in the window must be positive");
    x.push_back(std::log1p(c0 * t[i]));
    y.push_back(std::log(norm[i]));
  }
  if (x.size() < 3 || x.back() - x.front() <= 0) throw InvalidArgument("fit_decay: degenerate window");
  const LineFit f = fit_line(x, y);
  DecayFit r;
  r.slope = f.slope;
  r.intercept = f.intercept;
  r.points = static_cast<int>(x.size());
  r.rms_residual = f.residual;
  r.theory = theory;
  if (std::isfinite(theory) && theory != 0.0) r.relative_error = std::abs(r.slope - theory) / std::abs(theory);
  return r;
}

// Measured C in ||Z||^l_{B^{d/2-1}} <= C (||Z||^l_{B^{d/2+1}})^{1-theta} (||Z||^l_{B^{-sigma1}_{2,inf}})^theta.
inline double interpolation_constant(const FilterBank& fb, const SpectralField& z, double sigma1,
                                     double threshold = 1.0) {
  const double d = fb.grid()->d();
  const double theta = 2.0 / (d / 2 + 1 + sigma1);
  const Vec b = fb.block_l2(z);
  const int js = FilterBank::split_index(threshold);
  const double lhs = fb.lf_from(b, d / 2 - 1, threshold);
  const double top = fb.lf_from(b, d / 2 + 1, threshold);
  const double neg = fb.combine(b, -sigma1, true, fb.jmin(), js - 1);
  if (lhs == 0.0) return 0.0;
  return lhs / (std::pow(top, 1 - theta) * std::pow(neg, theta));
}

// Whole-space linear flow evaluated by quadrature in |xi| over each dyadic annulus, averaged over directions.
// Data: Z0(xi) = profile(|xi|) v0(omega).
class RadialOracle {
 public:
  using Profile = std::function<double(double)>;
  using Polarization = std::function<CVec(const Vec& omega)>;

  RadialOracle(const SystemSpec& spec, Profile profile, Polarization v0, int jmin, int jmax, int nodes = 12,
               int directions = 32)
      : d_(spec.d()), n_(spec.n()), n1_(spec.dims.n1), jmin_(jmin), jmax_(jmax) {
    if (jmax < jmin) throw InvalidArgument("RadialOracle: empty block range");
    const DirectionSample ds = make_direction_sample(d_, directions);
    const Quadrature gl = gauss_legendre(nodes);
    const double area = d_ == 1 ? 2.0 : (d_ == 2 ? 2.0 * kPi : 4.0 * kPi);
    const double plancherel = area / std::pow(2.0 * kPi, d_) / ds.directions.size();
    const Mat B22inv = spec.B22().inverse();
    // annulus 2^{j-1}..2^{j+1} split at 2^j where phi_j has a kink
    for (int j = jmin - 1; j <= jmax + 1; ++j) {
      const double a = std::log(std::ldexp(1.0, j - 1)), b = std::log(std::ldexp(1.0, j));
      for (int q = 0; q < nodes; ++q) {
        const double u = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes(q);
        const double rho = std::exp(u);
        const double wq = 0.5 * (b - a) * gl.weights(q) * std::pow(rho, d_) * plancherel;  // d rho = rho du
        const double amp = profile(rho);
        if (amp == 0.0) continue;
        Node nd;
        nd.rho = rho;
        nd.weight = wq;
        for (const Vec& w : ds.directions) {
          const Vec xi = rho * w;
          const CMat E = convective_symbol(spec, xi) + spec.B().cast<cdouble>();
          Eigen::ComplexEigenSolver<CMat> es(E);
          Mode md;
          md.z0 = amp * v0(w);
          md.E = E;
          md.W = E.bottomRows(n_ - n1_);
          md.W = B22inv.cast<cdouble>() * md.W;
          md.fast = false;
          if (es.info() == Eigen::Success) {
            Eigen::JacobiSVD<CMat> svd(es.eigenvectors());
            const auto& sv = svd.singularValues();
            if (sv(0) / sv(sv.size() - 1) < 1e6) {
              md.fast = true;
              md.lam = es.eigenvalues();
              md.c = es.eigenvectors().inverse() * md.z0;
              md.V = es.eigenvectors();
            }
          }
          nd.modes.push_back(std::move(md));
        }
        nodes_.push_back(std::move(nd));
      }
    }
  }

  int jmin() const { return jmin_; }
  int jmax() const { return jmax_; }

  // ||Delta_j Z(t)|| for j = jmin..jmax; part selects full state, Z1, Z2, or the damped mode.
  enum class Part { Full, Z1, Z2, Damped };
  Vec blocks(double t, Part part = Part::Full) const {
    Vec e = Vec::Zero(jmax_ - jmin_ + 1);
    for (const Node& nd : nodes_) {
      double acc = 0;
      for (const Mode& md : nd.modes) {
        CVec z = md.fast ? CVec(md.V * (-t * md.lam.array()).exp().matrix().cwiseProduct(md.c))
                         : CVec((-t * md.E).exp() * md.z0);
        switch (part) {
          case Part::Full: acc += z.squaredNorm(); break;
          case Part::Z1: acc += z.head(n1_).squaredNorm(); break;
          case Part::Z2: acc += z.tail(n_ - n1_).squaredNorm(); break;
          case Part::Damped: acc += (md.W * z).squaredNorm(); break;
        }
      }
      for (int j = jmin_; j <= jmax_; ++j) {
        const double p = phi_j(nd.rho, j);
        if (p != 0.0) e(j - jmin_) += nd.weight * p * p * acc;
      }
    }
    return e.cwiseSqrt();
  }

  double combine(const Vec& b, double s, int jlo, int jhi, bool sup = false) const {
    double acc = 0;
    for (int j = std::max(jlo, jmin_); j <= std::min(jhi, jmax_); ++j) {
      const double v = std::pow(2.0, j * s) * b(j - jmin_);
      acc = sup ? std::max(acc, v) : acc + v;
    }
    return acc;
  }
  double low(double t, double s, double threshold = 1.0, Part part = Part::Full) const {
    return combine(blocks(t, part), s, jmin_, FilterBank::split_index(threshold) - 1);
  }
  double high(double t, double s, double threshold = 1.0, Part part = Part::Full) const {
    return combine(blocks(t, part), s, FilterBank::split_index(threshold), jmax_);
  }

 private:
  struct Mode {
    CVec z0, lam, c;
    CMat V, E, W;
    bool fast = false;
  };
  struct Node {
    double rho = 0, weight = 0;
    std::vector<Mode> modes;
  };
  int d_, n_, n1_, jmin_, jmax_;
  std::vector<Node> nodes_;
};

// Profile |xi|^{sigma1 - d/2} exp(-|xi|^2): in B^{-sigma1}_{2,inf} with flat dyadic blocks at low frequency.
inline RadialOracle::Profile negative_profile(double sigma1, int d) {
  return [=](double r) { return std::pow(r, sigma1 - 0.5 * d) * std::exp(-r * r); };
}

inline RadialOracle::Polarization first_component(int n) {
  return [n](const Vec&) {
    CVec v = CVec::Zero(n);
    v(0) = 1.0;
    return v;
  };
}

struct DecayRun {
  std::vector<double> t, low, high, damped;
  DecaySpec spec;
  DecayFit low_fit, high_fit, damped_fit;
};

// Low (s_low), high (d/2 + 1) and damped-mode (s_low, low part) series of a solver run, with fits over [t_lo, t_hi].
inline DecayRun decay_series(const SystemSpec& spec, const std::vector<Snapshot>& snaps, const DecaySpec& ds,
                             double t_lo, double t_hi, double threshold = 1.0) {
  if (snaps.empty()) throw InvalidArgument("decay_series: no snapshots");
  const FilterBank fb(snaps.front().z.grid);
  const NonlinearSolver solver(spec, snaps.front().z.grid);
  const double h = 0.5 * ds.d;
  DecayRun r;
  r.spec = ds;
  for (const Snapshot& s : snaps) {
    const Vec b = fb.block_l2(s.z);
    r.t.push_back(s.t);
    r.low.push_back(fb.lf_from(b, ds.s_low(), threshold));
    r.high.push_back(fb.hf_from(b, h + 1, threshold));
    r.damped.push_back(fb.lf(solver.damped_mode(s.z), ds.s_low(), threshold));
  }
  const double c0 = ds.c0 > 0 ? ds.c0 : 1.0;
  r.low_fit = fit_decay(r.t, r.low, c0, t_lo, t_hi, -ds.alpha1);
  r.high_fit = fit_decay(r.t, r.high, c0, t_lo, t_hi, -2 * ds.alpha1);
  r.damped_fit = fit_decay(r.t, r.damped, c0, t_lo, t_hi, -2 * ds.alpha1);
  return r;
}

}  // namespace pds
