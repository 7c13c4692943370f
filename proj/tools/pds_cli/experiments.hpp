#pragma once

#include "pds_cli/config.hpp"

#include "pds/decay_diagnostics.hpp"
#include "pds/relaxation_limit.hpp"

#include <charconv>
#include <filesystem>
#include <random>

namespace pds::cli {

enum ExitCode { kPass = 0, kVerdictFailure = 1, kConfigError = 2, kNumericalFailure = 3 };

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out;
}

struct Outcome {
  json report;
  std::map<std::string, Table> tables;  // file name -> table
  int exit_code = kPass;
};

class Checks {
 public:
  // pass = nullopt marks an informational check.
  void add(const std::string& name, const std::string& anchor, std::optional<bool> pass, json values) {
    json c{{"name", name}, {"anchor", anchor}, {"values", std::move(values)}};
    c["pass"] = pass ? json(*pass) : json(nullptr);
    if (pass && !*pass) failed_ = true;
    list_.push_back(std::move(c));
  }
  bool failed() const { return failed_; }
  const json& list() const { return list_; }

 private:
  json list_ = json::array();
  bool failed_ = false;
};

inline std::string state_hash(const SpectralField& z) {
  return sha256_hex(z.c.data(), sizeof(cdouble) * static_cast<size_t>(z.c.size()));
}

inline Mat matrix_from(const json& m) {
  Mat A(m.size(), m[0].size());
  for (size_t i = 0; i < m.size(); ++i)
    for (size_t j = 0; j < m[i].size(); ++j) A(i, j) = m[i][j].get<double>();
  return A;
}

inline SystemSpec build_system(const json& cfg) {
  const json& s = cfg["system"];
  const std::string name = s["name"];
  const int d = s["d"];
  if (d < 1 || d > 3) throw ConfigError("", 0, "system.d", "must be 1, 2 or 3");
  if (name == "linearized-euler") return build_linearized_euler(d, s["friction"]);
  if (name == "isentropic-euler") return build_isentropic_euler(d, s["gamma"], s["a"], s["rhobar"], s["epsilon"]);
  if (name == "sk-counterexample") return build_sk_counterexample(d);
  std::vector<Mat> base;
  for (int k = 0; k < d; ++k) {
    const std::string key = "A" + std::to_string(k + 1);
    if (s[key].is_null()) throw ConfigError("", 0, "system." + key, "required for a custom system in d = " + std::to_string(d));
    base.push_back(matrix_from(s[key]));
  }
  if (s["L2"].is_null()) throw ConfigError("", 0, "system.L2", "required for a custom system");
  const Mat L2 = matrix_from(s["L2"]);
  const int n = static_cast<int>(base[0].rows()), n1 = s["n1"];
  for (int k = 0; k < d; ++k)
    if (base[k].rows() != n || base[k].cols() != n)
      throw ConfigError("", 0, "system.A" + std::to_string(k + 1), "flux matrices must be square and of equal size");
  if (n1 < 1 || n1 >= n) throw ConfigError("", 0, "system.n1", "must satisfy 1 <= n1 < n");
  if (L2.rows() != n - n1 || L2.cols() != n - n1) throw ConfigError("", 0, "system.L2", "must be (n - n1) x (n - n1)");
  SystemSpec spec = make_linear_system(base, L2, n1, s["epsilon"]);
  spec.name = "custom";
  return spec;
}

inline GridPtr build_grid(const json& cfg) {
  const int N = cfg["grid"]["N"];
  const double L = cfg["grid"]["L"];
  if (N < 4 || N % 2) throw ConfigError("", 0, "grid.N", "must be even and at least 4");
  if (!(L > 0)) throw ConfigError("", 0, "grid.L", "must be positive");
  return make_grid(cfg["system"]["d"], N, L);
}

inline SpectralField build_data(const json& cfg, const GridPtr& g, int n) {
  const json& D = cfg["data"];
  const std::string kind = D["kind"];
  const double amp = D["amplitude"], vel = D["velocity"];
  SpectralField z;
  if (kind == "random") {
    std::mt19937_64 rng(D["seed"].get<unsigned long long>());
    std::normal_distribution<double> nd;
    const double decay = D["decay"];
    SpectralField f(g, n);
    for (Eigen::Index m = 1; m < g->size(); ++m) {
      const double a = std::exp(-decay * g->rho()(m));
      for (int c = 0; c < n; ++c) f.c(m, c) = a * cdouble(nd(rng), nd(rng));
    }
    z = real_projection(f);
    const Mat u = to_physical(z);
    const double mx = u.cwiseAbs().maxCoeff();
    if (mx > 0) z.c *= amp / mx;
  } else {
    Mat u = Mat::Zero(g->size(), n);
    const double w = D["width"];
    for (Eigen::Index m = 0; m < g->size(); ++m) {
      const Vec x = g->point(m);
      if (kind == "smooth") {
        const Vec y = x / g->L();
        const double y2 = g->d() > 1 ? y(1) : 0.0;
        u(m, 0) = amp * (std::cos(y(0)) + 0.5 * std::sin(2 * y(0) + y2));
        for (int c = 1; c < n; ++c) u(m, c) = vel * std::sin(y(0) + (c - 1) * y2);
      } else {
        const double r2 = (x.array() - 0.5 * g->period()).square().sum();
        const double e = std::exp(-r2 / (2 * w * w));
        u(m, 0) = amp * e;
        for (int c = 1; c < n; ++c) u(m, c) = vel * e;
      }
    }
    z = from_physical(g, u);
  }
  return cfg["solver"]["dealias"].get<bool>() ? apply_dealias(z) : z;
}

struct NormEntry {
  double s = 0, threshold = 0;
  int p = 2;
  bool sup = false;
  std::string label;
};

inline std::vector<NormEntry> parse_norms(const json& cfg) {
  std::vector<NormEntry> out;
  for (const std::string& e : detail::split(cfg["norms"]["list"].get<std::string>(), ";")) {
    const auto tok = detail::split(e, " ,\t");
    if (tok.size() != 4) throw ConfigError("", 0, "norms.list", "entry '" + e + "' needs 's p q threshold'");
    NormEntry n;
    bool ok = false;
    n.s = detail::to_double(tok[0], ok);
    if (!ok) throw ConfigError("", 0, "norms.list", "bad s in '" + e + "'");
    if (tok[1] == "1") n.p = 1;
    else if (tok[1] == "2") n.p = 2;
    else if (tok[1] == "inf") n.p = kInf;
    else throw ConfigError("", 0, "norms.list", "p must be 1, 2 or inf in '" + e + "'");
    if (tok[2] == "inf") n.sup = true;
    else if (tok[2] != "1") throw ConfigError("", 0, "norms.list", "q must be 1 or inf in '" + e + "'");
    n.threshold = detail::to_double(tok[3], ok);
    if (!ok) throw ConfigError("", 0, "norms.list", "bad threshold in '" + e + "'");
    n.label = "B^{" + tok[0] + "}_{" + tok[1] + "," + tok[2] + "}";
    out.push_back(n);
  }
  return out;
}

inline void norm_checks(Checks& ch, const std::vector<NormEntry>& norms, const SpectralField& z) {
  if (norms.empty()) return;
  const FilterBank fb(z.grid);
  for (const NormEntry& n : norms) {
    const double v = fb.besov(z, n.s, n.p, n.sup);
    ch.add("final norm " + n.label, "homogeneous Besov norm of the final state below its threshold", v <= n.threshold,
           {{"s", n.s}, {"p", n.p == kInf ? json("inf") : json(n.p)}, {"q", n.sup ? json("inf") : json(1)},
            {"value", v}, {"threshold", n.threshold}});
  }
}

inline bool sk_precheck(Checks& ch, const SystemSpec& spec, const json& cfg) {
  const SkVerdict sk = sk_condition(spec, make_direction_sample(spec.d(), cfg["task"]["directions"]));
  ch.add("SK condition", "Kalman rank of (B, A(omega)) is full on the direction sample", sk.holds,
         {{"directions_checked", sk.directions_checked}, {"min_rank", sk.min_rank}, {"n", spec.n()}});
  return sk.holds;
}

inline SolverConfig solver_config(const json& cfg) {
  const json& s = cfg["solver"];
  SolverConfig c;
  c.dt = s["dt"];
  c.T = s["T"];
  c.record_stride = s["record_stride"];
  c.dealias = s["dealias"];
  c.cfl_safety = s["cfl_safety"];
  c.smallness_factor = s["smallness_factor"];
  c.threshold = s["threshold"];
  if (!(c.dt > 0)) throw ConfigError("", 0, "solver.dt", "must be positive");
  if (!(c.T >= 0)) throw ConfigError("", 0, "solver.T", "must be nonnegative");
  if (c.record_stride < 1) throw ConfigError("", 0, "solver.record_stride", "must be at least 1");
  return c;
}

inline Outcome run_analyze(const json& cfg) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  const ValidationReport v = validate(spec);
  json failures = v.failures;
  ch.add("admissibility", "symmetric flux, symmetric nonnegative damping coercive on its block", v.ok,
         {{"max_symmetry_residual", v.max_symmetry_residual}, {"coercivity", v.coercivity}, {"failures", failures}});
  const StructureFlags f = structural_flags(spec);
  ch.add("structure", "block structure of the flux family", std::nullopt,
         {{"h3", f.h3}, {"a11_z2_only", f.a11_z2_only}, {"offdiag_z1_only", f.offdiag_z1_only},
          {"a22_linear", f.a22_linear}, {"n", spec.n()}, {"n1", spec.dims.n1}, {"d", spec.d()}});
  const DirectionSample ds = make_direction_sample(spec.d(), cfg["task"]["directions"]);
  const bool sk = sk_precheck(ch, spec, cfg);
  const CMat B = spec.B().cast<cdouble>();
  int agree = 0;
  double min_abscissa = std::numeric_limits<double>::infinity();
  for (const Vec& w : ds.directions) {
    const LemmaReport r = check_lemma_equivalences(convective_symbol(spec, w), B);
    agree += r.positivity == r.kalman && r.kalman == r.no_kernel_eigvec && r.no_kernel_eigvec == r.spectral;
    min_abscissa = std::min(min_abscissa, r.abscissa);
  }
  ch.add("equivalent characterizations", "positivity, Kalman rank, no eigenvector in ker B and spectral decay agree",
         agree == static_cast<int>(ds.directions.size()),
         {{"directions", ds.directions.size()}, {"agreeing", agree}, {"min_unit_abscissa", min_abscissa}});
  json per_r = json::array();
  for (double r : {1e-2, 1e-1, 1.0, 1e1, 1e2}) {
    double a = std::numeric_limits<double>::infinity();
    for (const Vec& w : ds.directions) a = std::min(a, spectral_abscissa(spec, r * w).abscissa);
    per_r.push_back({{"r", r}, {"min_abscissa", a}});
  }
  ch.add("spectral abscissa", "smallest decay rate of exp(-t E(r omega)) over the direction sample", std::nullopt,
         {{"by_radius", per_r}});
  o.report["sk"] = sk;
  o.report["checks"] = ch.list();
  o.exit_code = ch.failed() ? kVerdictFailure : kPass;
  return o;
}

inline Outcome run_certify(const json& cfg) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  if (sk_precheck(ch, spec, cfg)) {
    const DirectionSample ds = make_direction_sample(spec.d(), cfg["task"]["directions"]);
    const LyapunovCertificate c = construct(spec, ds, make_r_grid());
    std::vector<double> eps(c.epsilons.data(), c.epsilons.data() + c.epsilons.size());
    ch.add("certificate", "lambda_max of the derivative form is nonpositive on the (r, omega) sample",
           c.max_residual <= c.tolerance * c.Bw.squaredNorm(),
           {{"epsilons", eps}, {"eta", c.eta}, {"kappa", c.kappa}, {"c_decay", c.c_decay}, {"n_min", c.n_min},
            {"max_residual", c.max_residual}, {"tolerance", c.tolerance}, {"h_min", c.h_min}, {"h_max", c.h_max},
            {"r_points", c.r_grid.size()}, {"directions", ds.directions.size()}});
    std::mt19937_64 rng(cfg["data"]["seed"].get<unsigned long long>());
    std::uniform_real_distribution<double> lr(std::log(1e-3), std::log(1e3));
    std::uniform_int_distribution<size_t> pick(0, ds.directions.size() - 1);
    std::normal_distribution<double> nd;
    const int samples = cfg["task"]["samples"];
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (int i = 0; i < samples; ++i) {
      const double r = std::exp(lr(rng));
      const Vec& w = ds.directions[pick(rng)];
      CVec z(spec.n());
      for (int k = 0; k < spec.n(); ++k) z(k) = cdouble(nd(rng), nd(rng));
      const double q = functional_value(c, r, w, z) / z.squaredNorm();
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
    ch.add("norm equivalence", "1/2 |z|^2 <= L(r, omega, z) <= 2 |z|^2 at random samples", lo >= 0.5 && hi <= 2.0,
           {{"samples", samples}, {"min_ratio", lo}, {"max_ratio", hi}});
  }
  o.report["checks"] = ch.list();
  o.exit_code = ch.failed() ? kVerdictFailure : kPass;
  return o;
}

inline Outcome run_simulate_linear(const json& cfg) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  const GridPtr g = build_grid(cfg);
  const SpectralField z0 = build_data(cfg, g, spec.n());
  const auto norms = parse_norms(cfg);
  const double T = cfg["solver"]["T"], thr = cfg["solver"]["threshold"];
  const int nt = cfg["task"]["times"];
  if (nt < 2) throw ConfigError("", 0, "task.times", "must be at least 2");
  if (!sk_precheck(ch, spec, cfg)) {
    o.report["checks"] = ch.list();
    o.exit_code = kVerdictFailure;
    return o;
  }
  const PropagatorPlan plan(spec, g);
  const LyapunovCertificate cert = construct(spec);
  const FilterBank fb(g);
  const double s_low = low_regularity(spec, Regularity::Auto), h = 0.5 * spec.d();
  std::vector<double> times;
  for (int i = 0; i < nt; ++i) times.push_back(T * i / (nt - 1));
  Table t{{"t", "energy", "low", "high"}, {}};
  double prev = std::numeric_limits<double>::infinity();
  bool monotone = true;
  SpectralField z;
  for (double s : times) {
    z = plan.apply(z0, s);
    const double e = 0.5 * z.l2_squared();
    monotone = monotone && e <= prev * (1 + 1e-12) + 1e-300;
    prev = e;
    t.rows.push_back({num(s), num(e), num(fb.lf(z, s_low, thr)), num(fb.hf(z, h + 1, thr))});
  }
  ch.add("energy", "the energy 1/2 |Z|^2 is nonincreasing", monotone, {{"initial", 0.5 * z0.l2_squared()}, {"final", prev}});
  const ModeDecayReport md = verify_mode_decay(plan, cert, z0, times);
  ch.add("pointwise envelope", "|Z(t, xi)| <= 2 exp(-c min(1, |xi|^2) t) |Z0(xi)| for every mode", md.max_ratio <= 1 + 1e-9,
         {{"max_ratio", md.max_ratio}, {"worst_time", md.worst_time}, {"times", nt}});
  norm_checks(ch, norms, z);
  ch.add("final state", "SHA-256 of the final spectral coefficients", std::nullopt,
         {{"hash", state_hash(z)}, {"t", T}});
  o.tables["series.csv"] = std::move(t);
  o.report["checks"] = ch.list();
  o.exit_code = ch.failed() ? kVerdictFailure : kPass;
  return o;
}

inline void add_run_checks(Checks& ch, Outcome& o, const TrajectoryReport& rep) {
  ch.add("run", "solver reached the final time", rep.completed,
         {{"steps", rep.steps}, {"dt", rep.dt}, {"t_end", rep.t_end}, {"max_cfl", rep.max_cfl},
          {"failure", rep.failure}});
  ch.add("smallness", "B^{d/2} norm stays below the smallness limit", !rep.smallness_tripped,
         {{"limit", rep.smallness_limit}});
  if (!rep.completed && !rep.smallness_tripped) o.exit_code = kNumericalFailure;
}

inline Outcome run_simulate(const json& cfg) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  const GridPtr g = build_grid(cfg);
  const SpectralField z0 = build_data(cfg, g, spec.n());
  const SolverConfig sc = solver_config(cfg);
  const auto norms = parse_norms(cfg);
  if (!sk_precheck(ch, spec, cfg)) {
    o.report["checks"] = ch.list();
    o.exit_code = kVerdictFailure;
    return o;
  }
  const TrajectoryReport rep = solve(spec, z0, sc, construct(spec));
  add_run_checks(ch, o, rep);
  const double slack = cfg["solver"]["lyapunov_slack"];
  const LyapunovVerdict lv = lyapunov_monitor(rep, slack);
  ch.add("Lyapunov inequality", "L(t) + c int_{t0}^{t} H <= L(t0) at every recorded pair", lv.holds,
         {{"max_residual", lv.max_residual}, {"slack", slack}, {"pairs", lv.pairs}, {"rate", rep.lyap_rate},
          {"worst_t0", lv.worst_t0}, {"worst_t", lv.worst_t}});
  const bool shifted = rep.s_low == 0.5 * spec.d();
  const double data = shifted ? rep.data_shifted : rep.data_critical;
  double sup = 0;
  for (const auto& r : rep.records) sup = std::max(sup, shifted ? functional_Y(rep, r.t) : functional_X(rep, r.t));
  ch.add("global bound", "sup_t of the time-space functional stays within 10 times its data", sup <= 10 * data,
         {{"functional", shifted ? "shifted" : "critical"}, {"data", data}, {"sup", sup},
          {"ratio", data > 0 ? sup / data : 0.0}});
  ch.add("energy identity", "residual of d/dt 1/2 |Z|^2 = -(BZ, Z) + nonlinear terms per unit time",
         rep.max_energy_residual <= 1e-7, {{"max_residual", rep.max_energy_residual}});
  norm_checks(ch, norms, rep.final_state);
  ch.add("final state", "SHA-256 of the final spectral coefficients", std::nullopt,
         {{"hash", state_hash(rep.final_state)}, {"t", rep.t_end}});
  Table t{{"t", "energy", "low", "high", "lyap", "dissipation", "smallness", "max_abs", "energy_residual"}, {}};
  for (const auto& r : rep.records)
    t.rows.push_back({num(r.t), num(r.energy), num(r.low), num(r.high), num(r.lyap), num(r.dissipation),
                      num(r.smallness), num(r.max_abs), num(r.energy_residual)});
  o.tables["series.csv"] = std::move(t);
  o.report["checks"] = ch.list();
  if (o.exit_code == kPass && ch.failed()) o.exit_code = kVerdictFailure;
  return o;
}

inline json fit_json(const DecayFit& f) {
  return {{"slope", f.slope}, {"theory", f.theory}, {"intercept", f.intercept}, {"rms_residual", f.rms_residual},
          {"points", f.points}};
}

inline Outcome run_decay(const json& cfg) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  const GridPtr g = build_grid(cfg);
  const SpectralField z0 = build_data(cfg, g, spec.n());
  SolverConfig sc = solver_config(cfg);
  const auto norms = parse_norms(cfg);
  const json& T = cfg["task"];
  const DecayVariant variant = T["variant"] == "baseline" ? DecayVariant::Baseline : DecayVariant::Shifted;
  sc.regularity = variant == DecayVariant::Baseline ? Regularity::Critical : Regularity::Shifted;
  const double t_lo = T["t_lo"], t_hi = T["t_hi"];
  if (!(t_lo > 0 && t_hi > t_lo)) throw ConfigError("", 0, "task.t_lo", "need 0 < t_lo < t_hi");
  DecaySpec ds;
  try {
    ds = make_decay_spec(FilterBank(g), z0, T["sigma1"], variant);
  } catch (const InvalidArgument& e) {
    throw ConfigError("", 0, "task.sigma1", e.what());
  }
  if (!sk_precheck(ch, spec, cfg)) {
    o.report["checks"] = ch.list();
    o.exit_code = kVerdictFailure;
    return o;
  }
  SnapshotRecorder rec;
  sc.observer = rec.observer();
  const TrajectoryReport rep = solve(spec, z0, sc, construct(spec));
  add_run_checks(ch, o, rep);
  const DecayRun r = decay_series(spec, rec.snaps, ds, t_lo, t_hi, sc.threshold);
  const double lt = T["low_tolerance"], rt = T["rate_tolerance"];
  json low = fit_json(r.low_fit);
  low["alpha1"] = ds.alpha1;
  low["c0"] = ds.c0;
  low["s_low"] = ds.s_low();
  ch.add("low-frequency exponent", "||Z||^l_{s_low} ~ (1 + c0 t)^(-alpha1)",
         std::abs(r.low_fit.slope + ds.alpha1) <= lt, low);
  ch.add("high-frequency exponent", "||Z||^h_{d/2+1} decays at least like (1 + c0 t)^(-2 alpha1)",
         r.high_fit.slope <= -2 * ds.alpha1 + rt, fit_json(r.high_fit));
  ch.add("damped-mode exponent", "||W||^l_{s_low} decays at least like (1 + c0 t)^(-2 alpha1)",
         r.damped_fit.slope <= -2 * ds.alpha1 + rt, fit_json(r.damped_fit));
  norm_checks(ch, norms, rep.final_state);
  ch.add("final state", "SHA-256 of the final spectral coefficients", std::nullopt,
         {{"hash", state_hash(rep.final_state)}, {"t", rep.t_end}});
  Table t{{"t", "low", "high", "damped"}, {}};
  for (size_t i = 0; i < r.t.size(); ++i) t.rows.push_back({num(r.t[i]), num(r.low[i]), num(r.high[i]), num(r.damped[i])});
  o.tables["series.csv"] = std::move(t);
  o.report["checks"] = ch.list();
  if (o.exit_code == kPass && ch.failed()) o.exit_code = kVerdictFailure;
  return o;
}

inline Outcome run_relax(const json& cfg, int threads) {
  Outcome o;
  Checks ch;
  const SystemSpec spec = build_system(cfg);
  const GridPtr g = build_grid(cfg);
  const SpectralField z0 = build_data(cfg, g, spec.n());
  const json& T = cfg["task"];
  RelaxConfig rc;
  rc.T_tau = T["T_tau"];
  rc.samples = T["sweep_samples"];
  rc.steps_per_eps = T["steps_per_eps"];
  rc.limit_dt = T["limit_dt"];
  rc.threads = std::max(1, threads);
  const std::vector<double> eps = T["epsilons"];
  EpsSweep sw;
  try {
    sw = convergence_study(spec, eps, z0, rc);
  } catch (const InvalidArgument& e) {
    throw ConfigError("", 0, "task", e.what());
  }
  bool all_done = true;
  Table sweep{{"eps", "delta_sup", "delta_l1", "w_l1", "w_check_l1", "s_l1", "z2_l2", "z1_drift", "steps", "max_cfl",
               "completed", "unrescaled_L"},
              {}};
  Table series{{"eps", "tau", "delta"}, {}};
  json runs = json::array();
  const double L = cfg["grid"]["L"];
  for (const EpsRun& r : sw.runs) {
    all_done = all_done && r.completed;
    sweep.rows.push_back({num(r.eps), num(r.delta_sup), num(r.delta_l1), num(r.w_l1), num(r.w_check_l1), num(r.s_l1),
                          num(r.z2_l2), num(r.z1_drift), std::to_string(r.steps), num(r.max_cfl),
                          r.completed ? "1" : "0", num(L / r.eps)});
    for (size_t i = 0; i < r.tau.size(); ++i) series.rows.push_back({num(r.eps), num(r.tau[i]), num(r.delta[i])});
    runs.push_back({{"eps", r.eps}, {"completed", r.completed}, {"failure", r.failure}, {"steps", r.steps},
                    {"unrescaled_L", L / r.eps}});
  }
  ch.add("runs", "every eps run reached the rescaled horizon; the unrescaled box has period 2 pi L / eps", all_done,
         {{"runs", runs}});
  auto in = [](double x, double lo, double hi) { return x >= lo && x <= hi; };
  ch.add("limit error rate", "sup_tau ||Z1~ - N||_{B^{d/2-1}} = O(eps)", in(sw.slope_delta_sup, 0.8, 1.2),
         {{"slope", sw.slope_delta_sup}, {"window", {0.8, 1.2}}});
  ch.add("damped mode rate", "int ||W~||_{B^{d/2}} dtau = O(eps)", in(sw.slope_w, 0.8, 1.2),
         {{"slope", sw.slope_w}, {"window", {0.8, 1.2}}});
  ch.add("Z2 rate", "||Z2||_{L2_t(B^{d/2})} = O(sqrt(eps))", in(sw.slope_z2, 0.4, 0.6),
         {{"slope", sw.slope_z2}, {"window", {0.4, 0.6}}});
  ch.add("monotone error", "the limit error decreases strictly along the sweep", sw.monotone, json::object());
  ch.add("other rates", "fitted slopes of the remaining sweep quantities", std::nullopt,
         {{"slope_delta_l1", sw.slope_delta_l1}, {"slope_source", sw.slope_s}, {"slope_w_check", sw.slope_w_check},
          {"limit_bound_constant", sw.limit_bound_constant}});
  o.tables["sweep.csv"] = std::move(sweep);
  o.tables["series.csv"] = std::move(series);
  o.report["checks"] = ch.list();
  o.exit_code = !all_done ? kNumericalFailure : ch.failed() ? kVerdictFailure : kPass;
  return o;
}

inline json list_builtins() {
  json systems = json::array();
  systems.push_back({{"name", "linearized-euler"}, {"parameters", {"d", "friction"}}});
  systems.push_back({{"name", "isentropic-euler"}, {"parameters", {"d", "gamma", "a", "rhobar", "epsilon"}}});
  systems.push_back({{"name", "sk-counterexample"}, {"parameters", {"d"}}});
  systems.push_back({{"name", "custom"}, {"parameters", {"d", "n1", "A1", "A2", "A3", "L2", "epsilon"}}});
  json ps = json::array();
  for (const Preset& p : presets())
    ps.push_back({{"name", p.name}, {"command", p.command}, {"description", p.description}, {"config", p.config}});
  return {{"systems", systems}, {"presets", ps}, {"schema", schema_json()}};
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Runs one experiment and writes its artifacts. Returns the exit code.
inline int run(const std::string& command, const Overrides& ov, int threads, std::ostream& log) {
  json cfg;
  Outcome o;
  try {
    cfg = resolve(command, ov);
    if (command == "analyze") o = run_analyze(cfg);
    else if (command == "certify") o = run_certify(cfg);
    else if (command == "simulate-linear") o = run_simulate_linear(cfg);
    else if (command == "simulate") o = run_simulate(cfg);
    else if (command == "decay") o = run_decay(cfg);
    else if (command == "relax") o = run_relax(cfg, threads);
    else throw ConfigError("", 0, "", "unknown command '" + command + "'");
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidArgument& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericalFailure& e) {
    log << "numerical failure: " << e.what() << "\n";
    o.exit_code = kNumericalFailure;
    o.report["checks"] = json::array({{{"name", "numerical failure"}, {"anchor", "run aborted"}, {"pass", false},
                                       {"values", {{"message", e.what()}}}}});
  }
  o.report["command"] = command;
  o.report["config"] = cfg;
  o.report["config_hash"] = config_hash(cfg);
  o.report["exit_code"] = o.exit_code;
  o.report["verdict"] = o.exit_code == kPass ? "pass" : o.exit_code == kVerdictFailure ? "fail" : "numerical-failure";

  const std::filesystem::path dir = cfg["output"]["directory"].get<std::string>();
  const auto formats = detail::split(cfg["output"]["formats"].get<std::string>(), " ,");
  auto wants = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
  try {
    std::filesystem::create_directories(dir);
    if (wants("json")) write_atomic(dir / "report.json", o.report.dump(2) + "\n");
    if (wants("csv"))
      for (const auto& [name, t] : o.tables) write_atomic(dir / name, to_csv(t));
  } catch (const std::exception& e) {
    log << "output error: " << e.what() << "\n";
    return kConfigError;
  }
  for (const auto& c : o.report["checks"]) {
    const std::string status = c["pass"].is_null() ? "info" : c["pass"].get<bool>() ? "PASS" : "FAIL";
    log << status << "  " << c["name"].get<std::string>() << "\n";
  }
  log << "verdict: " << o.report["verdict"].get<std::string>() << " (" << (dir / "report.json").string() << ")\n";
  return o.exit_code;
}

}  // namespace pds::cli
