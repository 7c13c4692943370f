#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pds::cli {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& source, int line, const std::string& field, const std::string& what)
      : std::runtime_error(format(source, line, field, what)), line(line), field(field) {}
  int line;
  std::string field;

 private:
  static std::string format(const std::string& source, int line, const std::string& field, const std::string& what) {
    std::ostringstream os;
    os << (source.empty() ? "config" : source);
    if (line > 0) os << ":" << line;
    if (!field.empty()) os << ": " << field;
    os << ": " << what;
    return os.str();
  }
};

enum class FieldType { String, Int, UInt, Double, Bool, DoubleList, Matrix };

struct Field {
  std::string section, key;
  FieldType type;
  json def;
  std::string help;
  std::vector<std::string> choices = {};
};

inline const std::vector<std::string>& task_kinds() {
  static const std::vector<std::string> k{"analyze", "certify", "simulate-linear", "simulate", "decay", "relax"};
  return k;
}

inline const std::vector<Field>& schema() {
  using T = FieldType;
  static const std::vector<Field> s{
      {"system", "name", T::String, "isentropic-euler", "built-in system or custom",
       {"linearized-euler", "isentropic-euler", "sk-counterexample", "custom"}},
      {"system", "d", T::Int, 1, "space dimension (1..3)"},
      {"system", "gamma", T::Double, 1.4, "adiabatic exponent (isentropic-euler)"},
      {"system", "a", T::Double, 1.0, "pressure constant, P = a rho^gamma (isentropic-euler)"},
      {"system", "rhobar", T::Double, 1.0, "reference density (isentropic-euler)"},
      {"system", "epsilon", T::Double, 1.0, "relaxation parameter (isentropic-euler, custom)"},
      {"system", "friction", T::Double, 1.0, "damping coefficient (linearized-euler)"},
      {"system", "n1", T::Int, 1, "size of the undamped block (custom)"},
      {"system", "A1", T::Matrix, nullptr, "flux matrix along axis 1 (custom)"},
      {"system", "A2", T::Matrix, nullptr, "flux matrix along axis 2 (custom)"},
      {"system", "A3", T::Matrix, nullptr, "flux matrix along axis 3 (custom)"},
      {"system", "L2", T::Matrix, nullptr, "damping block, n2 x n2 (custom)"},
      {"grid", "N", T::Int, 64, "modes per axis"},
      {"grid", "L", T::Double, 1.0, "period is 2 pi L"},
      {"solver", "dt", T::Double, 0.01, "time step upper bound"},
      {"solver", "T", T::Double, 50.0, "final time"},
      {"solver", "record_stride", T::Int, 10, "steps between records"},
      {"solver", "dealias", T::Bool, true, "2/3 rule"},
      {"solver", "cfl_safety", T::Double, 2.5, "largest accepted CFL number"},
      {"solver", "smallness_factor", T::Double, 0.1, "smallness limit relative to coercivity / flux gradient"},
      {"solver", "threshold", T::Double, 1.0, "low/high frequency split"},
      {"solver", "lyapunov_slack", T::Double, 1e-8, "slack of the Lyapunov inequality, relative to its initial value"},
      {"norms", "list", T::String, "", "entries 's p q threshold' separated by ';' (p, q in 1, 2, inf)"},
      {"data", "kind", T::String, "smooth", "initial data family", {"smooth", "gaussian", "random"}},
      {"data", "amplitude", T::Double, 1e-2, "amplitude of the first component"},
      {"data", "velocity", T::Double, 3e-3, "amplitude of the remaining components"},
      {"data", "width", T::Double, 1.0, "gaussian width"},
      {"data", "decay", T::Double, 0.3, "random data: spectrum exp(-decay |xi|)"},
      {"data", "seed", T::UInt, 1, "random seed (overridden by --seed)"},
      {"task", "kind", T::String, "", "must match the subcommand when set", {"", "analyze", "certify", "simulate-linear",
                                                                          "simulate", "decay", "relax"}},
      {"task", "directions", T::Int, 64, "direction sample parameter"},
      {"task", "samples", T::Int, 10000, "random evaluations (certify)"},
      {"task", "times", T::Int, 41, "output times in [0, T] (simulate-linear)"},
      {"task", "sigma1", T::Double, 0.5, "negative regularity of the data (decay)"},
      {"task", "variant", T::String, "shifted", "decay framework", {"baseline", "shifted"}},
      {"task", "t_lo", T::Double, 1.0, "fit window start (decay)"},
      {"task", "t_hi", T::Double, 32.0, "fit window end (decay)"},
      {"task", "low_tolerance", T::Double, 0.1, "accepted |slope - theory| for the low frequencies (decay)"},
      {"task", "rate_tolerance", T::Double, 0.2, "accepted excess over the predicted rate (decay)"},
      {"task", "epsilons", T::DoubleList, json::array({0.1, 0.05, 0.025}), "strictly decreasing sweep (relax)"},
      {"task", "T_tau", T::Double, 1.0, "rescaled horizon (relax)"},
      {"task", "sweep_samples", T::Int, 50, "comparison points (relax)"},
      {"task", "steps_per_eps", T::Int, 20, "hyperbolic dt = eps / steps_per_eps (relax)"},
      {"task", "limit_dt", T::Double, 1e-3, "time step of the limit equation (relax)"},
      {"output", "directory", T::String, "out", "artifact directory (overridden by --out)"},
      {"output", "formats", T::String, "json csv", "subset of 'json csv'"},
  };
  return s;
}

inline const char* type_name(FieldType t) {
  switch (t) {
    case FieldType::String: return "string";
    case FieldType::Int: return "int";
    case FieldType::UInt: return "uint64";
    case FieldType::Double: return "number";
    case FieldType::Bool: return "bool";
    case FieldType::DoubleList: return "number list";
    case FieldType::Matrix: return "matrix";
  }
  return "";
}

inline json schema_json() {
  json out = json::array();
  for (const Field& f : schema()) {
    json e{{"section", f.section}, {"key", f.key}, {"type", type_name(f.type)}, {"default", f.def}, {"help", f.help}};
    if (!f.choices.empty()) e["choices"] = f.choices;
    out.push_back(e);
  }
  return out;
}

// Raw config: section -> key -> value (strings from INI, native values from JSON), with line numbers when known.
struct RawConfig {
  std::string source;
  json values = json::object();
  std::map<std::string, int> lines;

  int line_of(const std::string& field) const {
    auto it = lines.find(field);
    return it == lines.end() ? 0 : it->second;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

// Line numbers of `key = value` entries, for diagnostics.
inline std::map<std::string, int> ini_lines(const std::string& text) {
  std::map<std::string, int> out;
  std::istringstream is(text);
  std::string line, section;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      out[section] = no;
      continue;
    }
    const auto eq = t.find('=');
    if (eq != std::string::npos) out[section.empty() ? trim(t.substr(0, eq)) : section + "." + trim(t.substr(0, eq))] = no;
  }
  return out;
}

}  // namespace detail

inline RawConfig parse_ini(const std::string& text, const std::string& source = "") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source, static_cast<int>(e.line()), "", e.message());
  }
  RawConfig rc;
  rc.source = source;
  rc.lines = detail::ini_lines(text);
  for (const auto& [sec, sub] : tree) {
    if (sub.empty()) throw ConfigError(source, rc.line_of(sec), sec, "entry outside of a section");
    json& s = rc.values[sec];
    for (const auto& [key, v] : sub) s[key] = v.get_value<std::string>();
  }
  return rc;
}

inline RawConfig parse_json(const std::string& text, const std::string& source = "") {
  RawConfig rc;
  rc.source = source;
  try {
    rc.values = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line
    const size_t upto = std::min(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ConfigError(source, line, "", e.what());
  }
  if (!rc.values.is_object()) throw ConfigError(source, 0, "", "top level must be an object of sections");
  for (const auto& [sec, sub] : rc.values.items())
    if (!sub.is_object()) throw ConfigError(source, 0, sec, "section must be an object");
  return rc;
}

inline RawConfig load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, 0, "", "cannot read file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool is_json = (path.size() > 5 && path.substr(path.size() - 5) == ".json") ||
                       (first != std::string::npos && text[first] == '{');
  return is_json ? parse_json(text, path) : parse_ini(text, path);
}

namespace detail {

inline double to_double(const std::string& s, bool& ok) {
  const std::string t = trim(s);
  double v = 0;
  if (t == "inf" || t == "+inf") return ok = true, std::numeric_limits<double>::infinity();
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  ok = !t.empty() && r.ec == std::errc() && r.ptr == t.data() + t.size();
  return v;
}

inline std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (seps.find(ch) != std::string::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

// Typed, canonical value of one field.
inline json coerce(const Field& f, const json& v, const RawConfig& rc) {
  const std::string name = f.section + "." + f.key;
  auto fail = [&](const std::string& what) -> json { throw ConfigError(rc.source, rc.line_of(name), name, what); };
  const std::string text = v.is_string() ? v.get<std::string>() : std::string();
  switch (f.type) {
    case FieldType::String: {
      if (!v.is_string()) return fail("expected a string");
      if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), text) == f.choices.end())
        return fail("'" + text + "' is not one of the accepted values");
      return text;
    }
    case FieldType::Int:
    case FieldType::UInt: {
      if (v.is_number_integer()) {
        if (f.type == FieldType::UInt && v.get<long long>() < 0) return fail("expected a nonnegative integer");
        return v;
      }
      if (!v.is_string()) return fail("expected an integer");
      const std::string t = detail::trim(text);
      if (f.type == FieldType::UInt) {
        unsigned long long u = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), u);
        if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) return fail("expected a nonnegative integer, got '" + text + "'");
        return u;
      }
      long long i = 0;
      const auto r = std::from_chars(t.data(), t.data() + t.size(), i);
      if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) return fail("expected an integer, got '" + text + "'");
      return i;
    }
    case FieldType::Double: {
      if (v.is_number()) return v.get<double>();
      if (!v.is_string()) return fail("expected a number");
      bool ok = false;
      const double x = detail::to_double(text, ok);
      if (!ok) return fail("expected a number, got '" + text + "'");
      return x;
    }
    case FieldType::Bool: {
      if (v.is_boolean()) return v;
      const std::string t = detail::trim(text);
      if (t == "true" || t == "yes" || t == "1") return true;
      if (t == "false" || t == "no" || t == "0") return false;
      return fail("expected true or false");
    }
    case FieldType::DoubleList: {
      json out = json::array();
      if (v.is_array()) {
        for (const auto& e : v) {
          if (!e.is_number()) return fail("expected a list of numbers");
          out.push_back(e.get<double>());
        }
        return out;
      }
      if (!v.is_string()) return fail("expected a list of numbers");
      for (const std::string& tok : detail::split(text, " ,\t")) {
        bool ok = false;
        const double x = detail::to_double(tok, ok);
        if (!ok) return fail("expected a number, got '" + tok + "'");
        out.push_back(x);
      }
      return out;
    }
    case FieldType::Matrix: {
      if (v.is_null()) return v;
      json rows = json::array();
      if (v.is_array()) {
        for (const auto& r : v) {
          if (!r.is_array()) return fail("expected an array of rows");
          json row = json::array();
          for (const auto& e : r) {
            if (!e.is_number()) return fail("matrix entries must be numbers");
            row.push_back(e.get<double>());
          }
          rows.push_back(row);
        }
      } else if (v.is_string()) {
        for (const std::string& r : detail::split(text, ";")) {
          json row = json::array();
          for (const std::string& tok : detail::split(r, " ,\t")) {
            bool ok = false;
            const double x = detail::to_double(tok, ok);
            if (!ok) return fail("expected a number, got '" + tok + "'");
            row.push_back(x);
          }
          rows.push_back(row);
        }
      } else {
        return fail("expected a matrix");
      }
      if (rows.empty()) return fail("empty matrix");
      for (const auto& r : rows)
        if (r.size() != rows[0].size()) return fail("rows have different lengths");
      return rows;
    }
  }
  return fail("unsupported type");
}

// Overlays `rc` on `base`, rejecting unknown sections and keys.
inline json overlay(json base, const RawConfig& rc) {
  for (const auto& [sec, sub] : rc.values.items()) {
    bool known = false;
    for (const Field& f : schema()) known = known || f.section == sec;
    if (!known) throw ConfigError(rc.source, rc.line_of(sec), sec, "unknown section");
    for (const auto& [key, v] : sub.items()) {
      const std::string name = sec + "." + key;
      auto it = std::find_if(schema().begin(), schema().end(),
                             [&](const Field& f) { return f.section == sec && f.key == key; });
      if (it == schema().end()) throw ConfigError(rc.source, rc.line_of(name), name, "unknown key");
      base[sec][key] = coerce(*it, v, rc);
    }
  }
  return base;
}

inline json defaults() {
  json out = json::object();
  for (const Field& f : schema()) out[f.section][f.key] = f.def;
  return out;
}

inline std::string sha256_hex(const void* data, size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string config_hash(const json& resolved) {
  const std::string s = resolved.dump();
  return sha256_hex(s.data(), s.size());
}

struct Preset {
  std::string name, command, description;
  json config;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> p{
      {"euler-analyze", "analyze", "symbol analysis of isentropic Euler with damping in d = 2",
       {{"system", {{"name", "isentropic-euler"}, {"d", 2}}}, {"task", {{"kind", "analyze"}}}}},
      {"thm-decay-d2", "decay", "decay exponents for isentropic Euler, d = 2, sigma1 = 1, alpha1 = 1/2",
       {{"system", {{"name", "isentropic-euler"}, {"d", 2}}},
        {"grid", {{"N", 128}, {"L", 16.0}}},
        {"solver", {{"dt", 0.05}, {"T", 32.0}, {"record_stride", 5}}},
        {"data", {{"kind", "gaussian"}, {"amplitude", 0.02}, {"velocity", 0.0}, {"width", 1.5}}},
        {"task", {{"kind", "decay"}, {"sigma1", 1.0}, {"variant", "baseline"}, {"t_lo", 1.0}, {"t_hi", 32.0}}}}},
      {"relax-sweep-euler", "relax", "relaxation sweep for isentropic Euler, d = 1, eps in {0.1, 0.05, 0.025}",
       {{"system", {{"name", "isentropic-euler"}, {"d", 1}}},
        {"grid", {{"N", 64}, {"L", 1.0}}},
        {"data", {{"kind", "smooth"}, {"amplitude", 0.1}, {"velocity", 0.1}}},
        {"task", {{"kind", "relax"}, {"epsilons", json::array({0.1, 0.05, 0.025})}, {"sweep_samples", 50}}}}},
  };
  return p;
}

inline const Preset* find_preset(const std::string& name) {
  for (const Preset& p : presets())
    if (p.name == name) return &p;
  return nullptr;
}

struct Overrides {
  std::string config_path, preset, out_dir;
  std::optional<unsigned long long> seed;
};

// defaults <- preset <- config file <- command-line flags
inline json resolve(const std::string& command, const Overrides& o) {
  json cfg = defaults();
  if (!o.preset.empty()) {
    const Preset* p = find_preset(o.preset);
    if (!p) throw ConfigError("", 0, "--preset", "unknown preset '" + o.preset + "'");
    RawConfig rc;
    rc.source = "preset " + p->name;
    rc.values = p->config;
    cfg = overlay(cfg, rc);
  }
  if (!o.config_path.empty()) cfg = overlay(cfg, load_file(o.config_path));
  if (o.seed) cfg["data"]["seed"] = *o.seed;
  if (!o.out_dir.empty()) cfg["output"]["directory"] = o.out_dir;
  const std::string kind = cfg["task"]["kind"];
  if (!kind.empty() && kind != command)
    throw ConfigError(o.config_path, 0, "task.kind", "'" + kind + "' does not match the subcommand '" + command + "'");
  cfg["task"]["kind"] = command;
  for (const std::string& f : detail::split(cfg["output"]["formats"].get<std::string>(), " ,"))
    if (f != "json" && f != "csv") throw ConfigError(o.config_path, 0, "output.formats", "unknown format '" + f + "'");
  return cfg;
}

}  // namespace pds::cli
