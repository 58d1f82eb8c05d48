#pragma once
// YAML run configuration. Physical quantities carry explicit unit suffixes
// ("3.2 MHz", "2.5 us", "65 fF", "-160 dBm") and are converted to SI with
// angular frequencies in rad/s.

#include "wgqed/coupler.hpp"
#include "wgqed/emission.hpp"
#include "wgqed/tomography.hpp"
#include "wgqed/waveguide.hpp"

#include <yaml-cpp/yaml.h>

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace wgqed::cli {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Quantity { frequency, time, capacitance, power, angle, number };

namespace detail {

struct Unit {
  const char* name;
  double scale;
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline const std::vector<Unit>& units_for(Quantity q) {
  static const std::vector<Unit> freq{{"GHz", kTwoPi * 1e9}, {"MHz", kTwoPi * 1e6}, {"kHz", kTwoPi * 1e3},
                                      {"Hz", kTwoPi}, {"rad/s", 1.0}};
  static const std::vector<Unit> time{{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"µs", 1e-6}, {"ns", 1e-9}};
  static const std::vector<Unit> cap{{"F", 1.0}, {"pF", 1e-12}, {"fF", 1e-15}, {"aF", 1e-18}};
  static const std::vector<Unit> power{{"dBm", 1.0}};
  static const std::vector<Unit> angle{{"rad", 1.0}, {"pi", kPi}};
  static const std::vector<Unit> none{};
  switch (q) {
    case Quantity::frequency: return freq;
    case Quantity::time: return time;
    case Quantity::capacitance: return cap;
    case Quantity::power: return power;
    case Quantity::angle: return angle;
    case Quantity::number: return none;
  }
  return none;
}

inline const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::frequency: return "frequency";
    case Quantity::time: return "time";
    case Quantity::capacitance: return "capacitance";
    case Quantity::power: return "power";
    case Quantity::angle: return "angle";
    case Quantity::number: return "number";
  }
  return "?";
}

}  // namespace detail

/// Parse "<number> <unit>". `gamma` enables the "gamma" suffix for
/// frequencies (multiples of the emitter decay rate); 0 disables it.
inline double parse_quantity(const std::string& text, Quantity q, const std::string& where, double gamma = 0.0) {
  const std::string s = detail::trim(text);
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || errno == ERANGE || !std::isfinite(v))
    throw ConfigError(where + ": expected a " + detail::quantity_name(q) + ", got '" + text + "'");
  const std::string unit = detail::trim(std::string(end));
  if (q == Quantity::number) {
    if (!unit.empty()) throw ConfigError(where + ": unexpected unit '" + unit + "'");
    return v;
  }
  if (unit.empty()) {
    if (q == Quantity::angle) return v;
    throw ConfigError(where + ": missing unit suffix on '" + text + "'");
  }
  if (q == Quantity::frequency && unit == "gamma") {
    if (!(gamma > 0.0)) throw ConfigError(where + ": 'gamma' units are not available here");
    return v * gamma;
  }
  for (const auto& u : detail::units_for(q))
    if (unit == u.name) return v * u.scale;
  throw ConfigError(where + ": unknown " + std::string(detail::quantity_name(q)) + " unit '" + unit + "'");
}

/// A parsed config file, plus its raw bytes for hashing and echo.
struct RunConfig {
  YAML::Node root;
  std::string text;
  std::string path;

  static RunConfig parse(const std::string& text, const std::string& path = "<string>") {
    RunConfig c;
    c.text = text;
    c.path = path;
    try {
      c.root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
    if (!c.root.IsMap()) throw ConfigError(path + ": top level must be a mapping");
    return c;
  }
};

// ------------------------------------------------------------ node access

// absent keys and explicit nulls both count as missing
inline bool present(const YAML::Node& n) { return n.IsDefined() && !n.IsNull(); }

inline YAML::Node child(const YAML::Node& n, const std::string& key) {
  if (!present(n) || !n.IsMap()) return YAML::Node();
  return n[key];
}

inline void check_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!present(n)) return;
  if (!n.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

inline YAML::Node section(const RunConfig& c, const std::string& name, bool required = true) {
  YAML::Node s = child(c.root, name);
  if (!present(s) && required) throw ConfigError("missing section '" + name + "'");
  if (present(s) && !s.IsMap()) throw ConfigError("section '" + name + "' must be a mapping");
  return s;
}

inline std::string scalar_text(const YAML::Node& v, const std::string& where) {
  if (!v.IsScalar()) throw ConfigError(where + ": expected a scalar");
  return v.Scalar();
}

inline std::optional<double> optional_quantity(const YAML::Node& n, const std::string& key, Quantity q,
                                               const std::string& where, double gamma = 0.0) {
  const YAML::Node v = child(n, key);
  if (!present(v)) return std::nullopt;
  return parse_quantity(scalar_text(v, where + "." + key), q, where + "." + key, gamma);
}

inline double quantity(const YAML::Node& n, const std::string& key, Quantity q, const std::string& where,
                       std::optional<double> fallback = std::nullopt, double gamma = 0.0) {
  if (auto v = optional_quantity(n, key, q, where, gamma)) return *v;
  if (fallback) return *fallback;
  throw ConfigError(where + ": missing key '" + key + "'");
}

inline std::string text_value(const YAML::Node& n, const std::string& key, const std::string& where,
                              std::optional<std::string> fallback = std::nullopt) {
  const YAML::Node v = child(n, key);
  if (!present(v)) {
    if (fallback) return *fallback;
    throw ConfigError(where + ": missing key '" + key + "'");
  }
  return scalar_text(v, where + "." + key);
}

inline bool flag_value(const YAML::Node& n, const std::string& key, const std::string& where, bool fallback) {
  const YAML::Node v = child(n, key);
  if (!present(v)) return fallback;
  const std::string s = scalar_text(v, where + "." + key);
  if (s == "true" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(where + "." + key + ": expected true or false, got '" + s + "'");
}

inline std::uint64_t count_value(const YAML::Node& n, const std::string& key, const std::string& where,
                                 std::optional<std::uint64_t> fallback = std::nullopt) {
  const YAML::Node v = child(n, key);
  if (!present(v)) {
    if (fallback) return *fallback;
    throw ConfigError(where + ": missing key '" + key + "'");
  }
  const std::string s = scalar_text(v, where + "." + key);
  // allow 1e6 style as long as the value is a whole number
  const double d = parse_quantity(s, Quantity::number, where + "." + key);
  if (d < 0.0 || d != std::floor(d) || d > 1.8e19) throw ConfigError(where + "." + key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

/// Either an explicit list of values or {start, stop, points}.
inline std::vector<double> grid_value(const YAML::Node& n, const std::string& key, Quantity q, const std::string& where,
                                      double gamma = 0.0) {
  const YAML::Node g = child(n, key);
  const std::string at = where + "." + key;
  if (!present(g)) throw ConfigError(where + ": missing grid '" + key + "'");
  std::vector<double> out;
  if (g.IsSequence()) {
    for (std::size_t i = 0; i < g.size(); ++i)
      out.push_back(parse_quantity(scalar_text(g[i], at), q, at + "[" + std::to_string(i) + "]", gamma));
  } else if (g.IsMap()) {
    check_keys(g, at, {"start", "stop", "points"});
    const double a = quantity(g, "start", q, at, std::nullopt, gamma);
    const double b = quantity(g, "stop", q, at, std::nullopt, gamma);
    const auto pts = count_value(g, "points", at);
    if (pts == 0) throw ConfigError(at + ": points must be at least 1");
    if (pts == 1 && a != b) throw ConfigError(at + ": a single point needs start == stop");
    out = waveguide::linspace(a, b, static_cast<std::size_t>(pts));
  } else if (g.IsScalar()) {
    out.push_back(parse_quantity(g.Scalar(), q, at, gamma));
  } else {
    throw ConfigError(at + ": expected a list or {start, stop, points}");
  }
  if (out.empty()) throw ConfigError(at + ": grid is empty");
  return out;
}

// ---------------------------------------------------- physics sections

template <class F>
auto validated(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline waveguide::EmitterParams emitter_params(const RunConfig& c) {
  const YAML::Node s = section(c, "emitter");
  check_keys(s, "emitter", {"omega1", "omega2", "gamma", "gamma_phi1", "gamma_phi2", "j_c", "j_sigma", "kdx"});
  waveguide::EmitterParams p;
  p.gamma = quantity(s, "gamma", Quantity::frequency, "emitter", p.gamma);
  p.omega1 = quantity(s, "omega1", Quantity::frequency, "emitter", p.omega1);
  p.omega2 = quantity(s, "omega2", Quantity::frequency, "emitter", p.omega1);
  p.gamma_phi1 = quantity(s, "gamma_phi1", Quantity::frequency, "emitter", 0.0, p.gamma);
  p.gamma_phi2 = quantity(s, "gamma_phi2", Quantity::frequency, "emitter", 0.0, p.gamma);
  p.kdx = quantity(s, "kdx", Quantity::angle, "emitter", p.kdx);
  if (present(child(s, "j_c")) && present(child(s, "j_sigma"))) throw ConfigError("emitter: give either j_c or j_sigma, not both");
  if (auto js = optional_quantity(s, "j_sigma", Quantity::frequency, "emitter", p.gamma))
    p.j_c = p.j_c_for(*js);
  else
    p.j_c = quantity(s, "j_c", Quantity::frequency, "emitter", p.j_c_for(0.0), p.gamma);
  validated("emitter", [&] { p.validate(); return 0; });
  return p;
}

inline waveguide::DriveSpec drive_spec(const RunConfig& c) {
  const YAML::Node s = section(c, "drive", false);
  check_keys(s, "drive", {"power", "direction"});
  waveguide::DriveSpec d;
  d.power_dbm = quantity(s, "power", Quantity::power, "drive", d.power_dbm);
  const std::string dir = text_value(s, "direction", "drive", std::string("right"));
  if (dir == "right")
    d.direction = waveguide::Direction::right;
  else if (dir == "left")
    d.direction = waveguide::Direction::left;
  else
    throw ConfigError("drive.direction: expected left or right, got '" + dir + "'");
  return d;
}

inline emission::InitialStateKind state_kind(const std::string& s, const std::string& where) {
  using K = emission::InitialStateKind;
  if (s == "psi_plus") return K::psi_plus;
  if (s == "psi_minus") return K::psi_minus;
  if (s == "half_plus") return K::half_plus;
  if (s == "half_minus") return K::half_minus;
  throw ConfigError(where + ": unknown initial state '" + s + "' (psi_plus, psi_minus, half_plus, half_minus)");
}

struct EmissionSetup {
  emission::FourQubitParams params;
  emission::InitialStateKind kind = emission::InitialStateKind::half_plus;
  std::string kind_name = "half_plus";
  std::vector<double> times;
};

inline EmissionSetup emission_setup(const RunConfig& c) {
  const YAML::Node s = section(c, "emission");
  check_keys(s, "emission", {"gamma", "g_eff", "g_eff13", "g_eff24", "gamma_phi1", "gamma_phi2", "data_t1",
                             "data_tphi", "kdx", "j_sigma", "state", "t_end", "points"});
  EmissionSetup e;
  auto& p = e.params;
  p.gamma = quantity(s, "gamma", Quantity::frequency, "emission", p.gamma);
  const double g = quantity(s, "g_eff", Quantity::frequency, "emission", p.g_eff13, p.gamma);
  p.g_eff13 = quantity(s, "g_eff13", Quantity::frequency, "emission", g, p.gamma);
  p.g_eff24 = quantity(s, "g_eff24", Quantity::frequency, "emission", g, p.gamma);
  p.gamma_phi1 = quantity(s, "gamma_phi1", Quantity::frequency, "emission", 0.0, p.gamma);
  p.gamma_phi2 = quantity(s, "gamma_phi2", Quantity::frequency, "emission", 0.0, p.gamma);
  p.data_t1 = quantity(s, "data_t1", Quantity::time, "emission", p.data_t1);
  p.data_tphi = quantity(s, "data_tphi", Quantity::time, "emission", p.data_tphi);
  p.kdx = quantity(s, "kdx", Quantity::angle, "emission", p.kdx);
  p.j_sigma = quantity(s, "j_sigma", Quantity::frequency, "emission", 0.0, p.gamma);
  e.kind_name = text_value(s, "state", "emission", std::string("half_plus"));
  e.kind = state_kind(e.kind_name, "emission.state");
  const double t_end = quantity(s, "t_end", Quantity::time, "emission", 2.5e-6);
  const auto points = count_value(s, "points", "emission", 2001);
  if (points < 2) throw ConfigError("emission.points: need at least 2");
  if (!(t_end > 0.0)) throw ConfigError("emission.t_end: must be positive");
  if (t_end < 5.0 / p.gamma) throw ConfigError("emission.t_end: must cover at least 5 emitter lifetimes");
  e.times = emission::default_grid(t_end, static_cast<std::size_t>(points));
  validated("emission", [&] { p.validate(); return 0; });
  return e;
}

struct CouplerSetup {
  coupler::CouplerCircuit circuit;  // at the operating point
  double target_g = 0.0;
};

inline CouplerSetup coupler_setup(const RunConfig& c) {
  const YAML::Node s = section(c, "coupler");
  check_keys(s, "coupler", {"c_i", "c_j", "c_c", "c_ic", "c_jc", "c_ij", "omega_i", "omega_j", "omega_c0", "g_eff"});
  coupler::CouplerCircuit cc;
  cc.c_i = quantity(s, "c_i", Quantity::capacitance, "coupler", cc.c_i);
  cc.c_j = quantity(s, "c_j", Quantity::capacitance, "coupler", cc.c_j);
  cc.c_c = quantity(s, "c_c", Quantity::capacitance, "coupler", cc.c_c);
  cc.c_ic = quantity(s, "c_ic", Quantity::capacitance, "coupler", cc.c_ic);
  cc.c_jc = quantity(s, "c_jc", Quantity::capacitance, "coupler", cc.c_jc);
  cc.c_ij = quantity(s, "c_ij", Quantity::capacitance, "coupler", cc.c_ij);
  cc.omega_i = quantity(s, "omega_i", Quantity::frequency, "coupler", cc.omega_i);
  cc.omega_j = quantity(s, "omega_j", Quantity::frequency, "coupler", cc.omega_j);
  cc.omega_c0 = quantity(s, "omega_c0", Quantity::frequency, "coupler", cc.omega_c0);
  CouplerSetup out;
  out.target_g = quantity(s, "g_eff", Quantity::frequency, "coupler", kTwoPi * 1.28e6);
  if (!(out.target_g > 0.0)) throw ConfigError("coupler.g_eff: must be positive");
  out.circuit = validated("coupler", [&] { return coupler::operating_point(cc, out.target_g); });
  return out;
}

inline tomography::AmplifierModel amplifier_model(const RunConfig& c) {
  const YAML::Node s = section(c, "amplifier", false);
  check_keys(s, "amplifier", {"gain", "added_noise_L", "added_noise_R"});
  tomography::AmplifierModel a;
  a.gain = quantity(s, "gain", Quantity::number, "amplifier", a.gain);
  a.added_noise_L = quantity(s, "added_noise_L", Quantity::number, "amplifier", a.added_noise_L);
  a.added_noise_R = quantity(s, "added_noise_R", Quantity::number, "amplifier", a.added_noise_R);
  validated("amplifier", [&] { a.validate(); return 0; });
  return a;
}

/// Seed precedence: command-line flag, then WGQED_SEED, then the config.
inline std::uint64_t resolve_seed(const RunConfig& c, std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("WGQED_SEED"); env && *env) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || errno == ERANGE || env[0] == '-') throw ConfigError("WGQED_SEED: not an unsigned integer");
    return v;
  }
  return count_value(c.root, "seed", "config", 1);
}

}  // namespace wgqed::cli
