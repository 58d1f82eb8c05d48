// wgqed: runs the experiments and writes plot-ready CSV datasets plus a
// manifest with checksums. Exit codes: 0 ok, 2 config, 3 numerical, 4 I/O.

#include <CLI11.hpp>

#include <fmt/format.h>

#include <chrono>
#include <iostream>
#include <sstream>

#include "config.hpp"
#include "output.hpp"

using namespace wgqed;
using namespace wgqed::cli;

namespace {

constexpr double kMHz = kTwoPi * 1e6;  // rad/s per MHz of f = omega/2pi
constexpr double kUs = 1e-6;

struct Globals {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::size_t threads = default_threads();
  bool quiet = false;
};

struct Context {
  const Globals& g;
  RunConfig cfg;
  std::uint64_t seed = 0;
  std::string name;

  void say(const std::string& line) const {
    if (!g.quiet) std::cout << line << '\n';
  }
};

std::string run_name(const RunConfig& c, const char* fallback) {
  const std::string n = text_value(c.root, "name", "config", std::string(fallback));
  if (n.empty() || n.find_first_of("/\\") != std::string::npos || n == "." || n == "..")
    throw ConfigError("name: must be a plain file stem");
  return n;
}

std::string brief(double v) { return fmt::format("{:.9g}", v); }

std::vector<Column> scatter_columns(const char* outer, const char* outer_unit) {
  return {{outer, outer_unit}, {"delta", "MHz"}, {"abs_s21", "1"}, {"re_s21", "1"}, {"im_s21", "1"}};
}

// ------------------------------------------------------------ commands

void cmd_spectroscopy(Context& ctx, RunOutput& out) {
  const auto p = emitter_params(ctx.cfg);
  const auto d = drive_spec(ctx.cfg);
  const YAML::Node grid = section(ctx.cfg, "grid");
  check_keys(grid, "grid", {"Delta", "delta"});
  const auto big = grid_value(grid, "Delta", Quantity::frequency, "grid", p.gamma);
  const auto small = grid_value(grid, "delta", Quantity::frequency, "grid", p.gamma);
  const auto g = waveguide::sweep_spectroscopy(p, d, big, small, ctx.g.threads);

  CsvTable t("two-emitter transmission vs emitter detuning Delta and probe detuning delta (frequencies are omega/2pi)",
             scatter_columns("Delta", "MHz"));
  t.add_note(fmt::format("gamma/2pi = {} MHz, J_sigma/2pi = {} MHz, probe {} dBm", brief(p.gamma / kMHz),
                         brief(p.j_sigma() / kMHz), brief(d.power_dbm)));
  double lowest = 1.0;
  for (const auto& s : g.points) {
    t.add_row({s.Delta / kMHz, s.delta / kMHz, std::abs(s.s21), s.s21.real(), s.s21.imag()});
    lowest = std::min(lowest, std::abs(s.s21));
  }
  out.write(ctx.name + ".csv", t);
  out.summary()["points"] = g.points.size();
  out.summary()["min_abs_s21"] = lowest;
  ctx.say(fmt::format("{}: {} points, min |S21| = {:.6f}", ctx.name, g.points.size(), lowest));
}

void cmd_coupling_sweep(Context& ctx, RunOutput& out) {
  const auto p = emitter_params(ctx.cfg);
  const auto d = drive_spec(ctx.cfg);
  const YAML::Node grid = section(ctx.cfg, "grid");
  check_keys(grid, "grid", {"j_sigma", "delta"});
  const auto js = grid_value(grid, "j_sigma", Quantity::frequency, "grid", p.gamma);
  const auto small = grid_value(grid, "delta", Quantity::frequency, "grid", p.gamma);
  const auto g = waveguide::sweep_coupling(p, d, js, small, ctx.g.threads);

  CsvTable t("two-emitter transmission vs net exchange J_sigma and probe detuning delta at Delta = 0",
             scatter_columns("j_sigma", "MHz"));
  t.add_note(fmt::format("gamma/2pi = {} MHz, probe {} dBm", brief(p.gamma / kMHz), brief(d.power_dbm)));
  for (const auto& s : g.points) t.add_row({s.j_sigma / kMHz, s.delta / kMHz, std::abs(s.s21), s.s21.real(), s.s21.imag()});
  out.write(ctx.name + ".csv", t);

  const YAML::Node dips = section(ctx.cfg, "dips", false);
  if (present(dips)) {
    check_keys(dips, "dips", {"j_sigma", "span", "points"});
    const auto at = grid_value(dips, "j_sigma", Quantity::frequency, "dips", p.gamma);
    const double span = quantity(dips, "span", Quantity::frequency, "dips", 5.0 * p.gamma, p.gamma);
    const auto pts = count_value(dips, "points", "dips", 401);
    if (pts < 3) throw ConfigError("dips.points: need at least 3");
    CsvTable dt("transmission dip locations at fixed J_sigma", {{"j_sigma", "MHz"}, {"delta_dip", "MHz"}, {"ratio", "1"}});
    dt.add_note("ratio = delta_dip / |J_sigma|");
    auto& arr = out.summary()["dips"] = nlohmann::ordered_json::array();
    for (double j : at) {
      waveguide::EmitterParams q = p;
      q.omega2 = q.omega1;
      q.j_c = q.j_c_for(j);
      const auto found = waveguide::transmission_dips(q, d, -span, span, static_cast<std::size_t>(pts));
      std::string list;
      for (double x : found) {
        dt.add_row({j / kMHz, x / kMHz, j != 0.0 ? x / std::abs(j) : 0.0});
        list += fmt::format(" {:+.4f}", x / kMHz);
      }
      nlohmann::ordered_json entry{{"j_sigma_mhz", j / kMHz}, {"dips_mhz", nlohmann::ordered_json::array()}};
      for (double x : found) entry["dips_mhz"].push_back(x / kMHz);
      arr.push_back(entry);
      ctx.say(fmt::format("J_sigma/2pi = {:.4f} MHz: dips at{} MHz", j / kMHz, list.empty() ? " (none)" : list));
    }
    out.write(ctx.name + "_dips.csv", dt);
  }
}

void cmd_power_sweep(Context& ctx, RunOutput& out) {
  const auto p = emitter_params(ctx.cfg);
  const auto d = drive_spec(ctx.cfg);
  const YAML::Node grid = section(ctx.cfg, "grid");
  check_keys(grid, "grid", {"power"});
  const auto powers = grid_value(grid, "power", Quantity::power, "grid");
  const auto pts = waveguide::sweep_power(p, d, powers, ctx.g.threads);

  CsvTable t("resonant two-emitter transmission vs probe power at Delta = delta = 0",
             {{"power", "dBm"}, {"abs_s21", "1"}, {"re_s21", "1"}, {"im_s21", "1"}});
  t.add_note(fmt::format("gamma/2pi = {} MHz, J_sigma/2pi = {} MHz", brief(p.gamma / kMHz), brief(p.j_sigma() / kMHz)));
  std::size_t imin = 0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    t.add_row({pts[k].power_dbm, std::abs(pts[k].s21), pts[k].s21.real(), pts[k].s21.imag()});
    if (std::abs(pts[k].s21) < std::abs(pts[imin].s21)) imin = k;
  }
  out.write(ctx.name + ".csv", t);
  const double lo = std::abs(pts.front().s21), hi = std::abs(pts.back().s21);
  out.summary()["abs_s21_first"] = lo;
  out.summary()["abs_s21_last"] = hi;
  out.summary()["min_power_dbm"] = pts[imin].power_dbm;
  out.summary()["min_abs_s21"] = std::abs(pts[imin].s21);
  ctx.say(fmt::format("{}: |S21| = {:.5f} at {} dBm, {:.5f} at {} dBm, minimum {:.5f} at {} dBm", ctx.name, lo,
                      pts.front().power_dbm, hi, pts.back().power_dbm, std::abs(pts[imin].s21), pts[imin].power_dbm));
}

void cmd_calibrate(Context& ctx, RunOutput& out) {
  const auto p = emitter_params(ctx.cfg);
  const auto d = drive_spec(ctx.cfg);
  const YAML::Node s = section(ctx.cfg, "calibration");
  check_keys(s, "calibration", {"j_lo", "j_hi", "points"});
  const double lo = quantity(s, "j_lo", Quantity::frequency, "calibration", std::nullopt, p.gamma);
  const double hi = quantity(s, "j_hi", Quantity::frequency, "calibration", std::nullopt, p.gamma);
  const auto n = count_value(s, "points", "calibration", 41);
  if (!(lo < hi)) throw ConfigError("calibration: j_lo must be below j_hi");
  if (n < 3) throw ConfigError("calibration.points: need at least 3");
  const auto r = waveguide::calibrate_jsigma(p, d, lo, hi, static_cast<std::size_t>(n), ctx.g.threads);

  CsvTable t("resonant transmission vs coupler exchange j_c", {{"j_c", "MHz"}, {"abs_s21", "1"}});
  for (const auto& [j, a] : r.scan) t.add_row({j / kMHz, a});
  t.add_note(fmt::format("optimum j_c/2pi = {} MHz, J_sigma/2pi = {} MHz", brief(r.j_c / kMHz), brief(r.j_sigma / kMHz)));
  out.write(ctx.name + ".csv", t);
  out.summary()["j_c_mhz"] = r.j_c / kMHz;
  out.summary()["j_c_over_gamma"] = r.j_c / p.gamma;
  out.summary()["j_sigma_mhz"] = r.j_sigma / kMHz;
  out.summary()["j_sigma_over_gamma"] = r.j_sigma / p.gamma;
  out.summary()["abs_s21"] = r.s21_abs;
  ctx.say(fmt::format("j_c*/2pi = {:.6f} MHz (j_c*/gamma = {:.6f}), J_sigma/2pi = {:.3e} MHz (J_sigma/gamma = {:.3e}), |S21| = {:.6f}",
                      r.j_c / kMHz, r.j_c / p.gamma, r.j_sigma / kMHz, r.j_sigma / p.gamma, r.s21_abs));
}

void cmd_emission(Context& ctx, RunOutput& out) {
  const auto e = emission_setup(ctx.cfg);
  const auto& p = e.params;
  const auto r = emission::simulate_emission(p, e.kind, e.times);
  const auto dn = emission::directionality(r);
  const auto balance = emission::excitation_balance(r);

  // analytic references: data-qubit populations for every preparation,
  // fields for the vacuum superpositions (single excitations carry none)
  const double p3 = r.population[2].front(), p4 = r.population[3].front();
  const int sign = e.kind == emission::InitialStateKind::half_plus ? 1 : e.kind == emission::InitialStateKind::half_minus ? -1 : 0;
  const double fs = std::sqrt(kUs);  // sqrt(1/s) -> sqrt(1/us)

  CsvTable t("four-qubit emission: output fields, photon fluxes and qubit populations",
             {{"t", "us"}, {"re_a_left", "us^-1/2"}, {"im_a_left", "us^-1/2"}, {"re_a_right", "us^-1/2"},
              {"im_a_right", "us^-1/2"}, {"flux_left", "1/us"}, {"flux_right", "1/us"}, {"p_q1", "1"},
              {"p_q2", "1"}, {"p_q3", "1"}, {"p_q4", "1"}, {"re_a_left_analytic", "us^-1/2"},
              {"im_a_left_analytic", "us^-1/2"}, {"re_a_right_analytic", "us^-1/2"},
              {"im_a_right_analytic", "us^-1/2"}, {"p_q3_analytic", "1"}, {"p_q4_analytic", "1"}});
  t.add_note(fmt::format("state {}, gamma/2pi = {} MHz, g_eff/2pi = {} MHz", e.kind_name, brief(p.gamma / kMHz),
                         brief(p.g_eff13 / kMHz)));
  t.add_note("analytic columns hold for the ideal model (no dephasing, no residual exchange)");
  double field_diff = 0.0, field_peak = 0.0, pop_diff = 0.0, balance_dev = 0.0;
  double peak_left = 0.0, peak_right = 0.0;
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    const double tk = r.times[k];
    std::pair<cplx, cplx> a{0.0, 0.0};
    if (sign != 0) a = emission::analytic_wavepacket(tk, p.gamma, p.g_eff13, sign);
    const double q3 = emission::analytic_population(tk, p.gamma, p.g_eff13, p3);
    const double q4 = emission::analytic_population(tk, p.gamma, p.g_eff24, p4);
    t.add_row({tk / kUs, r.a_left[k].real() * fs, r.a_left[k].imag() * fs, r.a_right[k].real() * fs,
               r.a_right[k].imag() * fs, r.flux_left[k] * kUs, r.flux_right[k] * kUs, r.population[0][k],
               r.population[1][k], r.population[2][k], r.population[3][k], a.first.real() * fs, a.first.imag() * fs,
               a.second.real() * fs, a.second.imag() * fs, q3, q4});
    field_diff = std::max({field_diff, std::abs(r.a_left[k] - a.first), std::abs(r.a_right[k] - a.second)});
    field_peak = std::max({field_peak, std::abs(a.first), std::abs(a.second)});
    pop_diff = std::max({pop_diff, std::abs(r.population[2][k] - q3), std::abs(r.population[3][k] - q4)});
    balance_dev = std::max(balance_dev, std::abs(balance[k] - balance.front()));
    peak_left = std::max(peak_left, std::abs(r.a_left[k]));
    peak_right = std::max(peak_right, std::abs(r.a_right[k]));
  }
  out.write(ctx.name + ".csv", t);
  auto& s = out.summary();
  s["state"] = e.kind_name;
  s["n_left"] = dn.n_left;
  s["n_right"] = dn.n_right;
  s["directionality"] = dn.d;
  s["peak_abs_a_left"] = peak_left * fs;
  s["peak_abs_a_right"] = peak_right * fs;
  s["max_population_diff"] = pop_diff;
  s["max_field_diff_relative"] = field_peak > 0.0 ? field_diff / field_peak : field_diff * fs;
  s["max_balance_drift"] = balance_dev;
  ctx.say(fmt::format("{}: N_L = {:.9f}, N_R = {:.9f}, D = {:.6f}", ctx.name, dn.n_left, dn.n_right, dn.d));
}

void cmd_chevron(Context& ctx, RunOutput& out) {
  const auto c = coupler_setup(ctx.cfg);
  const YAML::Node s = section(ctx.cfg, "chevron");
  check_keys(s, "chevron", {"offsets", "times", "simulate"});
  const auto offsets = grid_value(s, "offsets", Quantity::frequency, "chevron");
  const auto times = grid_value(s, "times", Quantity::time, "chevron");
  for (double t : times)
    if (t < 0.0) throw ConfigError("chevron.times: negative time");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw ConfigError("chevron.times: must be increasing");
  const bool simulate = flag_value(s, "simulate", "chevron", true);
  const auto maps = coupler::chevron_maps(c.circuit, offsets, times, simulate, ctx.g.threads);
  const auto rwa = coupler::rwa_validity(maps.g, c.circuit.omega_j - c.circuit.omega_i);

  std::vector<Column> cols{{"delta_c", "MHz"}, {"t", "us"}, {"p_closed_form", "1"}};
  if (simulate) cols.push_back({"p_simulated", "1"});
  CsvTable t("parametric exchange: excitation transferred vs modulation detuning and time", cols);
  t.add_note(fmt::format("g_eff/2pi = {} MHz, RWA ratio g/Delta = {}", brief(maps.g / kMHz), brief(rwa.ratio)));
  double dev = 0.0;
  for (std::size_t a = 0; a < offsets.size(); ++a)
    for (std::size_t k = 0; k < times.size(); ++k) {
      std::vector<double> row{offsets[a] / kMHz, times[k] / kUs, maps.closed_form[a][k]};
      if (simulate) {
        row.push_back(maps.simulated[a][k]);
        dev = std::max(dev, std::abs(maps.simulated[a][k] - maps.closed_form[a][k]));
      }
      t.add_row(row);
    }
  out.write(ctx.name + ".csv", t);
  auto& sm = out.summary();
  sm["g_eff_mhz"] = maps.g / kMHz;
  sm["bias_mhz"] = c.circuit.omega_c0 / kMHz;
  sm["mod_amp_mhz"] = c.circuit.mod_amp / kMHz;
  sm["rwa_ratio"] = rwa.ratio;
  sm["rwa_valid"] = rwa.pass;
  if (simulate) sm["max_deviation"] = dev;
  ctx.say(fmt::format("{}: g_eff/2pi = {:.4f} MHz, g/Delta = {:.4f}{}", ctx.name, maps.g / kMHz, rwa.ratio,
                      simulate ? fmt::format(", max |simulated - closed form| = {:.4f}", dev) : std::string()));
}

void cmd_tomography(Context& ctx, RunOutput& out) {
  const auto e = emission_setup(ctx.cfg);
  const auto amp = amplifier_model(ctx.cfg);
  const YAML::Node s = section(ctx.cfg, "tomography");
  check_keys(s, "tomography", {"shots", "resamples", "mle_starts", "save_shots", "reference_fidelity",
                               "reference_uncertainty", "outputs"});
  const auto shots = count_value(s, "shots", "tomography", 1'000'000);
  if (shots < 10'000) throw ConfigError("tomography.shots: need at least 10^4 shots");
  const auto resamples = count_value(s, "resamples", "tomography", 50);
  const auto starts = count_value(s, "mle_starts", "tomography", 8);
  if (starts < 1) throw ConfigError("tomography.mle_starts: need at least 1");
  const bool save = flag_value(s, "save_shots", "tomography", false);
  const auto ref_f = optional_quantity(s, "reference_fidelity", Quantity::number, "tomography");
  const auto ref_u = optional_quantity(s, "reference_uncertainty", Quantity::number, "tomography");
  const YAML::Node names = child(s, "outputs");
  check_keys(names, "tomography.outputs", {"moments", "density"});
  const std::string moments_name = text_value(names, "moments", "tomography.outputs", ctx.name + "_moments");
  const std::string density_name = text_value(names, "density", "tomography.outputs", ctx.name + "_density");
  using K = emission::InitialStateKind;
  if (e.kind != K::psi_plus && e.kind != K::psi_minus)
    throw ConfigError("emission.state: tomography reconstructs psi_plus or psi_minus emission");
  const auto target = e.kind == K::psi_plus ? tomography::Target::right : tomography::Target::left;
  const char* target_ket = target == tomography::Target::right ? "|01>" : "|10>";

  const auto rec = emission::simulate_emission(e.params, e.kind, e.times);
  const auto emitted = emission::output_mode_state(rec);
  const auto sig = tomography::sample_shots(emitted, amp, shots, ctx.seed, tomography::ShotKind::signal, false, ctx.g.threads);
  const auto ref = tomography::sample_shots(emitted, amp, shots, ctx.seed, tomography::ShotKind::noise_reference, false,
                                            ctx.g.threads);
  const auto m = tomography::estimate_moments(sig, ref, ctx.g.threads);
  tomography::MleOptions opt;
  opt.starts = static_cast<int>(starts);
  opt.seed = ctx.seed ^ 0x6d6c65;
  opt.threads = ctx.g.threads;
  const auto fit = tomography::mle_reconstruct(m, opt);
  const auto rep = tomography::fidelity_report(m, fit, target, static_cast<int>(resamples), ctx.seed + 1, ctx.g.threads);
  const auto truth = tomography::moments_of_state(emitted, m.max_order);
  const auto fitted = tomography::moments_of_state(fit.state, m.max_order);

  CsvTable mt("heterodyne moments <(a_L^dag)^w a_L^x (a_R^dag)^y a_R^z> after noise subtraction",
              {{"w", "1"}, {"x", "1"}, {"y", "1"}, {"z", "1"}, {"re", "1"}, {"im", "1"}, {"stderr", "1"},
               {"re_emitted", "1"}, {"im_emitted", "1"}, {"re_fit", "1"}, {"im_fit", "1"}});
  mt.add_note(fmt::format("{} shots, gain {}, added noise L/R {} / {}", shots, brief(amp.gain), brief(amp.added_noise_L),
                          brief(amp.added_noise_R)));
  const auto keys = tomography::moment_keys(m.max_order);
  double high_order = 0.0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& k = keys[i];
    mt.add_row({double(k.w), double(k.x), double(k.y), double(k.z), m.value[i].real(), m.value[i].imag(), m.stderr[i],
                truth.value[i].real(), truth.value[i].imag(), fitted.value[i].real(), fitted.value[i].imag()});
    if (k.order() >= 3) high_order = std::max(high_order, std::abs(m.value[i]));
  }
  CsvTable dt("reconstructed two-mode density matrix in the Fock basis (n_left, n_right), total photons <= 2",
              {{"row_n_left", "1"}, {"row_n_right", "1"}, {"col_n_left", "1"}, {"col_n_right", "1"}, {"re", "1"},
               {"im", "1"}, {"re_emitted", "1"}, {"im_emitted", "1"}});
  for (int a = 0; a < kTwoModeDim; ++a)
    for (int b = 0; b < kTwoModeDim; ++b) {
      const auto [al, ar] = two_mode_occupation(a);
      const auto [bl, br] = two_mode_occupation(b);
      dt.add_row({double(al), double(ar), double(bl), double(br), fit.state.rho(a, b).real(), fit.state.rho(a, b).imag(),
                  emitted.rho(a, b).real(), emitted.rho(a, b).imag()});
    }
  out.write(moments_name + ".csv", mt);
  out.write(density_name + ".csv", dt);
  if (save) {
    std::ostringstream a, b;
    tomography::write_shots(a, sig);
    tomography::write_shots(b, ref);
    out.write(ctx.name + "_signal.wgqs", a.str());
    out.write(ctx.name + "_reference.wgqs", b.str());
  }

  const double emitted_f = tomography::target_fidelity(emitted, target);
  auto& sm = out.summary();
  sm["target"] = target_ket;
  sm["fidelity"] = rep.fidelity;
  sm["ci95"] = {rep.ci_low, rep.ci_high};
  sm["emitted_fidelity"] = emitted_f;
  sm["chi2"] = fit.chi2;
  sm["dof"] = fit.dof;
  sm["converged"] = fit.converged;
  sm["max_abs_moment_order_3_4"] = high_order;
  if (ref_f) sm["reference_fidelity"] = *ref_f;
  ctx.say(fmt::format("{}: fidelity to {} = {:.4f} (95% CI {:.4f} .. {:.4f}); emitted state {:.4f}; chi2/dof = {:.3f}", ctx.name,
                      target_ket, rep.fidelity, rep.ci_low, rep.ci_high, emitted_f, fit.chi2 / fit.dof));
  if (ref_f)
    ctx.say(fmt::format("reference fidelity {:.3f}{}", *ref_f, ref_u ? fmt::format(" +/- {:.3f}", *ref_u) : std::string()));
}

using Command = void (*)(Context&, RunOutput&);

struct CommandInfo {
  const char* name;
  const char* help;
  const char* default_name;
  Command run;
};

const CommandInfo kCommands[] = {
    {"spectroscopy", "transmission map over emitter and probe detuning", "fig2a", cmd_spectroscopy},
    {"coupling-sweep", "transmission over net exchange and probe detuning", "fig2b", cmd_coupling_sweep},
    {"power-sweep", "resonant transmission over probe power", "fig2c", cmd_power_sweep},
    {"calibrate", "coupler exchange that cancels the net emitter exchange", "figS4", cmd_calibrate},
    {"emission", "directional emission time series", "fig3b", cmd_emission},
    {"chevron", "parametric exchange maps", "figS5c", cmd_chevron},
    {"tomography", "heterodyne tomography of the emitted photon", "fig4", cmd_tomography},
};

int run(const CommandInfo& info, const Globals& g) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg;
  try {
    cfg = RunConfig::parse(read_file(g.config), g.config);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  Context ctx{g, std::move(cfg)};
  if (const YAML::Node cmd = child(ctx.cfg.root, "command"); present(cmd) && scalar_text(cmd, "command") != info.name)
    throw ConfigError(fmt::format("config is for '{}', not '{}'", cmd.Scalar(), info.name));
  ctx.seed = resolve_seed(ctx.cfg, g.seed);
  ctx.name = run_name(ctx.cfg, info.default_name);
  RunOutput out(g.out, ctx.name);
  info.run(ctx, out);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.write_manifest(info.name, ctx.cfg.path, ctx.cfg.text, ctx.seed, g.threads, wall);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wgqed: waveguide QED experiment datasets"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", WGQED_VERSION);
  Globals g;
  app.add_option("--config", g.config, "YAML run configuration");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "random seed (overrides WGQED_SEED and the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--quiet", g.quiet, "suppress summary lines");

  const CommandInfo* chosen = nullptr;
  for (const auto& c : kCommands) app.add_subcommand(c.name, c.help)->callback([&chosen, &c] { chosen = &c; });

  try {
    app.parse(argc, argv);
    if (g.config.empty()) throw CLI::RequiredError("--config");
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return run(*chosen, g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const YAML::Exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const wgqed::Error& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  }
}
