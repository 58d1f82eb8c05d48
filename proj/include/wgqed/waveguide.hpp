#pragma once

// Two emitters side-coupled to a bidirectional waveguide: driven master
// equation in the probe frame, input-output fields, elastic-scattering
// observables and the exchange-cancellation calibration.
//
// Conventions. All rates and frequencies are angular (rad/s). The probe
// detuning used by the sweeps is delta = omega_p - omega_1 and the emitter
// detuning is Delta = omega_2 - omega_1. Emitter 1 sits at x = 0 and emitter
// 2 at propagation phase kdx. A probe of amplitude alpha (sqrt(photons/s))
// drives emitter j with epsilon_j = sqrt(gamma/2) alpha e^{+-i k x_j}
// (+ for a rightward probe) through H_d = -i sum_j (epsilon_j s_j^+ - h.c.),
// and the outputs are
//   a_R = a_R^in + sqrt(gamma/2) (s_1^- + e^{-i kdx} s_2^-)
//   a_L = a_L^in + sqrt(gamma/2) (s_1^- + e^{+i kdx} s_2^-).
// The single-emitter limit of this model reproduces the closed-form S21.

#include "wgqed/core.hpp"
#include "wgqed/lindblad.hpp"
#include "wgqed/parallel.hpp"

#include <optional>

namespace wgqed::waveguide {

inline constexpr double kHbar = 1.054571817e-34;  // J s

enum class Direction { left, right };

struct EmitterParams {
  double omega1 = kTwoPi * 4.93e9;
  double omega2 = kTwoPi * 4.93e9;
  double gamma = kTwoPi * 3.2e6;
  double gamma_phi1 = 0.0;
  double gamma_phi2 = 0.0;
  double j_c = -0.5 * kTwoPi * 3.2e6;
  double kdx = kPi / 2;

  /// Net exchange: waveguide-mediated (gamma/2) sin(kdx) plus the coupler term.
  double j_sigma() const { return 0.5 * gamma * std::sin(kdx) + j_c; }
  /// Coupler exchange that realizes a requested net exchange.
  double j_c_for(double j_sigma_target) const { return j_sigma_target - 0.5 * gamma * std::sin(kdx); }

  void validate() const {
    if (!(gamma > 0.0)) throw DimensionError("EmitterParams: gamma must be positive");
    if (gamma_phi1 < 0.0 || gamma_phi2 < 0.0) throw DimensionError("EmitterParams: negative dephasing");
    if (!(kdx > 0.0 && kdx < kPi)) throw DimensionError("EmitterParams: kdx must lie in (0, pi)");
  }
};

struct DriveSpec {
  Direction direction = Direction::right;
  double power_dbm = -160.0;
  double omega_p = kTwoPi * 4.93e9;
};

struct ScatterPoint {
  cplx s21;
  cplx s11;
  double delta = 0.0;   // omega_p - omega_1
  double Delta = 0.0;   // omega_2 - omega_1
  double j_sigma = 0.0;
  double power_dbm = 0.0;
};

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

/// <a_in> = sqrt(P / hbar omega_p)
inline double input_amplitude(double power_dbm, double omega_p) {
  if (!(omega_p > 0.0)) throw DimensionError("input_amplitude: omega_p must be positive");
  return std::sqrt(dbm_to_watts(power_dbm) / (kHbar * omega_p));
}

/// Omega_p = sqrt(2 gamma P / hbar omega_p)
inline double omega_p_from_power(double power_dbm, double gamma, double omega_p) {
  if (!(gamma > 0.0) || !(omega_p > 0.0)) throw DimensionError("omega_p_from_power: non-positive rate");
  return std::sqrt(2.0 * gamma * dbm_to_watts(power_dbm) / (kHbar * omega_p));
}

/// Closed-form transmission of one emitter; `detuning` is omega_q - omega_p.
inline cplx s21_single_analytic(double detuning, double rabi, double gamma, double gamma_phi) {
  if (!(gamma > 0.0)) throw DimensionError("s21_single_analytic: gamma must be positive");
  const double g2 = 0.5 * gamma + gamma_phi;
  const double x = detuning / g2;
  return 1.0 - gamma * (1.0 - kI * x) / (2.0 * g2 * (1.0 + x * x + rabi * rabi / (gamma * g2)));
}

/// Single emitter driven by a rightward probe; used to check the closed form.
inline LindbladModel build_single_emitter(double omega_q, double gamma, double gamma_phi, const DriveSpec& drive) {
  const RegisterSpace space = RegisterSpace::qubits(1);
  const double eps = std::sqrt(0.5 * gamma) * input_amplitude(drive.power_dbm, drive.omega_p);
  LindbladModel m;
  m.space = space;
  m.hamiltonian = (omega_q - drive.omega_p) * sigma_plus() * sigma_minus() -
                  kI * eps * (sigma_plus() - sigma_minus());
  m.collapse_ops.push_back(std::sqrt(gamma) * sigma_minus());
  if (gamma_phi > 0.0) m.collapse_ops.push_back(std::sqrt(0.5 * gamma_phi) * sigma_z());
  return m;
}

inline ScatterPoint s21_single_numeric(double omega_q, double gamma, double gamma_phi, const DriveSpec& drive) {
  const auto model = build_single_emitter(omega_q, gamma, gamma_phi, drive);
  const auto rho = steady_state(build_liouvillian(model));
  const double alpha = input_amplitude(drive.power_dbm, drive.omega_p);
  const cplx sm = expectation(rho.mat, sigma_minus());
  ScatterPoint p;
  p.s21 = 1.0 + std::sqrt(0.5 * gamma) * sm / alpha;
  p.s11 = std::sqrt(0.5 * gamma) * sm / alpha;
  p.delta = drive.omega_p - omega_q;
  p.power_dbm = drive.power_dbm;
  return p;
}

/// Embedded two-emitter operators on the register [2, 2].
struct TwoEmitterOps {
  RegisterSpace space = RegisterSpace::qubits(2);
  CMatrix sm1 = embed(sigma_minus(), 0, space).mat;
  CMatrix sm2 = embed(sigma_minus(), 1, space).mat;
  CMatrix sz1 = embed(sigma_z(), 0, space).mat;
  CMatrix sz2 = embed(sigma_z(), 1, space).mat;
};

/// Zero below 1e-12 so that kdx = pi/2 reproduces the uncorrelated model exactly.
inline double correlated_decay_factor(double kdx) {
  const double c = std::cos(kdx);
  return std::abs(c) < 1e-12 ? 0.0 : c;
}

/// Output-mode phase e^{i kdx}, snapped to i at the quarter-wave point.
inline cplx propagation_phase(double kdx) {
  return {correlated_decay_factor(kdx), std::sin(kdx)};
}

/// Probe-frame two-emitter model. The exchange term uses the net J_Sigma; for
/// kdx != pi/2 correlated decay gamma cos(kdx) is added.
inline LindbladModel build_driven_two_qubit(const EmitterParams& p, const DriveSpec& drive) {
  p.validate();
  const TwoEmitterOps ops;
  const CMatrix sp1 = ops.sm1.adjoint(), sp2 = ops.sm2.adjoint();
  const double alpha = input_amplitude(drive.power_dbm, drive.omega_p);
  const cplx phase2 = drive.direction == Direction::right ? propagation_phase(p.kdx)
                                                          : std::conj(propagation_phase(p.kdx));
  const cplx eps1 = std::sqrt(0.5 * p.gamma) * alpha;
  const cplx eps2 = eps1 * phase2;

  LindbladModel m;
  m.space = ops.space;
  m.hamiltonian = (p.omega1 - drive.omega_p) * sp1 * ops.sm1 + (p.omega2 - drive.omega_p) * sp2 * ops.sm2;
  if (alpha > 0.0) {
    m.hamiltonian += -kI * (eps1 * sp1 - std::conj(eps1) * ops.sm1);
    m.hamiltonian += -kI * (eps2 * sp2 - std::conj(eps2) * ops.sm2);
  }
  const double js = p.j_sigma();
  if (js != 0.0) m.hamiltonian += js * (sp1 * ops.sm2 + sp2 * ops.sm1);
  m.collapse_ops.push_back(std::sqrt(p.gamma) * ops.sm1);
  m.collapse_ops.push_back(std::sqrt(p.gamma) * ops.sm2);
  if (p.gamma_phi1 > 0.0) m.collapse_ops.push_back(std::sqrt(0.5 * p.gamma_phi1) * ops.sz1);
  if (p.gamma_phi2 > 0.0) m.collapse_ops.push_back(std::sqrt(0.5 * p.gamma_phi2) * ops.sz2);
  const double corr = correlated_decay_factor(p.kdx);
  if (corr != 0.0) m.cross_dissipators.push_back({ops.sm1, ops.sm2, p.gamma * corr});
  return m;
}

struct OutputFields {
  cplx a_left;
  cplx a_right;
  double flux_left = 0.0;
  double flux_right = 0.0;
};

/// Input amplitudes (a_L^in, a_R^in) at x = 0 for a drive, or zero.
inline std::pair<cplx, cplx> input_fields(const std::optional<DriveSpec>& drive) {
  if (!drive) return {0.0, 0.0};
  const double alpha = input_amplitude(drive->power_dbm, drive->omega_p);
  return drive->direction == Direction::right ? std::pair<cplx, cplx>{0.0, alpha}
                                              : std::pair<cplx, cplx>{alpha, 0.0};
}

/// Fields and normally ordered fluxes from a two-emitter state.
inline OutputFields output_fields(const DensityMatrix& state, const EmitterParams& p,
                                  const std::optional<DriveSpec>& drive = std::nullopt) {
  if (state.space.total_dim() != 4) throw DimensionError("output_fields: expects a two-qubit state");
  const TwoEmitterOps ops;
  const cplx ph = propagation_phase(p.kdx);
  const double k = std::sqrt(0.5 * p.gamma);
  const CMatrix al = k * (ops.sm1 + ph * ops.sm2);
  const CMatrix ar = k * (ops.sm1 + std::conj(ph) * ops.sm2);
  const auto [in_l, in_r] = input_fields(drive);
  OutputFields f;
  const cplx el = expectation(state.mat, al), er = expectation(state.mat, ar);
  f.a_left = in_l + el;
  f.a_right = in_r + er;
  f.flux_left = std::norm(in_l) + 2.0 * std::real(std::conj(in_l) * el) +
                std::real(expectation(state.mat, CMatrix(al.adjoint() * al)));
  f.flux_right = std::norm(in_r) + 2.0 * std::real(std::conj(in_r) * er) +
                 std::real(expectation(state.mat, CMatrix(ar.adjoint() * ar)));
  return f;
}

/// Steady-state transmission (forward output / input) and reflection.
inline ScatterPoint s21_two_qubit(const EmitterParams& p, const DriveSpec& drive) {
  if (!std::isfinite(drive.power_dbm)) throw DimensionError("s21_two_qubit: drive power must be finite");
  const auto rho = steady_state(build_liouvillian(build_driven_two_qubit(p, drive)));
  const auto f = output_fields(rho, p, drive);
  const double alpha = input_amplitude(drive.power_dbm, drive.omega_p);
  ScatterPoint s;
  if (drive.direction == Direction::right) {
    s.s21 = f.a_right / alpha;
    s.s11 = f.a_left / alpha;
  } else {
    s.s21 = f.a_left / alpha;
    s.s11 = f.a_right / alpha;
  }
  s.delta = drive.omega_p - p.omega1;
  s.Delta = p.omega2 - p.omega1;
  s.j_sigma = p.j_sigma();
  s.power_dbm = drive.power_dbm;
  return s;
}

/// Grid result; values are stored row-major over (outer, inner).
struct ScatterGrid {
  std::vector<double> outer;
  std::vector<double> inner;
  std::vector<ScatterPoint> points;
  const ScatterPoint& at(std::size_t i, std::size_t j) const { return points.at(i * inner.size() + j); }
};

/// |S21| over emitter detuning Delta (outer) and probe detuning delta (inner).
inline ScatterGrid sweep_spectroscopy(const EmitterParams& p, const DriveSpec& drive,
                                      const std::vector<double>& Delta_grid,
                                      const std::vector<double>& delta_grid,
                                      std::size_t threads = 1) {
  if (Delta_grid.empty() || delta_grid.empty()) throw DimensionError("sweep_spectroscopy: empty grid");
  ScatterGrid g{Delta_grid, delta_grid, std::vector<ScatterPoint>(Delta_grid.size() * delta_grid.size())};
  parallel_for(g.points.size(), threads, [&](std::size_t k) {
    EmitterParams q = p;
    q.omega2 = p.omega1 + Delta_grid[k / delta_grid.size()];
    DriveSpec d = drive;
    d.omega_p = p.omega1 + delta_grid[k % delta_grid.size()];
    g.points[k] = s21_two_qubit(q, d);
  });
  return g;
}

/// |S21| over net exchange J_Sigma (outer) and probe detuning (inner), with the
/// emitters held resonant at omega_1.
inline ScatterGrid sweep_coupling(const EmitterParams& p, const DriveSpec& drive,
                                  const std::vector<double>& jsigma_grid,
                                  const std::vector<double>& delta_grid, std::size_t threads = 1) {
  if (jsigma_grid.empty() || delta_grid.empty()) throw DimensionError("sweep_coupling: empty grid");
  ScatterGrid g{jsigma_grid, delta_grid, std::vector<ScatterPoint>(jsigma_grid.size() * delta_grid.size())};
  parallel_for(g.points.size(), threads, [&](std::size_t k) {
    EmitterParams q = p;
    q.omega2 = p.omega1;
    q.j_c = p.j_c_for(jsigma_grid[k / delta_grid.size()]);
    DriveSpec d = drive;
    d.omega_p = p.omega1 + delta_grid[k % delta_grid.size()];
    g.points[k] = s21_two_qubit(q, d);
  });
  return g;
}

/// Resonant transmission versus probe power; Delta and delta are forced to 0.
inline std::vector<ScatterPoint> sweep_power(const EmitterParams& p, const DriveSpec& drive,
                                             const std::vector<double>& power_dbm_grid,
                                             std::size_t threads = 1) {
  if (power_dbm_grid.empty()) throw DimensionError("sweep_power: empty grid");
  std::vector<ScatterPoint> out(power_dbm_grid.size());
  parallel_for(out.size(), threads, [&](std::size_t k) {
    EmitterParams q = p;
    q.omega2 = p.omega1;
    DriveSpec d = drive;
    d.omega_p = p.omega1;
    d.power_dbm = power_dbm_grid[k];
    out[k] = s21_two_qubit(q, d);
  });
  return out;
}

/// n equally spaced points from a to b inclusive.
inline std::vector<double> linspace(double a, double b, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {a};
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1);
  return v;
}

/// Golden-section search for the minimum of f on [a, b].
template <class F>
double golden_minimize(F&& f, double a, double b, double xtol, int max_iter = 200) {
  constexpr double r = 0.6180339887498949;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && std::abs(b - a) > xtol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Local minima of |S21|(delta) at fixed parameters: coarse scan followed by
/// golden-section refinement of every interior grid minimum.
inline std::vector<double> transmission_dips(const EmitterParams& p, const DriveSpec& drive, double delta_lo,
                                             double delta_hi, std::size_t coarse_points = 401) {
  auto f = [&](double delta) {
    DriveSpec d = drive;
    d.omega_p = p.omega1 + delta;
    return std::abs(s21_two_qubit(p, d).s21);
  };
  const auto grid = linspace(delta_lo, delta_hi, coarse_points);
  std::vector<double> vals(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) vals[k] = f(grid[k]);
  std::vector<double> dips;
  const double step = grid.size() > 1 ? grid[1] - grid[0] : 0.0;
  for (std::size_t k = 1; k + 1 < grid.size(); ++k)
    if (vals[k] < vals[k - 1] && vals[k] <= vals[k + 1])
      dips.push_back(golden_minimize(f, grid[k] - step, grid[k] + step, 1e-9 * std::abs(p.gamma)));
  return dips;
}

struct CalibrationResult {
  double j_c = 0.0;
  double j_sigma = 0.0;
  double s21_abs = 0.0;
  std::vector<std::pair<double, double>> scan;  // (j_c, |S21|)
};

/// Maximizes |S21| at Delta = delta = 0 over the coupler exchange j_c in
/// [j_lo, j_hi]. The objective is scanned first and rejected unless it has a
/// single interior or boundary maximum.
inline CalibrationResult calibrate_jsigma(const EmitterParams& p, const DriveSpec& drive, double j_lo,
                                          double j_hi, std::size_t scan_points = 41, std::size_t threads = 1) {
  if (!(j_hi > j_lo)) throw DimensionError("calibrate_jsigma: empty search interval");
  EmitterParams q = p;
  q.omega2 = p.omega1;
  DriveSpec d = drive;
  d.omega_p = p.omega1;
  auto objective = [&](double jc) {
    EmitterParams r = q;
    r.j_c = jc;
    return std::abs(s21_two_qubit(r, d).s21);
  };
  CalibrationResult res;
  const auto grid = linspace(j_lo, j_hi, scan_points);
  res.scan.resize(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t k) { res.scan[k] = {grid[k], objective(grid[k])}; });

  // a rise after a fall means more than one maximum; round-off plateaus are ignored
  const double flat = 1e-12;
  std::size_t best = 0;
  bool falling = false;
  for (std::size_t k = 1; k < res.scan.size(); ++k) {
    const double diff = res.scan[k].second - res.scan[k - 1].second;
    if (diff > flat && falling)
      throw NumericalError("calibrate_jsigma: objective is not unimodal on the search interval");
    if (diff < -flat) falling = true;
    if (res.scan[k].second > res.scan[best].second) best = k;
  }
  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  res.j_c = golden_minimize([&](double jc) { return -objective(jc); }, lo, hi, 1e-9 * p.gamma);
  q.j_c = res.j_c;
  res.j_sigma = q.j_sigma();
  res.s21_abs = objective(res.j_c);
  return res;
}

}  // namespace wgqed::waveguide
