#pragma once

// Four-qubit directional emission: data qubits Q3, Q4 hand their state to
// the waveguide-coupled emitters Q1, Q2 through parametric exchange while the
// emitters radiate. Register order is Q1, Q2, Q3, Q4 (sites 0..3).

#include "wgqed/core.hpp"
#include "wgqed/lindblad.hpp"
#include "wgqed/twomode.hpp"
#include "wgqed/waveguide.hpp"

#include <functional>
#include <limits>
#include <optional>

namespace wgqed::emission {

struct FourQubitParams {
  double gamma = kTwoPi * 3.2e6;
  double g_eff13 = kTwoPi * 1.28e6;
  double g_eff24 = kTwoPi * 1.28e6;
  // optional envelopes multiplying g_eff; an empty function means constant
  std::function<double(double)> envelope13;
  std::function<double(double)> envelope24;
  double gamma_phi1 = 0.0;
  double gamma_phi2 = 0.0;
  double data_t1 = std::numeric_limits<double>::infinity();
  double data_tphi = std::numeric_limits<double>::infinity();
  double kdx = kPi / 2;
  double j_sigma = 0.0;  // residual emitter exchange after calibration

  bool time_dependent() const { return static_cast<bool>(envelope13) || static_cast<bool>(envelope24); }
  /// Only the two cited collapse channels and the exchange Hamiltonian.
  bool minimal_model() const {
    return gamma_phi1 == 0.0 && gamma_phi2 == 0.0 && std::isinf(data_t1) && std::isinf(data_tphi) &&
           j_sigma == 0.0 && waveguide::correlated_decay_factor(kdx) == 0.0 && !time_dependent();
  }
  void validate() const {
    if (!(gamma > 0.0)) throw DimensionError("FourQubitParams: gamma must be positive");
    if (!std::isfinite(g_eff13) || !std::isfinite(g_eff24)) throw DimensionError("FourQubitParams: g_eff not finite");
    if (gamma_phi1 < 0.0 || gamma_phi2 < 0.0) throw DimensionError("FourQubitParams: negative dephasing");
    if (!(data_t1 > 0.0) || !(data_tphi > 0.0)) throw DimensionError("FourQubitParams: coherence times must be positive");
    if (!(kdx > 0.0 && kdx < kPi)) throw DimensionError("FourQubitParams: kdx must lie in (0, pi)");
  }
};

enum class InitialStateKind { psi_plus, psi_minus, half_plus, half_minus, custom };

inline const RegisterSpace& four_qubits() {
  static const RegisterSpace s = RegisterSpace::qubits(4);
  return s;
}

/// Identity on |gg>, |ee>; mixes |eg>, |ge> with amplitude i/sqrt2.
inline CMatrix sqrt_iswap() {
  const double r = 1.0 / std::sqrt(2.0);
  CMatrix u = CMatrix::Zero(4, 4);
  u(0, 0) = 1.0;
  u(3, 3) = 1.0;
  u(1, 1) = r;
  u(2, 2) = r;
  u(1, 2) = kI * r;
  u(2, 1) = kI * r;
  return u;
}

/// exp(-i theta/2 (cos(phi) sx + sin(phi) sy))
inline CMatrix rotation(double theta, double phi) {
  const CMatrix n = std::cos(phi) * sigma_x() + std::sin(phi) * sigma_y();
  return std::cos(theta / 2) * identity(2) - kI * std::sin(theta / 2) * n;
}

/// Global phase fixed so the first amplitude above 1e-12 is real positive;
/// the all-ground amplitude comes first in index order.
inline CVector normalize_phase(CVector v) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (std::abs(v(k)) > 1e-12) {
      v *= std::conj(v(k)) / std::abs(v(k));
      break;
    }
  }
  return v;
}

/// Data-qubit pair state (Q3 Q4) built from pulses and the entangling gate.
inline CVector prepare_data_qubits(InitialStateKind kind, const CVector& custom = {}) {
  const CMatrix u = sqrt_iswap();
  const CVector gg = CVector::Unit(4, 0);
  const CMatrix id = identity(2);
  CVector v;
  switch (kind) {
    case InitialStateKind::psi_plus:
      v = u * kron(rotation(kPi, 0.0), id) * gg;
      break;
    case InitialStateKind::psi_minus:
      v = u * kron(id, rotation(kPi, 0.0)) * gg;
      break;
    case InitialStateKind::half_plus:
      v = u * kron(rotation(kPi / 2, -kPi / 2), id) * gg;
      break;
    case InitialStateKind::half_minus:
      v = u * kron(id, rotation(kPi / 2, 0.0)) * gg;
      break;
    case InitialStateKind::custom:
      if (custom.size() != 4) throw DimensionError("prepare_state: custom state must have 4 amplitudes");
      if (std::abs(custom.norm() - 1.0) > 1e-10) throw DimensionError("prepare_state: custom state not normalized");
      v = custom;
      break;
  }
  return normalize_phase(v);
}

/// Full register state with both emitters in the ground state.
inline StateVector prepare_state(InitialStateKind kind, const CVector& custom = {}) {
  const CVector data = prepare_data_qubits(kind, custom);
  CVector emitters = CVector::Unit(4, 0);
  return {four_qubits(), kron(emitters, data)};
}

/// The ideal single-excitation target states (|eg> +- i|ge>)/sqrt2.
inline CVector psi_state(int sign) {
  CVector v = CVector::Zero(4);
  v(2) = 1.0 / std::sqrt(2.0);
  v(1) = static_cast<double>(sign) * kI / std::sqrt(2.0);
  return v;
}

struct EmissionOps {
  CMatrix sm[4];
  CMatrix sz[4];
  EmissionOps() {
    for (std::size_t q = 0; q < 4; ++q) {
      sm[q] = embed(sigma_minus(), q, four_qubits()).mat;
      sz[q] = embed(sigma_z(), q, four_qubits()).mat;
    }
  }
};

inline const EmissionOps& emission_ops() {
  static const EmissionOps ops;
  return ops;
}

/// Exchange g (s_e^+ s_d^- + h.c.) between emitter e and data qubit d.
inline CMatrix exchange(std::size_t e, std::size_t d) {
  const auto& o = emission_ops();
  return o.sm[e].adjoint() * o.sm[d] + o.sm[d].adjoint() * o.sm[e];
}

namespace detail {

inline void add_local_channels(LindbladModel& m, const FourQubitParams& p, std::size_t emitter, std::size_t data) {
  const auto& o = emission_ops();
  const double gphi = emitter == 0 ? p.gamma_phi1 : p.gamma_phi2;
  m.collapse_ops.push_back(std::sqrt(p.gamma) * o.sm[emitter]);
  if (gphi > 0.0) m.collapse_ops.push_back(std::sqrt(0.5 * gphi) * o.sz[emitter]);
  if (std::isfinite(p.data_t1)) m.collapse_ops.push_back(std::sqrt(1.0 / p.data_t1) * o.sm[data]);
  if (std::isfinite(p.data_tphi)) m.collapse_ops.push_back(std::sqrt(0.5 / p.data_tphi) * o.sz[data]);
}

}  // namespace detail

inline LindbladModel build_emission_model(const FourQubitParams& p) {
  p.validate();
  const auto& o = emission_ops();
  LindbladModel m;
  m.space = four_qubits();
  const CMatrix x13 = exchange(0, 2), x24 = exchange(1, 3);
  CMatrix h_static = CMatrix::Zero(16, 16);
  if (p.j_sigma != 0.0) h_static += p.j_sigma * exchange(0, 1);
  if (p.time_dependent()) {
    const auto e13 = p.envelope13, e24 = p.envelope24;
    const double g13 = p.g_eff13, g24 = p.g_eff24;
    m.hamiltonian_at = [=](double t) -> CMatrix {
      return h_static + g13 * (e13 ? e13(t) : 1.0) * x13 + g24 * (e24 ? e24(t) : 1.0) * x24;
    };
  } else {
    m.hamiltonian = h_static + p.g_eff13 * x13 + p.g_eff24 * x24;
  }
  detail::add_local_channels(m, p, 0, 2);
  detail::add_local_channels(m, p, 1, 3);
  const double corr = waveguide::correlated_decay_factor(p.kdx);
  if (corr != 0.0) m.cross_dissipators.push_back({o.sm[0], o.sm[1], p.gamma * corr});
  return m;
}

/// Generators of the Q1-Q3 and Q2-Q4 subsystems, each embedded in the full
/// register. Requires a model without emitter-emitter terms.
inline std::pair<Liouvillian, Liouvillian> build_emission_split(const FourQubitParams& p) {
  p.validate();
  if (p.time_dependent()) throw DimensionError("build_emission_split: static envelopes required");
  if (p.j_sigma != 0.0 || waveguide::correlated_decay_factor(p.kdx) != 0.0)
    throw DimensionError("build_emission_split: emitter-emitter terms couple the two subsystems");
  LindbladModel a, b;
  a.space = b.space = four_qubits();
  a.hamiltonian = p.g_eff13 * exchange(0, 2);
  b.hamiltonian = p.g_eff24 * exchange(1, 3);
  detail::add_local_channels(a, p, 0, 2);
  detail::add_local_channels(b, p, 1, 3);
  return {build_liouvillian(a), build_liouvillian(b)};
}

// sinh(z)/z, series near the origin
inline cplx sinhc(cplx z) {
  if (std::abs(z) < 1e-4) return 1.0 + z * z / 6.0 + z * z * z * z / 120.0;
  return std::sinh(z) / z;
}

/// Excited population of a data qubit that starts with population p0 and
/// exchanges at g with a radiating emitter. Gamma = 2 sqrt((gamma/4)^2 - g^2)
/// is imaginary once g > gamma/4.
inline double analytic_population(double t, double gamma, double g_eff, double p0 = 0.25) {
  if (t < 0.0) throw DimensionError("analytic_population: negative time");
  const cplx big_gamma = 2.0 * std::sqrt(cplx(gamma * gamma / 16.0 - g_eff * g_eff, 0.0));
  const cplx x = 0.5 * big_gamma * t;
  const cplx amp = std::cosh(x) + 0.25 * gamma * t * sinhc(x);
  return p0 * std::exp(-0.5 * gamma * t) * std::norm(amp);
}

/// Emitted field <a_R> (half_plus) or <a_L> (half_minus) in sqrt(1/s):
///   -i (g sqrt(gamma) / Gamma) e^{-gamma t/4} sinh(Gamma t/2)
/// The -i is the phase acquired in the exchange and is kept so the value can
/// be compared with simulated fields directly.
inline std::pair<cplx, cplx> analytic_wavepacket(double t, double gamma, double g_eff, int sign) {
  if (t < 0.0) throw DimensionError("analytic_wavepacket: negative time");
  if (sign != 1 && sign != -1) throw DimensionError("analytic_wavepacket: sign must be +1 or -1");
  const cplx big_gamma = 2.0 * std::sqrt(cplx(gamma * gamma / 16.0 - g_eff * g_eff, 0.0));
  const cplx x = 0.5 * big_gamma * t;
  const cplx a = -kI * g_eff * std::sqrt(gamma) * 0.5 * t * std::exp(-0.25 * gamma * t) * sinhc(x);
  return sign > 0 ? std::pair<cplx, cplx>{0.0, a} : std::pair<cplx, cplx>{a, 0.0};
}

/// Unit-norm temporal mode for the matched filter, sampled on `times`.
inline std::vector<cplx> matched_filter(const std::vector<double>& times, double gamma, double g_eff);

struct EmissionRecord {
  std::vector<double> times;
  std::vector<cplx> a_left, a_right;
  std::vector<double> flux_left, flux_right;
  std::vector<cplx> cross_flux;  // <a_L^dag a_R>
  std::array<std::vector<double>, 4> population;  // Q1..Q4 excited-state populations
  StateVector initial;
  double gamma = 0.0;
  double g_eff = 0.0;
};

/// Composite Simpson integral on a uniform grid (3/8 rule closes an odd
/// interval count); trapezoid on non-uniform grids.
template <class T>
T integrate(const std::vector<double>& t, const std::vector<T>& y) {
  if (t.size() != y.size()) throw DimensionError("integrate: length mismatch");
  const std::size_t n = t.size();
  if (n < 2) return T{};
  const double h = (t.back() - t.front()) / static_cast<double>(n - 1);
  bool uniform = true;
  for (std::size_t k = 1; k < n && uniform; ++k) uniform = std::abs((t[k] - t[k - 1]) - h) <= 1e-9 * std::abs(h);
  if (!uniform || n < 4) {
    T s{};
    for (std::size_t k = 1; k < n; ++k) s += 0.5 * (t[k] - t[k - 1]) * (y[k] + y[k - 1]);
    return s;
  }
  const std::size_t intervals = n - 1;
  const std::size_t simpson_end = intervals % 2 == 0 ? intervals : intervals - 3;
  T s{};
  for (std::size_t k = 0; k + 2 <= simpson_end; k += 2) s += (h / 3.0) * (y[k] + 4.0 * y[k + 1] + y[k + 2]);
  if (simpson_end != intervals) {
    const std::size_t k = simpson_end;
    s += (3.0 * h / 8.0) * (y[k] + 3.0 * y[k + 1] + 3.0 * y[k + 2] + y[k + 3]);
  }
  return s;
}

inline std::vector<cplx> matched_filter(const std::vector<double>& times, double gamma, double g_eff) {
  std::vector<cplx> f(times.size());
  std::vector<double> w(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    f[k] = analytic_wavepacket(times[k], gamma, g_eff, +1).second;
    w[k] = std::norm(f[k]);
  }
  const double norm = std::sqrt(integrate(times, w));
  if (!(norm > 0.0)) throw NumericalError("matched_filter: mode has zero norm on the grid");
  for (auto& v : f) v /= norm;
  return f;
}

/// Uniform grid from 0 to t_end; the default spans 2.5 us in 2001 points.
inline std::vector<double> default_grid(double t_end = 2.5e-6, std::size_t points = 2001) {
  return waveguide::linspace(0.0, t_end, points);
}

inline EmissionRecord simulate_emission(const FourQubitParams& p, InitialStateKind kind,
                                        const std::vector<double>& times, const CVector& custom = {},
                                        const OdeOptions& ode = {}) {
  if (times.size() < 2) throw DimensionError("simulate_emission: grid needs at least two points");
  if (times.back() - times.front() < 5.0 / p.gamma)
    throw DimensionError("simulate_emission: grid must span at least 5 emitter lifetimes");
  const auto model = build_emission_model(p);
  const StateVector psi0 = prepare_state(kind, custom);
  const DensityMatrix rho0 = pure_density(psi0);
  const Trajectory traj = model.time_dependent() ? evolve_ode(model, rho0, times, ode)
                                                 : evolve_expm_grid(build_liouvillian(model), rho0, times);

  const auto& o = emission_ops();
  const cplx ph = waveguide::propagation_phase(p.kdx);
  const double k = std::sqrt(0.5 * p.gamma);
  const CMatrix al = k * (o.sm[0] + ph * o.sm[1]);
  const CMatrix ar = k * (o.sm[0] + std::conj(ph) * o.sm[1]);
  const CMatrix nl = al.adjoint() * al, nr = ar.adjoint() * ar, lr = al.adjoint() * ar;

  EmissionRecord r;
  r.times = times;
  r.initial = psi0;
  r.gamma = p.gamma;
  r.g_eff = p.g_eff13;
  const std::size_t n = times.size();
  r.a_left.resize(n);
  r.a_right.resize(n);
  r.flux_left.resize(n);
  r.flux_right.resize(n);
  r.cross_flux.resize(n);
  for (auto& v : r.population) v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CMatrix& rho = traj.states[i].mat;
    r.a_left[i] = expectation(rho, al);
    r.a_right[i] = expectation(rho, ar);
    r.flux_left[i] = std::real(expectation(rho, nl));
    r.flux_right[i] = std::real(expectation(rho, nr));
    r.cross_flux[i] = expectation(rho, lr);
    for (std::size_t q = 0; q < 4; ++q)
      r.population[q][i] = std::real(expectation(rho, CMatrix(o.sm[q].adjoint() * o.sm[q])));
  }
  return r;
}

struct Directionality {
  double n_left = 0.0;
  double n_right = 0.0;
  double d = 0.0;
};

inline Directionality directionality(const EmissionRecord& r) {
  Directionality out;
  out.n_left = integrate(r.times, r.flux_left);
  out.n_right = integrate(r.times, r.flux_right);
  const double total = out.n_left + out.n_right;
  if (!(std::abs(total) > 0.0)) throw NumericalError("directionality: no emitted photons");
  out.d = (out.n_right - out.n_left) / total;
  return out;
}

/// Emitted photons plus the excitation still held in the qubits, per sample.
inline std::vector<double> excitation_balance(const EmissionRecord& r) {
  const std::size_t n = r.times.size();
  std::vector<double> out(n);
  std::vector<double> t, fl;
  for (std::size_t i = 0; i < n; ++i) {
    t.push_back(r.times[i]);
    fl.push_back(r.flux_left[i] + r.flux_right[i]);
    double q = 0.0;
    for (const auto& pop : r.population) q += pop[i];
    out[i] = q + (i == 0 ? 0.0 : integrate(t, fl));
  }
  return out;
}

/// Largest number of excitations with non-negligible amplitude.
inline int max_excitation(const StateVector& psi) {
  int best = 0;
  for (Eigen::Index k = 0; k < psi.amp.size(); ++k) {
    if (std::abs(psi.amp(k)) <= 1e-12) continue;
    best = std::max(best, static_cast<int>(std::popcount(static_cast<unsigned>(k))));
  }
  return best;
}

/// Two-mode photonic state of the radiated field. Populations are the flux
/// integrals, vacuum coherences the matched-filter overlaps of the fields and
/// the L-R coherence the integrated equal-time cross flux. The construction
/// is exact for inputs with at most one excitation.
inline TwoModeState output_mode_state(const EmissionRecord& r) {
  if (max_excitation(r.initial) > 1)
    throw DimensionError("output_mode_state: initial state carries more than one excitation");
  const auto f = matched_filter(r.times, r.gamma, r.g_eff);
  std::vector<cplx> ol(r.times.size()), orr(r.times.size());
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    ol[i] = std::conj(f[i]) * r.a_left[i];
    orr[i] = std::conj(f[i]) * r.a_right[i];
  }
  const Directionality dn = directionality(r);
  const cplx c_r = integrate(r.times, orr);
  const cplx c_l = integrate(r.times, ol);
  const cplx c_lr = integrate(r.times, r.cross_flux);  // <a_L^dag a_R> = rho(01, 10)

  const int i00 = two_mode_index(0, 0), i01 = two_mode_index(0, 1), i10 = two_mode_index(1, 0);
  CMatrix rho = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
  rho(i01, i01) = dn.n_right;
  rho(i10, i10) = dn.n_left;
  rho(i00, i00) = 1.0 - dn.n_right - dn.n_left;
  rho(i01, i00) = c_r;
  rho(i00, i01) = std::conj(c_r);
  rho(i10, i00) = c_l;
  rho(i00, i10) = std::conj(c_l);
  rho(i01, i10) = c_lr;
  rho(i10, i01) = std::conj(c_lr);
  return {psd_project(rho)};
}

}  // namespace wgqed::emission
