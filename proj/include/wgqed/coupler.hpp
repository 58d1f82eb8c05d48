#pragma once

// Tunable-coupler physics: static qubit-qubit exchange through a
// far-detuned coupler, the parametric rate from modulating the coupler
// frequency, and chevron population-exchange maps.

#include "wgqed/core.hpp"
#include "wgqed/lindblad.hpp"
#include "wgqed/parallel.hpp"

namespace wgqed::coupler {

struct CouplerCircuit {
  double c_i = 65e-15;
  double c_j = 65e-15;
  double c_c = 100e-15;
  double c_ic = 10e-15;
  double c_jc = 10e-15;
  double c_ij = 0.2e-15;
  double omega_i = kTwoPi * 4.80e9;
  double omega_j = kTwoPi * 4.85e9;
  double omega_c0 = kTwoPi * 8.27e9;
  double mod_amp = 0.0;   // A: coupler frequency excursion
  double mod_freq = 0.0;  // modulation angular frequency

  void validate() const {
    for (double c : {c_i, c_j, c_c, c_ic, c_jc, c_ij})
      if (!(c > 0.0)) throw DimensionError("CouplerCircuit: capacitances must be positive");
    if (!(omega_i > 0.0) || !(omega_j > 0.0) || !(omega_c0 > 0.0))
      throw DimensionError("CouplerCircuit: frequencies must be positive");
  }
};

struct ReducedCapacitances {
  double c_tilde = 0.0;     // qubit-coupler ratio
  double c_tilde_ij = 0.0;  // direct plus coupler-mediated ratio
};

/// Dimensionless capacitance ratios for identical qubits.
inline ReducedCapacitances reduced_capacitances(const CouplerCircuit& c) {
  c.validate();
  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); };
  if (!same(c.c_i, c.c_j) || !same(c.c_ic, c.c_jc))
    throw DimensionError("reduced_capacitances: qubits must have equal self and coupler capacitances");
  ReducedCapacitances r;
  r.c_tilde = c.c_ic / std::sqrt(c.c_i * c.c_c);
  r.c_tilde_ij = c.c_ij / std::sqrt(c.c_i * c.c_j) + c.c_ic * c.c_jc / std::sqrt(c.c_i * c.c_j * c.c_c * c.c_c);
  return r;
}

/// delta = 2 (1/(w_i - w_c) + 1/(w_j - w_c))^-1
inline double effective_detuning(double omega_i, double omega_j, double omega_c) {
  const double di = omega_i - omega_c, dj = omega_j - omega_c;
  if (di == 0.0 || dj == 0.0) throw DimensionError("effective_detuning: coupler resonant with a qubit");
  const double inv = 1.0 / di + 1.0 / dj;
  if (inv == 0.0) throw DimensionError("effective_detuning: coupler midway between the qubits");
  return 2.0 / inv;
}

/// sqrt(w_i w_j) (C~^2 w_c / (4 delta) + C~_ij / 2)
inline double static_coupling(double c_tilde, double c_tilde_ij, double omega_i, double omega_j, double omega_c) {
  const double delta = effective_detuning(omega_i, omega_j, omega_c);
  return std::sqrt(omega_i * omega_j) * (c_tilde * c_tilde * omega_c / (4.0 * delta) + 0.5 * c_tilde_ij);
}

/// Coupler frequency in (lo, hi) where the static coupling vanishes, by
/// bisection. The bracket must lie on one side of both qubits.
inline double zero_coupling_frequency(double c_tilde, double c_tilde_ij, double omega_i, double omega_j, double lo,
                                      double hi) {
  auto f = [&](double wc) { return static_coupling(c_tilde, c_tilde_ij, omega_i, omega_j, wc); };
  double flo = f(lo), fhi = f(hi);
  if (!(flo * fhi < 0.0)) throw NumericalError("zero_coupling_frequency: bracket does not straddle a zero");
  for (int it = 0; it < 200 && (hi - lo) > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// A C~^2 sqrt(w_i w_j) / (8 delta)
inline double g_eff(double mod_amp, double c_tilde, double omega_i, double omega_j, double delta) {
  if (delta == 0.0) throw DimensionError("g_eff: zero coupler detuning");
  return mod_amp * c_tilde * c_tilde * std::sqrt(omega_i * omega_j) / (8.0 * delta);
}

/// The small-modulation expansion behind g_eff needs |A| << |delta|; this
/// flags amplitudes above a tenth of the detuning.
inline bool modulation_weak(double mod_amp, double delta) { return std::abs(mod_amp) < 0.1 * std::abs(delta); }

/// Modulation amplitude giving a target parametric rate.
inline double mod_amp_for(double target_g, double c_tilde, double omega_i, double omega_j, double delta) {
  if (c_tilde == 0.0) throw DimensionError("mod_amp_for: no qubit-coupler coupling");
  return 8.0 * delta * target_g / (c_tilde * c_tilde * std::sqrt(omega_i * omega_j));
}

/// Resonant exchange with detuning: (4g^2/(4g^2+Dc^2)) sin^2(sqrt(4g^2+Dc^2) t / 2)
inline double chevron(double g, double delta_c, double t) {
  if (t < 0.0) throw DimensionError("chevron: negative time");
  const double w2 = 4.0 * g * g + delta_c * delta_c;
  if (w2 == 0.0) return 0.0;
  const double s = std::sin(0.5 * std::sqrt(w2) * t);
  return 4.0 * g * g / w2 * s * s;
}

struct RwaCheck {
  double ratio = 0.0;
  bool pass = false;
};

inline RwaCheck rwa_validity(double g, double qubit_detuning, double threshold = 0.1) {
  if (qubit_detuning == 0.0) throw DimensionError("rwa_validity: zero qubit detuning");
  RwaCheck r;
  r.ratio = std::abs(g / qubit_detuning);
  r.pass = r.ratio < threshold;
  return r;
}

/// Circuit biased at the static-coupling zero above both qubits with the
/// modulation amplitude set for a target rate.
inline CouplerCircuit operating_point(CouplerCircuit c, double target_g) {
  const auto rc = reduced_capacitances(c);
  const double top = std::max(c.omega_i, c.omega_j);
  c.omega_c0 = zero_coupling_frequency(rc.c_tilde, rc.c_tilde_ij, c.omega_i, c.omega_j, top * (1.0 + 1e-6),
                                       top * 100.0);
  const double delta = effective_detuning(c.omega_i, c.omega_j, c.omega_c0);
  c.mod_amp = mod_amp_for(target_g, rc.c_tilde, c.omega_i, c.omega_j, delta);
  c.mod_freq = c.omega_j - c.omega_i;
  return c;
}

/// Two-qubit model in the frame of qubit i with the coupler modulated at
/// Delta + delta_c: J(t) = sqrt(w_i w_j)(C~^2 w_c0/(4 delta) + C~_ij/2 + C~^2 A cos(w_m t)/(4 delta)).
inline LindbladModel modulated_pair_model(const CouplerCircuit& c, double delta_c) {
  const auto rc = reduced_capacitances(c);
  const double delta = effective_detuning(c.omega_i, c.omega_j, c.omega_c0);
  const double root = std::sqrt(c.omega_i * c.omega_j);
  const double j0 = static_coupling(rc.c_tilde, rc.c_tilde_ij, c.omega_i, c.omega_j, c.omega_c0);
  const double j1 = root * rc.c_tilde * rc.c_tilde * c.mod_amp / (4.0 * delta);
  const double big_delta = c.omega_j - c.omega_i;
  const double wm = big_delta + delta_c;
  const RegisterSpace space = RegisterSpace::qubits(2);
  const CMatrix smi = embed(sigma_minus(), 0, space).mat, smj = embed(sigma_minus(), 1, space).mat;
  const CMatrix det = big_delta * smj.adjoint() * smj;
  const CMatrix xch = smi.adjoint() * smj + smj.adjoint() * smi;
  LindbladModel m;
  m.space = space;
  m.hamiltonian_at = [=](double t) -> CMatrix { return det + (j0 + j1 * std::cos(wm * t)) * xch; };
  return m;
}

/// Population transferred from qubit i to qubit j under the modulated
/// coupler, on a time grid starting at 0.
inline std::vector<double> chevron_simulated(const CouplerCircuit& c, double delta_c, const std::vector<double>& times,
                                             const OdeOptions& ode = {}) {
  const auto m = modulated_pair_model(c, delta_c);
  const RegisterSpace space = RegisterSpace::qubits(2);
  const DensityMatrix rho0 = pure_density(basis_state(space, {1, 0}));
  const auto traj = evolve_ode(m, rho0, times, ode);
  const CMatrix pj = embed(CMatrix(sigma_plus() * sigma_minus()), 1, space).mat;
  std::vector<double> out(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) out[k] = std::real(expectation(traj.states[k].mat, pj));
  return out;
}

/// Chevron maps indexed [offset][time], closed form and simulated.
struct ChevronMaps {
  std::vector<double> offsets;
  std::vector<double> times;
  std::vector<std::vector<double>> closed_form;
  std::vector<std::vector<double>> simulated;
  double g = 0.0;
};

inline ChevronMaps chevron_maps(const CouplerCircuit& c, const std::vector<double>& offsets,
                                const std::vector<double>& times, bool simulate, std::size_t threads = 1,
                                const OdeOptions& ode = {}) {
  const auto rc = reduced_capacitances(c);
  ChevronMaps out;
  out.offsets = offsets;
  out.times = times;
  out.g = g_eff(c.mod_amp, rc.c_tilde, c.omega_i, c.omega_j, effective_detuning(c.omega_i, c.omega_j, c.omega_c0));
  out.closed_form.assign(offsets.size(), std::vector<double>(times.size()));
  for (std::size_t a = 0; a < offsets.size(); ++a)
    for (std::size_t k = 0; k < times.size(); ++k) out.closed_form[a][k] = chevron(out.g, offsets[a], times[k]);
  if (simulate) {
    out.simulated.assign(offsets.size(), {});
    parallel_for(offsets.size(), threads, [&](std::size_t a) { out.simulated[a] = chevron_simulated(c, offsets[a], times, ode); });
  }
  return out;
}

}  // namespace wgqed::coupler
