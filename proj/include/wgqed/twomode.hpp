#pragma once

// Two propagating modes (left, right) truncated to at most two photons in
// total. Basis order: |00>, |01>, |10>, |02>, |11>, |20> with |n_L n_R>.

#include "wgqed/core.hpp"

#include <array>

namespace wgqed {

inline constexpr int kTwoModeDim = 6;

/// Index of |n_L n_R> in the truncated basis, or -1 if n_L + n_R > 2.
inline int two_mode_index(int n_left, int n_right) {
  static constexpr std::array<std::array<int, 3>, 3> table{{{0, 1, 3}, {2, 4, -1}, {5, -1, -1}}};
  if (n_left < 0 || n_right < 0 || n_left + n_right > 2) return -1;
  return table[static_cast<std::size_t>(n_left)][static_cast<std::size_t>(n_right)];
}

inline std::pair<int, int> two_mode_occupation(int index) {
  static constexpr std::array<std::pair<int, int>, 6> occ{{{0, 0}, {0, 1}, {1, 0}, {0, 2}, {1, 1}, {2, 0}}};
  if (index < 0 || index >= kTwoModeDim) throw DimensionError("two_mode_occupation: index out of range");
  return occ[static_cast<std::size_t>(index)];
}

struct TwoModeState {
  CMatrix rho = CMatrix::Zero(kTwoModeDim, kTwoModeDim);

  static TwoModeState fock(int n_left, int n_right) {
    const int k = two_mode_index(n_left, n_right);
    if (k < 0) throw DimensionError("TwoModeState::fock: outside the N <= 2 truncation");
    TwoModeState s;
    s.rho(k, k) = 1.0;
    return s;
  }
  static TwoModeState pure(const CVector& amp) {
    if (amp.size() != kTwoModeDim) throw DimensionError("TwoModeState::pure: expects 6 amplitudes");
    if (std::abs(amp.norm() - 1.0) > 1e-12) throw DimensionError("TwoModeState::pure: amplitudes not normalized");
    return {amp * amp.adjoint()};
  }
  DensityMatrix as_density() const { return {RegisterSpace({kTwoModeDim}), rho}; }
};

/// Lowering operator on one mode (0 = left, 1 = right), restricted to the
/// truncated space. Lowering never leaves the space, so products of
/// lowering operators are exact.
inline CMatrix two_mode_lowering(int mode) {
  if (mode != 0 && mode != 1) throw DimensionError("two_mode_lowering: mode must be 0 (left) or 1 (right)");
  CMatrix a = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
  for (int k = 0; k < kTwoModeDim; ++k) {
    auto [nl, nr] = two_mode_occupation(k);
    const int n = mode == 0 ? nl : nr;
    if (n == 0) continue;
    const int to = mode == 0 ? two_mode_index(nl - 1, nr) : two_mode_index(nl, nr - 1);
    a(to, k) = std::sqrt(static_cast<double>(n));
  }
  return a;
}

/// Projects a Hermitian matrix onto unit-trace PSD matrices by clipping
/// negative eigenvalues; returns the input unchanged if already valid.
inline CMatrix psd_project(const CMatrix& m) {
  const CMatrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  if (es.eigenvalues().minCoeff() >= 0.0) return h / std::real(h.trace());
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const CMatrix out = es.eigenvectors() * lam.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  return out / std::real(out.trace());
}

}  // namespace wgqed
