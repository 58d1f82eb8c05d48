#pragma once

// Finite-dimensional operator algebra shared by every other module:
// register composition, standard qubit/boson operators, column-stacking
// vectorization, the dense matrix exponential and state metrics.
//
// Basis convention: local index 0 is the ground state |g> (or Fock |0>);
// index 1 is |e> (or |1>). Composite indices are row-major over subsystems,
// so subsystem 0 is the most significant digit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wgqed {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr cplx kI{0.0, 1.0};

/// Base class of all errors raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad shapes, indices or arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not deliver its contract (singular system,
/// step-size failure, degenerate null space, optimizer budget exhausted).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Ordered list of subsystem dimensions.
class RegisterSpace {
 public:
  RegisterSpace() = default;
  explicit RegisterSpace(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw DimensionError("RegisterSpace: empty subsystem list");
    for (auto d : dims_)
      if (d == 0) throw DimensionError("RegisterSpace: zero subsystem dimension");
  }
  RegisterSpace(std::initializer_list<std::size_t> dims)
      : RegisterSpace(std::vector<std::size_t>(dims)) {}

  static RegisterSpace qubits(std::size_t n) {
    return RegisterSpace(std::vector<std::size_t>(n, 2));
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t subsystems() const { return dims_.size(); }
  std::size_t dim(std::size_t site) const { return dims_.at(site); }
  std::size_t total_dim() const {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                           std::multiplies<>());
  }
  friend bool operator==(const RegisterSpace&, const RegisterSpace&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense operator on a register.
struct Operator {
  RegisterSpace space;
  CMatrix mat;

  Operator() = default;
  Operator(RegisterSpace s, CMatrix m) : space(std::move(s)), mat(std::move(m)) {
    const auto d = static_cast<Eigen::Index>(space.total_dim());
    if (mat.rows() != d || mat.cols() != d)
      throw DimensionError("Operator: matrix shape does not match register");
  }
  Eigen::Index dim() const { return mat.rows(); }
  Operator adjoint() const { return {space, mat.adjoint()}; }
};

struct StateVector {
  RegisterSpace space;
  CVector amp;
};

struct DensityMatrix {
  RegisterSpace space;
  CMatrix mat;
  Eigen::Index dim() const { return mat.rows(); }
};

/// Column-stacked density matrix |rho>>.
struct SuperVector {
  RegisterSpace space;
  CVector entries;
};

// --- standard single-subsystem operators ------------------------------------

inline CMatrix identity(std::size_t d) {
  return CMatrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
}

/// |g><e|
inline CMatrix sigma_minus() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = 1.0;
  return m;
}

/// |e><g|
inline CMatrix sigma_plus() { return sigma_minus().adjoint(); }

inline CMatrix sigma_x() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = m(1, 0) = 1.0;
  return m;
}

inline CMatrix sigma_y() {
  // i(sigma_- - sigma_+) in this basis, so that sigma_+ = (sigma_x + i sigma_y)/2
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = kI;
  m(1, 0) = -kI;
  return m;
}

/// |e><e| - |g><g|
inline CMatrix sigma_z() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 0) = -1.0;
  m(1, 1) = 1.0;
  return m;
}

/// Truncated bosonic annihilation operator on Fock levels 0..d-1.
inline CMatrix annihilation(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  CMatrix a = CMatrix::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
  return a;
}

// --- composition -------------------------------------------------------------

/// (A (x) B)[(i*dB + k), (j*dB + l)] = A[i,j] * B[k,l]
inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Operator kron(const Operator& a, const Operator& b) {
  std::vector<std::size_t> dims = a.space.dims();
  dims.insert(dims.end(), b.space.dims().begin(), b.space.dims().end());
  return {RegisterSpace(std::move(dims)), kron(a.mat, b.mat)};
}

/// Lift a single-subsystem operator to the full register (identity elsewhere).
inline Operator embed(const CMatrix& op, std::size_t site, const RegisterSpace& space) {
  if (site >= space.subsystems()) throw DimensionError("embed: site out of range");
  const auto ds = static_cast<Eigen::Index>(space.dim(site));
  if (op.rows() != ds || op.cols() != ds)
    throw DimensionError("embed: operator dimension does not match subsystem");
  std::size_t left = 1, right = 1;
  for (std::size_t k = 0; k < site; ++k) left *= space.dim(k);
  for (std::size_t k = site + 1; k < space.subsystems(); ++k) right *= space.dim(k);
  return {space, kron(kron(identity(left), op), identity(right))};
}

// --- vectorization -----------------------------------------------------------

/// Column stacking: v[i + j*d] = rho(i, j), so vec(A rho B) = (B^T (x) A) vec(rho).
inline CVector vec(const CMatrix& rho) {
  const auto d = rho.rows();
  CVector v(d * d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) v(i + j * d) = rho(i, j);
  return v;
}

inline CMatrix unvec(const CVector& v) {
  const auto n = v.size();
  const auto d = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(n))));
  if (d * d != n) throw DimensionError("unvec: length is not a perfect square");
  CMatrix rho(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) rho(i, j) = v(i + j * d);
  return rho;
}

inline SuperVector vectorize(const DensityMatrix& rho) { return {rho.space, vec(rho.mat)}; }

inline DensityMatrix devectorize(const SuperVector& v) {
  CMatrix m = unvec(v.entries);
  if (static_cast<std::size_t>(m.rows()) != v.space.total_dim())
    throw DimensionError("devectorize: length does not match register");
  return {v.space, std::move(m)};
}

// --- matrix exponential ------------------------------------------------------

namespace detail {
inline bool all_finite(const CMatrix& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k)
    if (!std::isfinite(m.data()[k].real()) || !std::isfinite(m.data()[k].imag())) return false;
  return true;
}
}  // namespace detail

/// exp(M t) by scaling and squaring with a [13/13] Pade approximant
/// (Higham 2005 coefficients and theta_13).
inline CMatrix expm(const CMatrix& m, double t = 1.0) {
  if (m.rows() != m.cols()) throw DimensionError("expm: matrix not square");
  if (!std::isfinite(t) || !detail::all_finite(m))
    throw NumericalError("expm: non-finite input");
  const auto n = m.rows();
  CMatrix a = m * t;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 == 0.0) return CMatrix::Identity(n, n);

  constexpr double theta13 = 5.371920351148152;
  int s = 0;
  if (norm1 > theta13) s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
  a /= std::ldexp(1.0, s);

  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                 1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,       1323241920.0,
                                 40840800.0,          960960.0,            16380.0,
                                 182.0,               1.0};
  const CMatrix id = CMatrix::Identity(n, n);
  const CMatrix a2 = a * a;
  const CMatrix a4 = a2 * a2;
  const CMatrix a6 = a4 * a2;
  const CMatrix u_inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
  const CMatrix u =
      a * (a6 * u_inner + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
  const CMatrix v_inner = b[12] * a6 + b[10] * a4 + b[8] * a2;
  const CMatrix v = a6 * v_inner + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
  CMatrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < s; ++k) r = r * r;
  if (!detail::all_finite(r)) throw NumericalError("expm: result not finite");
  return r;
}

// --- states and metrics ------------------------------------------------------

inline DensityMatrix pure_density(const StateVector& psi) {
  return {psi.space, psi.amp * psi.amp.adjoint()};
}

inline StateVector basis_state(const RegisterSpace& space, const std::vector<std::size_t>& digits) {
  if (digits.size() != space.subsystems()) throw DimensionError("basis_state: wrong digit count");
  std::size_t index = 0;
  for (std::size_t k = 0; k < digits.size(); ++k) {
    if (digits[k] >= space.dim(k)) throw DimensionError("basis_state: digit out of range");
    index = index * space.dim(k) + digits[k];
  }
  CVector amp = CVector::Zero(static_cast<Eigen::Index>(space.total_dim()));
  amp(static_cast<Eigen::Index>(index)) = 1.0;
  return {space, amp};
}

inline double hermiticity_error(const CMatrix& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

inline double min_eigenvalue(const CMatrix& m) {
  const CMatrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Throws DimensionError unless rho is Hermitian (1e-10), unit trace (1e-9)
/// and has minimum eigenvalue >= -1e-9.
inline void validate_density(const DensityMatrix& rho) {
  if (rho.mat.rows() != rho.mat.cols() ||
      static_cast<std::size_t>(rho.mat.rows()) != rho.space.total_dim())
    throw DimensionError("density matrix: shape does not match register");
  if (hermiticity_error(rho.mat) > 1e-10) throw DimensionError("density matrix: not Hermitian");
  if (std::abs(rho.mat.trace() - 1.0) > 1e-9) throw DimensionError("density matrix: trace != 1");
  if (min_eigenvalue(rho.mat) < -1e-9) throw DimensionError("density matrix: not positive");
}

inline cplx expectation(const DensityMatrix& rho, const Operator& op) {
  if (rho.mat.rows() != op.mat.rows()) throw DimensionError("expectation: dimension mismatch");
  return (rho.mat * op.mat).trace();
}

inline cplx expectation(const CMatrix& rho, const CMatrix& op) {
  if (rho.rows() != op.rows()) throw DimensionError("expectation: dimension mismatch");
  // Tr(rho op) without forming the product
  cplx acc = 0.0;
  for (Eigen::Index j = 0; j < rho.cols(); ++j)
    for (Eigen::Index i = 0; i < rho.rows(); ++i) acc += rho(i, j) * op(j, i);
  return acc;
}

inline double purity(const CMatrix& rho) { return std::real((rho * rho).trace()); }

/// Traces out every subsystem not listed in `keep`; the kept subsystems
/// retain their original order.
inline DensityMatrix partial_trace(const DensityMatrix& rho, std::vector<std::size_t> keep) {
  const auto& dims = rho.space.dims();
  const std::size_t n = dims.size();
  if (keep.empty()) throw DimensionError("partial_trace: empty keep set");
  std::sort(keep.begin(), keep.end());
  if (std::adjacent_find(keep.begin(), keep.end()) != keep.end())
    throw DimensionError("partial_trace: duplicate index");
  if (keep.back() >= n) throw DimensionError("partial_trace: index out of range");

  std::vector<bool> kept(n, false);
  for (auto k : keep) kept[k] = true;
  std::vector<std::size_t> kdims, tdims;
  for (std::size_t k = 0; k < n; ++k) (kept[k] ? kdims : tdims).push_back(dims[k]);
  const std::size_t dk = std::accumulate(kdims.begin(), kdims.end(), std::size_t{1}, std::multiplies<>());
  const std::size_t dt = std::accumulate(tdims.begin(), tdims.end(), std::size_t{1}, std::multiplies<>());

  // full index from (kept multi-index, traced multi-index)
  auto compose = [&](std::size_t ik, std::size_t it) {
    std::vector<std::size_t> digits(n);
    for (std::size_t k = n; k-- > 0;) {
      if (kept[k]) {
        digits[k] = ik % dims[k];
        ik /= dims[k];
      } else {
        digits[k] = it % dims[k];
        it /= dims[k];
      }
    }
    std::size_t idx = 0;
    for (std::size_t k = 0; k < n; ++k) idx = idx * dims[k] + digits[k];
    return static_cast<Eigen::Index>(idx);
  };

  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(dk), static_cast<Eigen::Index>(dk));
  for (std::size_t i = 0; i < dk; ++i)
    for (std::size_t j = 0; j < dk; ++j) {
      cplx acc = 0.0;
      for (std::size_t t = 0; t < dt; ++t) acc += rho.mat(compose(i, t), compose(j, t));
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = acc;
    }
  return {RegisterSpace(kdims), out};
}

namespace detail {
inline CMatrix psd_sqrt(const CMatrix& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (m + m.adjoint()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}
}  // namespace detail

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2. When either
/// argument is pure this reduces to <t|rho|t>, which is evaluated directly.
inline double fidelity(const CMatrix& rho, const CMatrix& sigma) {
  if (rho.rows() != sigma.rows() || rho.cols() != sigma.cols())
    throw DimensionError("fidelity: dimension mismatch");
  auto pure_overlap = [](const CMatrix& pure, const CMatrix& other) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (pure + pure.adjoint()));
    const CVector t = es.eigenvectors().col(es.eigenvectors().cols() - 1);
    return std::real(t.dot(other * t));
  };
  double f;
  if (std::abs(purity(sigma) - 1.0) < 1e-12) {
    f = pure_overlap(sigma, rho);
  } else if (std::abs(purity(rho) - 1.0) < 1e-12) {
    f = pure_overlap(rho, sigma);
  } else {
    const CMatrix sr = detail::psd_sqrt(rho);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(sr * sigma * sr, Eigen::EigenvaluesOnly);
    const double tr = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    f = tr * tr;
  }
  return std::clamp(f, 0.0, 1.0);
}

inline double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (!(rho.space == sigma.space)) throw DimensionError("fidelity: register mismatch");
  return fidelity(rho.mat, sigma.mat);
}

/// Spectral norm.
inline double operator_norm(const CMatrix& m) {
  Eigen::JacobiSVD<CMatrix> svd(m);
  return svd.singularValues()(0);
}

inline double relative_frobenius(const CMatrix& a, const CMatrix& b) {
  const double nb = b.norm();
  return (a - b).norm() / (nb > 0.0 ? nb : 1.0);
}

}  // namespace wgqed
