#pragma once

// Liouvillian construction, exponential and Runge-Kutta evolution, steady
// states and the commuting-channel factorization.

#include "wgqed/core.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <sstream>

namespace wgqed {

/// Correlated dissipation rate * (A rho B^+ + B rho A^+ - 1/2 {B^+A + A^+B, rho}).
struct CrossDissipator {
  CMatrix a;
  CMatrix b;
  double rate = 0.0;
};

/// Hamiltonian (rad/s) plus collapse operators already scaled by sqrt(rate).
struct LindbladModel {
  RegisterSpace space;
  CMatrix hamiltonian;
  /// When set, supplies the full H(t) and `hamiltonian` is ignored.
  std::function<CMatrix(double)> hamiltonian_at;
  std::vector<CMatrix> collapse_ops;
  std::vector<CrossDissipator> cross_dissipators;

  bool time_dependent() const { return static_cast<bool>(hamiltonian_at); }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(space.total_dim()); }

  CMatrix hamiltonian_of(double t) const { return time_dependent() ? hamiltonian_at(t) : hamiltonian; }
};

struct Liouvillian {
  RegisterSpace space;
  CMatrix matrix;
};

/// O rho O^+ - 1/2 {O^+ O, rho}
inline CMatrix dissipator_apply(const CMatrix& o, const CMatrix& rho) {
  if (o.rows() != rho.rows() || o.cols() != rho.cols())
    throw DimensionError("dissipator_apply: dimension mismatch");
  const CMatrix od = o.adjoint();
  const CMatrix n = od * o;
  return o * rho * od - 0.5 * (n * rho + rho * n);
}

namespace detail {

inline void check_model(const LindbladModel& model) {
  const auto d = model.dim();
  auto check = [&](const CMatrix& m, const char* what) {
    if (m.rows() != d || m.cols() != d) throw DimensionError(std::string("LindbladModel: ") + what + " has wrong shape");
  };
  if (!model.time_dependent()) {
    check(model.hamiltonian, "hamiltonian");
    if (hermiticity_error(model.hamiltonian) > 1e-10 * std::max(1.0, model.hamiltonian.cwiseAbs().maxCoeff()))
      throw DimensionError("LindbladModel: Hamiltonian not Hermitian");
  }
  for (const auto& c : model.collapse_ops) check(c, "collapse operator");
  for (const auto& x : model.cross_dissipators) {
    check(x.a, "cross dissipator");
    check(x.b, "cross dissipator");
  }
}

/// Generator applied directly in matrix form; used by the ODE path.
class GeneratorApply {
 public:
  explicit GeneratorApply(const LindbladModel& model) : model_(model) {
    for (const auto& c : model.collapse_ops) {
      ops_.push_back(c);
      ops_dag_.push_back(c.adjoint());
      ndag_.push_back(c.adjoint() * c);
    }
    for (const auto& x : model.cross_dissipators)
      cross_k_.push_back(x.b.adjoint() * x.a + x.a.adjoint() * x.b);
  }

  CMatrix operator()(double t, const CMatrix& rho) const {
    const CMatrix h = model_.hamiltonian_of(t);
    CMatrix out = -kI * (h * rho - rho * h);
    for (std::size_t k = 0; k < ops_.size(); ++k)
      out += ops_[k] * rho * ops_dag_[k] - 0.5 * (ndag_[k] * rho + rho * ndag_[k]);
    for (std::size_t k = 0; k < model_.cross_dissipators.size(); ++k) {
      const auto& x = model_.cross_dissipators[k];
      out += x.rate * (x.a * rho * x.b.adjoint() + x.b * rho * x.a.adjoint() -
                       0.5 * (cross_k_[k] * rho + rho * cross_k_[k]));
    }
    return out;
  }

 private:
  const LindbladModel& model_;
  std::vector<CMatrix> ops_, ops_dag_, ndag_, cross_k_;
};

}  // namespace detail

/// L = -i(1(x)H - H^T(x)1) + sum_k c_k^*(x)c_k - 1/2(1(x)c_k^+c_k + c_k^T c_k^*(x)1)
/// in the column-stacking convention of `vec`.
inline Liouvillian build_liouvillian(const LindbladModel& model) {
  if (model.time_dependent())
    throw DimensionError("build_liouvillian: time-dependent Hamiltonian; use evolve_ode");
  detail::check_model(model);
  const auto d = model.dim();
  const CMatrix id = CMatrix::Identity(d, d);
  CMatrix l = -kI * (kron(id, model.hamiltonian) - kron(model.hamiltonian.transpose(), id));
  for (const auto& c : model.collapse_ops) {
    const CMatrix n = c.adjoint() * c;
    l += kron(c.conjugate(), c) - 0.5 * (kron(id, n) + kron(n.transpose(), id));
  }
  for (const auto& x : model.cross_dissipators) {
    const CMatrix k = x.b.adjoint() * x.a + x.a.adjoint() * x.b;
    l += x.rate * (kron(x.b.conjugate(), x.a) + kron(x.a.conjugate(), x.b) -
                   0.5 * (kron(id, k) + kron(k.transpose(), id)));
  }
  return {model.space, std::move(l)};
}

/// Row vector vec(I)^T; annihilates every trace-preserving generator from the left.
inline CVector trace_row(Eigen::Index d) {
  CVector r = CVector::Zero(d * d);
  for (Eigen::Index i = 0; i < d; ++i) r(i + i * d) = 1.0;
  return r;
}

inline double trace_preservation_error(const Liouvillian& l) {
  const auto d = static_cast<Eigen::Index>(l.space.total_dim());
  const double scale = std::max(1.0, l.matrix.cwiseAbs().maxCoeff());
  return (trace_row(d).transpose() * l.matrix).cwiseAbs().maxCoeff() / scale;
}

inline DensityMatrix evolve_expm(const Liouvillian& l, const DensityMatrix& rho0, double t) {
  if (t < 0.0) throw DimensionError("evolve_expm: negative time");
  if (t == 0.0) return rho0;
  const CMatrix s = expm(l.matrix, t);
  return {rho0.space, unvec(s * vec(rho0.mat))};
}

struct Trajectory {
  std::vector<double> times;
  std::vector<DensityMatrix> states;
};

/// Exponential propagation sampled on a monotone grid; the propagator for
/// each distinct step length is computed once.
inline Trajectory evolve_expm_grid(const Liouvillian& l, const DensityMatrix& rho0,
                                   const std::vector<double>& times) {
  Trajectory out;
  if (times.empty()) return out;
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw DimensionError("evolve_expm_grid: grid not increasing");
  out.times = times;
  out.states.reserve(times.size());
  CVector v = vec(evolve_expm(l, rho0, times.front()).mat);
  out.states.push_back({rho0.space, unvec(v)});
  double cached_dt = -1.0;
  CMatrix step;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double dt = times[k] - times[k - 1];
    if (std::abs(dt - cached_dt) > 1e-12 * std::abs(dt)) {
      step = expm(l.matrix, dt);
      cached_dt = dt;
    }
    v = step * v;
    out.states.push_back({rho0.space, unvec(v)});
  }
  return out;
}

struct OdeOptions {
  double atol = 1e-10;
  double rtol = 1e-8;
  double initial_step = 0.0;  // 0: chosen from the generator scale
  std::size_t max_steps = 10'000'000;
};

/// Dormand-Prince 5(4) with adaptive steps. Steps are clipped so that every
/// grid time is hit exactly; H(t) is sampled at the stage times themselves.
inline Trajectory evolve_ode(const LindbladModel& model, const DensityMatrix& rho0,
                             const std::vector<double>& times, const OdeOptions& opt = {}) {
  detail::check_model(model);
  if (times.empty()) return {};
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw DimensionError("evolve_ode: grid not increasing");
  if (rho0.mat.rows() != model.dim()) throw DimensionError("evolve_ode: state dimension mismatch");

  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;

  const detail::GeneratorApply f(model);
  Trajectory out;
  out.times = times;
  out.states.reserve(times.size());

  double t = times.front();
  CMatrix y = rho0.mat;
  out.states.push_back({rho0.space, y});

  double h = opt.initial_step;
  CMatrix k1 = f(t, y);
  if (h <= 0.0) {
    const double scale = std::max(k1.cwiseAbs().maxCoeff(), 1e-300);
    h = 1e-3 / scale;
  }
  std::size_t steps = 0;
  for (std::size_t g = 1; g < times.size(); ++g) {
    const double target = times[g];
    while (t < target) {
      if (++steps > opt.max_steps) {
        std::ostringstream os;
        os << "evolve_ode: step budget exhausted at t=" << t;
        throw NumericalError(os.str());
      }
      bool clipped = false;
      double hs = h;
      if (t + hs >= target) {
        hs = target - t;
        clipped = true;
      }
      const CMatrix k2 = f(t + c2 * hs, y + hs * (a21 * k1));
      const CMatrix k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
      const CMatrix k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
      const CMatrix k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const CMatrix k6 = f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const CMatrix ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const CMatrix k7 = f(t + hs, ynew);
      const CMatrix err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

      double en = 0.0;
      for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sc = opt.atol + opt.rtol * std::max(std::abs(y.data()[i]), std::abs(ynew.data()[i]));
        en = std::max(en, std::abs(err.data()[i]) / sc);
      }
      if (!std::isfinite(en)) {
        std::ostringstream os;
        os << "evolve_ode: non-finite error estimate at t=" << t;
        throw NumericalError(os.str());
      }
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      if (en <= 1.0) {
        t = clipped ? target : t + hs;
        y = ynew;
        k1 = k7;
        // a clipped step says nothing about the natural step size
        if (!clipped || fac < 1.0) h = hs * fac;
      } else {
        h = hs * fac;
      }
      if (h < 1e-14 * std::max(std::abs(t), std::abs(target)) || h <= 0.0) {
        std::ostringstream os;
        os << "evolve_ode: step size underflow at t=" << t;
        throw NumericalError(os.str());
      }
    }
    out.states.push_back({rho0.space, y});
  }
  return out;
}

struct SteadyStateOptions {
  double uniqueness_ratio = 1e-6;
  double residual_tol = 1e-10;
};

/// Null vector of L normalized to unit trace. One row of L is replaced by
/// the trace constraint; uniqueness is checked through the singular values.
inline DensityMatrix steady_state(const Liouvillian& l, const SteadyStateOptions& opt = {}) {
  const auto d = static_cast<Eigen::Index>(l.space.total_dim());
  const auto n = d * d;
  if (l.matrix.rows() != n || l.matrix.cols() != n) throw DimensionError("steady_state: bad Liouvillian shape");

  Eigen::BDCSVD<CMatrix> svd(l.matrix);
  const auto& sv = svd.singularValues();
  if (n >= 2 && sv(n - 2) <= opt.uniqueness_ratio * sv(0)) {
    std::ostringstream os;
    os << "steady_state: degenerate null space (second-smallest singular value " << sv(n - 2)
       << ", largest " << sv(0) << ")";
    throw NumericalError(os.str());
  }

  CMatrix m = l.matrix;
  m.row(0) = trace_row(d).transpose();
  CVector rhs = CVector::Zero(n);
  rhs(0) = 1.0;
  CVector v = m.partialPivLu().solve(rhs);
  CMatrix rho = unvec(v);
  rho = 0.5 * (rho + rho.adjoint());
  rho /= rho.trace();
  const double res = (l.matrix * vec(rho)).norm() / std::max(l.matrix.norm(), 1e-300);
  if (!(res < opt.residual_tol)) {
    std::ostringstream os;
    os << "steady_state: relative residual " << res << " exceeds tolerance";
    throw NumericalError(os.str());
  }
  return {l.space, rho};
}

/// ||[A, B]||_F / (||A||_F ||B||_F)
inline double relative_commutator(const CMatrix& a, const CMatrix& b) {
  const double s = a.norm() * b.norm();
  return s == 0.0 ? 0.0 : (a * b - b * a).norm() / s;
}

/// exp(L_a t) exp(L_b t) for commuting generators on a common register.
inline CMatrix channel_factorized(const Liouvillian& la, const Liouvillian& lb, double t,
                                  double commutator_tol = 1e-8) {
  if (!(la.space == lb.space)) throw DimensionError("channel_factorized: register mismatch");
  const double c = relative_commutator(la.matrix, lb.matrix);
  if (c > commutator_tol) {
    std::ostringstream os;
    os << "channel_factorized: generators do not commute (relative commutator " << c << ")";
    throw NumericalError(os.str());
  }
  if (t == 0.0) return CMatrix::Identity(la.matrix.rows(), la.matrix.cols());
  return expm(la.matrix, t) * expm(lb.matrix, t);
}

}  // namespace wgqed
