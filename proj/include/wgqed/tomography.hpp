#pragma once

// Heterodyne moment tomography of two propagating modes.
//
// Measurement model. A referred-to-input outcome is S = alpha + eta, where
// alpha is distributed by the Glauber-Sudarshan function of the signal and
// eta is independent circular noise with <|eta|^2> = 1 + N (vacuum plus the
// amplifier's added quanta N). Empirical moments of S therefore expand as
//   <S_L*^w S_L^x S_R*^y S_R^z> = sum_{j,k,l,m} C(w,j)C(x,k)C(y,l)C(z,m)
//       <a_L^dag^j a_L^k a_R^dag^l a_R^m> <eta_L*^(w-j) eta_L^(x-k) eta_R*^(y-l) eta_R^(z-m)>
// and the noise moments are measured on a vacuum-input reference. The
// normally ordered signal moments follow by solving this triangular system
// in increasing total order. Post-amplifier outcomes carry a factor sqrt(G).

#include "wgqed/core.hpp"
#include "wgqed/parallel.hpp"
#include "wgqed/rng.hpp"
#include "wgqed/twomode.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <type_traits>

namespace wgqed::tomography {

struct AmplifierModel {
  double gain = 1e3;  // linear power gain
  double added_noise_L = 5.0;
  double added_noise_R = 5.0;

  void validate() const {
    if (!(gain > 1.0)) throw DimensionError("AmplifierModel: gain must exceed 1");
    if (!(added_noise_L >= 0.5) || !(added_noise_R >= 0.5))
      throw DimensionError("AmplifierModel: phase-insensitive amplification adds at least half a quantum");
  }
};

enum class ShotKind : std::uint8_t { signal = 0, noise_reference = 1 };

struct Shot {
  cplx left;
  cplx right;
};

struct ShotSet {
  std::vector<Shot> shots;
  std::uint64_t seed = 0;
  AmplifierModel amplifier;
  ShotKind kind = ShotKind::signal;
  bool referred_to_input = false;  // false: values include the sqrt(gain) factor

  std::size_t count() const { return shots.size(); }
};

// ---------------------------------------------------------------- moments

struct MomentKey {
  int w = 0, x = 0, y = 0, z = 0;
  int order() const { return w + x + y + z; }
  MomentKey conjugate() const { return {x, w, z, y}; }
  bool self_conjugate() const { return w == x && y == z; }
  bool operator==(const MomentKey&) const = default;
};

namespace detail {

inline constexpr int kMaxTableOrder = 8;

struct KeyTable {
  std::vector<MomentKey> keys;  // sorted by total order, then lexicographically
  std::array<int, 9 * 9 * 9 * 9> index{};
  std::array<std::size_t, kMaxTableOrder + 2> count_upto{};  // keys with order < n

  KeyTable() {
    index.fill(-1);
    for (int n = 0; n <= kMaxTableOrder; ++n) {
      count_upto[static_cast<std::size_t>(n)] = keys.size();
      for (int w = 0; w <= n; ++w)
        for (int x = 0; x <= n - w; ++x)
          for (int y = 0; y <= n - w - x; ++y) {
            const int z = n - w - x - y;
            index[static_cast<std::size_t>(((w * 9 + x) * 9 + y) * 9 + z)] = static_cast<int>(keys.size());
            keys.push_back({w, x, y, z});
          }
    }
    count_upto[kMaxTableOrder + 1] = keys.size();
  }
};

inline const KeyTable& key_table() {
  static const KeyTable t;
  return t;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace detail

/// Keys with total order <= max_order in the canonical order.
inline std::vector<MomentKey> moment_keys(int max_order) {
  if (max_order < 0 || max_order > detail::kMaxTableOrder) throw DimensionError("moment_keys: order out of range");
  const auto& t = detail::key_table();
  return {t.keys.begin(), t.keys.begin() + static_cast<std::ptrdiff_t>(t.count_upto[static_cast<std::size_t>(max_order) + 1])};
}

/// Position of a key in the canonical order, or -1.
inline int moment_index(const MomentKey& k) {
  if (k.w < 0 || k.x < 0 || k.y < 0 || k.z < 0 || k.order() > detail::kMaxTableOrder) return -1;
  return detail::key_table().index[static_cast<std::size_t>(((k.w * 9 + k.x) * 9 + k.y) * 9 + k.z)];
}

struct MomentSet {
  int max_order = 4;
  std::vector<cplx> value;     // indexed by moment_index
  std::vector<double> stderr;  // complex standard error sqrt(var Re + var Im)

  explicit MomentSet(int order = 4) : max_order(order) {
    const std::size_t n = moment_keys(order).size();
    value.assign(n, 0.0);
    stderr.assign(n, 0.0);
  }
  std::size_t size() const { return value.size(); }
  std::size_t index_of(const MomentKey& k) const {
    const int i = moment_index(k);
    if (i < 0 || static_cast<std::size_t>(i) >= value.size()) throw DimensionError("MomentSet: key outside the set");
    return static_cast<std::size_t>(i);
  }
  cplx at(int w, int x, int y, int z) const { return value[index_of({w, x, y, z})]; }
  double error_at(int w, int x, int y, int z) const { return stderr[index_of({w, x, y, z})]; }
};

/// Largest deviation from M(w,x,y,z) = conj(M(x,w,z,y)) in units of the
/// combined standard error (absolute if both errors vanish).
inline double conjugation_asymmetry(const MomentSet& m) {
  const auto keys = moment_keys(m.max_order);
  double worst = 0.0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::size_t j = m.index_of(keys[i].conjugate());
    const double d = std::abs(m.value[i] - std::conj(m.value[j]));
    const double s = std::hypot(m.stderr[i], m.stderr[j]);
    worst = std::max(worst, s > 0.0 ? d / s : d);
  }
  return worst;
}

// ---------------------------------------------------------- states

/// Tr(rho a_L^dag^w a_L^x a_R^dag^y a_R^z). The operators of the two modes
/// commute, so the product is evaluated as (a_L^w a_R^y)^dag (a_L^x a_R^z),
/// which is exact inside the truncation.
inline CMatrix moment_operator(const MomentKey& k) {
  if (k.w < 0 || k.x < 0 || k.y < 0 || k.z < 0) throw DimensionError("moment_operator: negative order");
  static const CMatrix al = two_mode_lowering(0), ar = two_mode_lowering(1);
  auto power = [](const CMatrix& a, int n) {
    CMatrix p = identity(kTwoModeDim);
    for (int i = 0; i < n; ++i) p = p * a;
    return p;
  };
  const CMatrix lhs = power(al, k.w) * power(ar, k.y);
  const CMatrix rhs = power(al, k.x) * power(ar, k.z);
  return lhs.adjoint() * rhs;
}

inline cplx moments_from_state(const TwoModeState& s, int w, int x, int y, int z) {
  if (w + x + y + z > 4) throw DimensionError("moments_from_state: orders above 4 are not supported");
  return (s.rho * moment_operator({w, x, y, z})).trace();
}

/// Exact normally ordered moments of a state with zero errors.
inline MomentSet moments_of_state(const TwoModeState& s, int max_order = 4) {
  MomentSet m(max_order);
  const auto keys = moment_keys(max_order);
  for (std::size_t i = 0; i < keys.size(); ++i)
    m.value[i] = moments_from_state(s, keys[i].w, keys[i].x, keys[i].y, keys[i].z);
  return m;
}

// ----------------------------------------------------- outcome density

namespace detail {

/// E[(mu* + sqrt(v) xi*)^a (mu + sqrt(v) xi)^b] for a unit circular Gaussian xi.
inline cplx shifted_gaussian_moment(int a, int b, cplx mu, double v) {
  cplx s = 0.0;
  for (int j = 0; j <= std::min(a, b); ++j) {
    double fact = 1.0;
    for (int i = 2; i <= j; ++i) fact *= i;
    s += binomial(a, j) * binomial(b, j) * fact * std::pow(v, j) * std::pow(std::conj(mu), a - j) * std::pow(mu, b - j);
  }
  return s;
}

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace detail

/// Density of referred-to-input outcomes (s_L, s_R): the two-mode Husimi
/// function of rho convolved per mode with a circular Gaussian carrying the
/// added noise quanta. Evaluated in closed form.
inline double generalized_q_density(const TwoModeState& rho, const AmplifierModel& amp, cplx s_l, cplx s_r) {
  const double nl = amp.added_noise_L, nr = amp.added_noise_R;
  const cplx mul = s_l / (1.0 + nl), mur = s_r / (1.0 + nr);
  const double vl = nl / (1.0 + nl), vr = nr / (1.0 + nr);
  const double pref = std::exp(-std::norm(s_l) / (1.0 + nl) - std::norm(s_r) / (1.0 + nr)) /
                      (kPi * kPi * (1.0 + nl) * (1.0 + nr));
  cplx acc = 0.0;
  for (int k = 0; k < kTwoModeDim; ++k) {
    const auto [kl, kr] = two_mode_occupation(k);
    for (int l = 0; l < kTwoModeDim; ++l) {
      if (rho.rho(k, l) == 0.0) continue;
      const auto [ll, lr] = two_mode_occupation(l);
      const double norm = std::sqrt(detail::factorial(kl) * detail::factorial(kr) * detail::factorial(ll) *
                                    detail::factorial(lr));
      acc += rho.rho(k, l) / norm * detail::shifted_gaussian_moment(kl, ll, mul, vl) *
             detail::shifted_gaussian_moment(kr, lr, mur, vr);
    }
  }
  return std::max(0.0, pref * std::real(acc));
}

// ------------------------------------------------------------ sampling

inline constexpr std::size_t kShotBlock = 1 << 14;
inline constexpr double kRejectionBound = 8.0;

namespace detail {

struct Mixture {
  std::vector<double> cumulative;
  std::vector<CVector> vectors;
};

inline Mixture eigen_mixture(const TwoModeState& rho) {
  validate_density(rho.as_density());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (rho.rho + rho.rho.adjoint()));
  Mixture m;
  double total = 0.0;
  for (int k = kTwoModeDim - 1; k >= 0; --k) {
    const double p = std::max(0.0, es.eigenvalues()(k));
    if (p <= 0.0) continue;
    total += p;
    m.cumulative.push_back(total);
    m.vectors.push_back(es.eigenvectors().col(k));
  }
  for (auto& c : m.cumulative) c /= total;
  return m;
}

/// Coherent-state overlap polynomial sum_k c_k conj(a_L)^n conj(a_R)^m / sqrt(n! m!).
inline cplx overlap_poly(const CVector& c, cplx al, cplx ar) {
  const cplx l = std::conj(al), r = std::conj(ar);
  const double s2 = std::sqrt(0.5);
  return c(0) + c(1) * r + c(2) * l + c(3) * r * r * s2 + c(4) * l * r + c(5) * l * l * s2;
}

inline Shot sample_one(const Mixture& mix, const AmplifierModel& amp, double scale, Stream& rng) {
  const double u = rng.uniform();
  std::size_t k = 0;
  while (k + 1 < mix.cumulative.size() && u >= mix.cumulative[k]) ++k;
  const CVector& v = mix.vectors[k];
  cplx al, ar;
  for (;;) {
    al = {rng.normal(), rng.normal()};
    ar = {rng.normal(), rng.normal()};
    const double r2 = std::norm(al) + std::norm(ar);
    const double ratio = 4.0 * std::exp(-0.5 * r2) * std::norm(overlap_poly(v, al, ar));
    if (ratio > kRejectionBound) throw NumericalError("sample_shots: rejection envelope exceeded");
    if (rng.uniform() * kRejectionBound < ratio) break;
  }
  const double sl = std::sqrt(0.5 * amp.added_noise_L), sr = std::sqrt(0.5 * amp.added_noise_R);
  al += cplx(sl * rng.normal(), sl * rng.normal());
  ar += cplx(sr * rng.normal(), sr * rng.normal());
  return {scale * al, scale * ar};
}

}  // namespace detail

/// Draws i.i.d. outcomes of rho (kind = signal) or of the vacuum (kind =
/// noise_reference, rho ignored). Blocks of kShotBlock shots use independent
/// streams, so output depends only on (seed, count).
inline ShotSet sample_shots(const TwoModeState& rho, const AmplifierModel& amp, std::size_t count, std::uint64_t seed,
                            ShotKind kind = ShotKind::signal, bool referred_to_input = false,
                            std::size_t threads = 1) {
  amp.validate();
  if (count == 0) throw DimensionError("sample_shots: count must be at least 1");
  const TwoModeState state = kind == ShotKind::signal ? rho : TwoModeState::fock(0, 0);
  const auto mix = detail::eigen_mixture(state);
  const double scale = referred_to_input ? 1.0 : std::sqrt(amp.gain);
  ShotSet out;
  out.seed = seed;
  out.amplifier = amp;
  out.kind = kind;
  out.referred_to_input = referred_to_input;
  out.shots.resize(count);
  const std::size_t blocks = (count + kShotBlock - 1) / kShotBlock;
  // the reference stream family is offset so signal and reference never share streams
  const std::uint64_t family = kind == ShotKind::signal ? 0 : 0x8000000000000000ULL;
  parallel_for(blocks, threads, [&](std::size_t b) {
    Stream rng(seed, family + b);
    const std::size_t end = std::min(count, (b + 1) * kShotBlock);
    for (std::size_t i = b * kShotBlock; i < end; ++i) out.shots[i] = detail::sample_one(mix, amp, scale, rng);
  });
  return out;
}

// -------------------------------------------------------- estimation

/// Sample means of every monomial up to order 8 (what moment errors up to
/// order 4 need), reduced block by block in block order.
struct ShotStatistics {
  std::uint64_t count = 0;
  std::vector<cplx> mean;  // indexed by moment_index, order <= 8
};

inline ShotStatistics shot_statistics(const ShotSet& s, std::size_t threads = 1) {
  if (s.count() == 0) throw DimensionError("shot_statistics: empty shot set");
  const auto& table = detail::key_table();
  const std::size_t nk = table.keys.size();
  constexpr int kOrd = detail::kMaxTableOrder;
  // (w, x) pairs with w + x <= 8
  std::vector<std::pair<int, int>> pairs;
  std::array<int, 81> pair_index{};
  for (int w = 0; w <= kOrd; ++w)
    for (int x = 0; x <= kOrd - w; ++x) {
      pair_index[static_cast<std::size_t>(w * 9 + x)] = static_cast<int>(pairs.size());
      pairs.push_back({w, x});
    }
  std::vector<std::pair<int, int>> mono(nk);
  for (std::size_t i = 0; i < nk; ++i) {
    const auto& k = table.keys[i];
    mono[i] = {pair_index[static_cast<std::size_t>(k.w * 9 + k.x)], pair_index[static_cast<std::size_t>(k.y * 9 + k.z)]};
  }
  const std::size_t blocks = (s.count() + kShotBlock - 1) / kShotBlock;
  std::vector<std::vector<cplx>> partial(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    std::vector<cplx> acc(nk, 0.0);
    std::vector<cplx> lp(pairs.size()), rp(pairs.size());
    std::array<cplx, kOrd + 1> pl, pcl, pr, pcr;
    const std::size_t end = std::min(s.count(), (b + 1) * kShotBlock);
    for (std::size_t i = b * kShotBlock; i < end; ++i) {
      const Shot& sh = s.shots[i];
      pl[0] = pcl[0] = pr[0] = pcr[0] = 1.0;
      for (int n = 1; n <= kOrd; ++n) {
        pl[n] = pl[n - 1] * sh.left;
        pcl[n] = std::conj(pl[n]);
        pr[n] = pr[n - 1] * sh.right;
        pcr[n] = std::conj(pr[n]);
      }
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        lp[p] = pcl[pairs[p].first] * pl[pairs[p].second];
        rp[p] = pcr[pairs[p].first] * pr[pairs[p].second];
      }
      for (std::size_t m = 0; m < nk; ++m) acc[m] += lp[mono[m].first] * rp[mono[m].second];
    }
    partial[b] = std::move(acc);
  });
  ShotStatistics st;
  st.count = s.count();
  st.mean.assign(nk, 0.0);
  for (const auto& p : partial)
    for (std::size_t m = 0; m < nk; ++m) st.mean[m] += p[m];
  for (auto& v : st.mean) v /= static_cast<double>(s.count());
  return st;
}

namespace detail {

inline MomentKey add(const MomentKey& a, const MomentKey& b) { return {a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z}; }

/// Covariance of the per-shot monomials a and b: E[phi_a conj(phi_b)] - E phi_a conj(E phi_b).
/// conj(phi_b) is the monomial of the conjugate key.
inline cplx monomial_covariance(const ShotStatistics& st, const MomentKey& a, const MomentKey& b) {
  const cplx second = st.mean[static_cast<std::size_t>(moment_index(add(a, b.conjugate())))];
  return second - st.mean[static_cast<std::size_t>(moment_index(a))] *
                      std::conj(st.mean[static_cast<std::size_t>(moment_index(b))]);
}

/// sum_ab c_a conj(c_b) Cov(phi_a, phi_b) / n over the keys with nonzero weight.
inline double linear_variance(const ShotStatistics& st, const std::vector<MomentKey>& keys, const std::vector<cplx>& c) {
  cplx v = 0.0;
  for (std::size_t a = 0; a < keys.size(); ++a) {
    if (c[a] == 0.0) continue;
    for (std::size_t b = 0; b < keys.size(); ++b) {
      if (c[b] == 0.0) continue;
      v += c[a] * std::conj(c[b]) * monomial_covariance(st, keys[a], keys[b]);
    }
  }
  return std::max(0.0, std::real(v)) / static_cast<double>(st.count);
}

}  // namespace detail

inline MomentSet raw_moments(const ShotStatistics& st, int max_order = 4) {
  if (max_order < 0 || max_order > 4) throw DimensionError("raw_moments: max_order must be within 0..4");
  MomentSet m(max_order);
  const auto keys = moment_keys(max_order);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    m.value[i] = st.mean[i];
    const cplx var = detail::monomial_covariance(st, keys[i], keys[i]);
    m.stderr[i] = std::sqrt(std::max(0.0, std::real(var)) / static_cast<double>(st.count));
  }
  return m;
}

inline MomentSet raw_moments(const ShotSet& shots, int max_order = 4, std::size_t threads = 1) {
  return raw_moments(shot_statistics(shots, threads), max_order);
}

namespace detail {

/// Linear map from measured moments to signal moments, m = K M, and its
/// derivative with respect to each noise moment, dm/dN[g] = J[g] (as
/// matrices over the key set: row = signal key).
struct Inversion {
  std::vector<MomentKey> keys;
  std::vector<std::vector<cplx>> k;                 // k[a][b]
  std::vector<std::vector<std::vector<cplx>>> dk;   // dk[g][a][b] = dK[a][b]/dN[g]
};

inline Inversion build_inversion(const std::vector<cplx>& noise, int max_order) {
  Inversion inv;
  inv.keys = moment_keys(max_order);
  const std::size_t n = inv.keys.size();
  inv.k.assign(n, std::vector<cplx>(n, 0.0));
  inv.dk.assign(n, std::vector<std::vector<cplx>>(n, std::vector<cplx>(n, 0.0)));
  for (std::size_t a = 0; a < n; ++a) {
    const MomentKey& ka = inv.keys[a];
    inv.k[a][a] = 1.0;
    for (std::size_t b = 0; b < a; ++b) {
      const MomentKey& kb = inv.keys[b];
      if (kb.w > ka.w || kb.x > ka.x || kb.y > ka.y || kb.z > ka.z) continue;
      const MomentKey diff{ka.w - kb.w, ka.x - kb.x, ka.y - kb.y, ka.z - kb.z};
      const std::size_t g = static_cast<std::size_t>(moment_index(diff));
      const double c = binomial(ka.w, kb.w) * binomial(ka.x, kb.x) * binomial(ka.y, kb.y) * binomial(ka.z, kb.z);
      const cplx coef = c * noise[g];
      for (std::size_t j = 0; j <= b; ++j) inv.k[a][j] -= coef * inv.k[b][j];
      for (std::size_t h = 1; h < n; ++h)
        for (std::size_t j = 0; j <= b; ++j) inv.dk[h][a][j] -= coef * inv.dk[h][b][j];
      for (std::size_t j = 0; j <= b; ++j) inv.dk[g][a][j] -= c * inv.k[b][j];
    }
  }
  return inv;
}

}  // namespace detail

/// Signal moments from measured and vacuum-reference statistics. Errors are
/// exact first-order propagation of both shot sets (the full monomial
/// covariance is used, not only the diagonal).
inline MomentSet subtract_noise(const ShotStatistics& signal, const ShotStatistics& reference, int max_order = 4) {
  if (max_order < 0 || max_order > 4) throw DimensionError("subtract_noise: max_order must be within 0..4");
  const auto inv = detail::build_inversion(reference.mean, max_order);
  const std::size_t n = inv.keys.size();
  MomentSet out(max_order);
  for (std::size_t a = 0; a < n; ++a) {
    cplx v = 0.0;
    for (std::size_t b = 0; b <= a; ++b) v += inv.k[a][b] * signal.mean[b];
    out.value[a] = v;
    // reference influence: dm_a/dN_g for each noise key g
    std::vector<cplx> jac(n, 0.0);
    for (std::size_t g = 1; g < n; ++g) {
      cplx d = 0.0;
      for (std::size_t b = 0; b <= a; ++b) d += inv.dk[g][a][b] * signal.mean[b];
      jac[g] = d;
    }
    const double var = detail::linear_variance(signal, inv.keys, inv.k[a]) +
                       detail::linear_variance(reference, inv.keys, jac);
    out.stderr[a] = std::sqrt(var);
  }
  return out;
}

/// MomentSet-only variant: same recursion, errors combined in quadrature
/// from the listed standard errors (moment correlations are not available).
inline MomentSet subtract_noise(const MomentSet& raw, const MomentSet& noise_ref) {
  if (noise_ref.max_order < raw.max_order) throw DimensionError("subtract_noise: noise reference lacks required orders");
  std::vector<cplx> noise(moment_keys(detail::kMaxTableOrder).size(), 0.0);
  for (std::size_t i = 0; i < noise_ref.size(); ++i) noise[i] = noise_ref.value[i];
  const auto inv = detail::build_inversion(noise, raw.max_order);
  const std::size_t n = inv.keys.size();
  MomentSet out(raw.max_order);
  for (std::size_t a = 0; a < n; ++a) {
    cplx v = 0.0;
    double var = 0.0;
    for (std::size_t b = 0; b <= a; ++b) {
      v += inv.k[a][b] * raw.value[b];
      var += std::norm(inv.k[a][b]) * raw.stderr[b] * raw.stderr[b];
    }
    for (std::size_t g = 1; g < n; ++g) {
      cplx d = 0.0;
      for (std::size_t b = 0; b <= a; ++b) d += inv.dk[g][a][b] * raw.value[b];
      var += std::norm(d) * noise_ref.stderr[g] * noise_ref.stderr[g];
    }
    out.value[a] = v;
    out.stderr[a] = std::sqrt(var);
  }
  return out;
}

/// Divides each entry by gain^(order/2).
inline MomentSet normalize_gain(const MomentSet& m, double gain) {
  if (!(gain > 0.0)) throw DimensionError("normalize_gain: gain must be positive");
  MomentSet out = m;
  const auto keys = moment_keys(m.max_order);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double f = std::pow(gain, -0.5 * keys[i].order());
    out.value[i] *= f;
    out.stderr[i] *= f;
  }
  return out;
}

/// Identity for shots already referred to the input.
inline MomentSet normalize_gain(const MomentSet& m, const AmplifierModel& amp, bool referred_to_input = false) {
  return referred_to_input ? m : normalize_gain(m, amp.gain);
}

/// Signal and reference shots to normalized signal moments.
inline MomentSet estimate_moments(const ShotSet& signal, const ShotSet& reference, std::size_t threads = 1) {
  if (signal.referred_to_input != reference.referred_to_input)
    throw DimensionError("estimate_moments: signal and reference recorded in different units");
  const auto m = subtract_noise(shot_statistics(signal, threads), shot_statistics(reference, threads));
  return normalize_gain(m, signal.amplifier, signal.referred_to_input);
}

// ---------------------------------------------------------------- MLE

struct MleOptions {
  int starts = 8;
  int max_iterations = 3000;
  double gradient_tol = 1e-8;
  double chi2_change_tol = 1e-12;  // relative to max(1, chi2)
  std::uint64_t seed = 0x6d6c65;   // random starting points
  std::size_t threads = 1;
};

struct MleResult {
  TwoModeState state;
  double chi2 = 0.0;
  int dof = 0;
  int data_points = 0;
  int iterations = 0;
  int best_start = 0;
  bool converged = false;
  Eigen::VectorXd params;
};

namespace detail {

inline constexpr int kCholParams = 36;

/// Lower-triangular T from 6 real diagonal and 15 complex sub-diagonal entries.
inline CMatrix unpack_t(const Eigen::VectorXd& p) {
  CMatrix t = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
  int q = 0;
  for (int i = 0; i < kTwoModeDim; ++i) t(i, i) = p(q++);
  for (int i = 1; i < kTwoModeDim; ++i)
    for (int j = 0; j < i; ++j) {
      t(i, j) = cplx(p(q), p(q + 1));
      q += 2;
    }
  return t;
}

inline Eigen::VectorXd pack_t(const CMatrix& t) {
  Eigen::VectorXd p(kCholParams);
  int q = 0;
  for (int i = 0; i < kTwoModeDim; ++i) p(q++) = std::real(t(i, i));
  for (int i = 1; i < kTwoModeDim; ++i)
    for (int j = 0; j < i; ++j) {
      p(q++) = std::real(t(i, j));
      p(q++) = std::imag(t(i, j));
    }
  return p;
}

inline CMatrix rho_from_params(const Eigen::VectorXd& p) {
  const CMatrix t = unpack_t(p);
  const CMatrix r = t.adjoint() * t;
  const double tr = std::real(r.trace());
  if (!(tr > 0.0)) return CMatrix::Identity(kTwoModeDim, kTwoModeDim) / kTwoModeDim;
  return r / tr;
}

/// Lower-triangular T with T^dag T = rho (rho made positive definite first).
inline Eigen::VectorXd params_from_rho(const CMatrix& rho) {
  CMatrix r = psd_project(rho);
  r = 0.999 * r + 0.001 * CMatrix::Identity(kTwoModeDim, kTwoModeDim) / kTwoModeDim;
  // reversing the basis turns the Cholesky factor into the needed triangle
  CMatrix rev = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
  for (int i = 0; i < kTwoModeDim; ++i)
    for (int j = 0; j < kTwoModeDim; ++j) rev(i, j) = r(kTwoModeDim - 1 - i, kTwoModeDim - 1 - j);
  const CMatrix l = Eigen::LLT<CMatrix>(rev).matrixL();
  CMatrix u = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
  for (int i = 0; i < kTwoModeDim; ++i)
    for (int j = 0; j < kTwoModeDim; ++j) u(i, j) = l(kTwoModeDim - 1 - i, kTwoModeDim - 1 - j);
  return pack_t(u.adjoint());
}

/// Whitened linear model: data = A h(rho) with h the 36 real coordinates of
/// the Hermitian matrix rho (diagonal, then Re/Im of the upper triangle).
struct MomentModel {
  Eigen::MatrixXd a;
  Eigen::VectorXd data;
  int points = 0;

  static Eigen::VectorXd hermitian_coords(const CMatrix& r) {
    Eigen::VectorXd h(kCholParams);
    int q = 0;
    for (int i = 0; i < kTwoModeDim; ++i) h(q++) = std::real(r(i, i));
    for (int i = 0; i < kTwoModeDim; ++i)
      for (int j = i + 1; j < kTwoModeDim; ++j) {
        h(q++) = std::real(r(i, j));
        h(q++) = std::imag(r(i, j));
      }
    return h;
  }
  static CMatrix from_coords(const Eigen::VectorXd& h) {
    CMatrix r = CMatrix::Zero(kTwoModeDim, kTwoModeDim);
    int q = 0;
    for (int i = 0; i < kTwoModeDim; ++i) r(i, i) = h(q++);
    for (int i = 0; i < kTwoModeDim; ++i)
      for (int j = i + 1; j < kTwoModeDim; ++j) {
        r(i, j) = cplx(h(q), h(q + 1));
        r(j, i) = std::conj(r(i, j));
        q += 2;
      }
    return r;
  }

  explicit MomentModel(const MomentSet& m) {
    const auto keys = moment_keys(m.max_order);
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> vals;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const MomentKey& k = keys[i];
      if (k.order() == 0) continue;
      const std::size_t j = static_cast<std::size_t>(moment_index(k.conjugate()));
      if (j < i) continue;  // keep one representative of each conjugate pair
      const double s = m.stderr[i];
      if (!(s > 0.0)) throw DimensionError("mle_reconstruct: moment errors must be positive");
      // Tr(rho O) as a linear function of the Hermitian coordinates of rho
      const CMatrix o = moment_operator(k);
      Eigen::VectorXd re(kCholParams), im(kCholParams);
      for (int c = 0; c < kCholParams; ++c) {
        const cplx v = (from_coords(Eigen::VectorXd::Unit(kCholParams, c)) * o).trace();
        re(c) = std::real(v);
        im(c) = std::imag(v);
      }
      if (k.self_conjugate()) {
        rows.push_back(re / s);
        vals.push_back(std::real(m.value[i]) / s);
      } else {
        const double sc = s / std::sqrt(2.0);
        rows.push_back(re / sc);
        vals.push_back(std::real(m.value[i]) / sc);
        rows.push_back(im / sc);
        vals.push_back(std::imag(m.value[i]) / sc);
      }
    }
    points = static_cast<int>(rows.size());
    a.resize(points, kCholParams);
    data.resize(points);
    for (int r = 0; r < points; ++r) {
      a.row(r) = rows[static_cast<std::size_t>(r)].transpose();
      data(r) = vals[static_cast<std::size_t>(r)];
    }
  }

  double chi2(const Eigen::VectorXd& p) const {
    return (a * hermitian_coords(rho_from_params(p)) - data).squaredNorm();
  }

  /// Least-squares linear inversion followed by positivity projection.
  CMatrix linear_estimate() const {
    const Eigen::VectorXd h = a.colPivHouseholderQr().solve(data);
    CMatrix r = from_coords(h);
    const double tr = std::real(r.trace());
    // the vacuum population is unconstrained by moments; take it from normalization
    r(0, 0) += 1.0 - tr;
    return psd_project(r);
  }
};

struct BfgsOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

template <class F>
Eigen::VectorXd central_gradient(const F& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
    y(i) = x(i) + h;
    const double fp = f(y);
    y(i) = x(i) - h;
    const double fm = f(y);
    y(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

template <class F>
BfgsOutcome bfgs(const F& f, Eigen::VectorXd x, const MleOptions& opt) {
  const Eigen::Index n = x.size();
  double fx = f(x);
  Eigen::VectorXd g = central_gradient(f, x);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  BfgsOutcome out;
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it + 1;
    if (g.norm() < opt.gradient_tol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd d = -hinv * g;
    if (d.dot(g) >= 0.0) {
      hinv.setIdentity();
      d = -g;
    }
    double step = 1.0;
    Eigen::VectorXd xn;
    double fn = fx;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = x + step * d;
      fn = f(xn);
      if (fn <= fx + 1e-4 * step * d.dot(g)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // the line search stalls at round-off level: treat as converged
      out.converged = true;
      break;
    }
    const Eigen::VectorXd gn = central_gradient(f, xn);
    const Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    const double change = fx - fn;
    x = xn;
    g = gn;
    const double prev = fx;
    fx = fn;
    if (sy > 1e-300) {
      if (!scaled) {
        hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
      hinv = (id - rho * s * y.transpose()) * hinv * (id - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (std::abs(change) < opt.chi2_change_tol * std::max(1.0, prev)) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.f = fx;
  return out;
}

}  // namespace detail

/// Maximum-likelihood state for Gaussian moment errors: minimizes the
/// weighted squared deviation from the listed moments over rho = T^dag T / Tr
/// (T lower-triangular). Conjugate duplicates are counted once.
inline MleResult mle_reconstruct(const MomentSet& m, const MleOptions& opt = {},
                                 const Eigen::VectorXd* warm_start = nullptr) {
  const detail::MomentModel model(m);
  auto f = [&](const Eigen::VectorXd& p) { return model.chi2(p); };
  std::vector<Eigen::VectorXd> starts;
  if (warm_start) {
    starts.push_back(*warm_start);
  } else {
    starts.push_back(detail::params_from_rho(model.linear_estimate()));
    Stream rng(opt.seed, 0);
    for (int s = 1; s < opt.starts; ++s) {
      Eigen::VectorXd p(detail::kCholParams);
      for (int i = 0; i < detail::kCholParams; ++i) p(i) = rng.normal();
      starts.push_back(p);
    }
  }
  std::vector<detail::BfgsOutcome> runs(starts.size());
  parallel_for(starts.size(), opt.threads, [&](std::size_t s) { runs[s] = detail::bfgs(f, starts[s], opt); });
  std::size_t best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s)
    if (runs[s].f < runs[best].f) best = s;
  MleResult r;
  r.state = {detail::rho_from_params(runs[best].x)};
  r.state.rho = 0.5 * (r.state.rho + r.state.rho.adjoint());
  r.chi2 = runs[best].f;
  r.data_points = model.points;
  r.dof = model.points - (detail::kCholParams - 1);
  r.iterations = runs[best].iterations;
  r.best_start = static_cast<int>(best);
  r.converged = runs[best].converged;
  r.params = runs[best].x;
  return r;
}

enum class Target { right, left };

inline double target_fidelity(const TwoModeState& s, Target t) {
  const int k = t == Target::right ? two_mode_index(0, 1) : two_mode_index(1, 0);
  return std::clamp(std::real(s.rho(k, k)), 0.0, 1.0);
}

struct FidelityReport {
  double fidelity = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> samples;
};

/// Fidelity to |01> (right) or |10> (left) with a 95% percentile interval from
/// a parametric bootstrap: each resample perturbs the moments by their
/// errors and is refit from the best-fit parameters.
inline FidelityReport fidelity_report(const MomentSet& m, const MleResult& fit, Target target, int resamples = 200,
                                      std::uint64_t seed = 1, std::size_t threads = 1) {
  FidelityReport rep;
  rep.fidelity = target_fidelity(fit.state, target);
  if (resamples <= 0) {
    rep.ci_low = rep.ci_high = rep.fidelity;
    return rep;
  }
  const auto keys = moment_keys(m.max_order);
  rep.samples.resize(static_cast<std::size_t>(resamples));
  MleOptions single;
  single.starts = 1;
  parallel_for(rep.samples.size(), threads, [&](std::size_t r) {
    Stream rng(seed, r);
    MomentSet p = m;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const std::size_t j = static_cast<std::size_t>(moment_index(keys[i].conjugate()));
      if (keys[i].order() == 0 || j < i) continue;
      if (keys[i].self_conjugate()) {
        p.value[i] += m.stderr[i] * rng.normal();
      } else {
        const double sc = m.stderr[i] / std::sqrt(2.0);
        p.value[i] += cplx(sc * rng.normal(), sc * rng.normal());
        p.value[j] = std::conj(p.value[i]);
      }
    }
    rep.samples[r] = target_fidelity(mle_reconstruct(p, single, &fit.params).state, target);
  });
  std::vector<double> sorted = rep.samples;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  rep.ci_low = quantile(0.025);
  rep.ci_high = quantile(0.975);
  return rep;
}

// ------------------------------------------------------------ file I/O

namespace detail {

inline constexpr char kShotMagic[8] = {'W', 'G', 'Q', 'S', 'H', 'O', 'T', 'S'};
inline constexpr std::uint32_t kShotVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw Error("shot file: truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

/// Little-endian binary: magic "WGQSHOTS", version u32, count u64, kind u8,
/// gain f64, noise_L f64, noise_R f64, seed u64, then count x (ReL, ImL, ReR, ImR) f64.
inline void write_shots(std::ostream& os, const ShotSet& s) {
  os.write(detail::kShotMagic, 8);
  detail::put_le<std::uint32_t>(os, detail::kShotVersion);
  detail::put_le<std::uint64_t>(os, s.count());
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
  detail::put_le<double>(os, s.amplifier.gain);
  detail::put_le<double>(os, s.amplifier.added_noise_L);
  detail::put_le<double>(os, s.amplifier.added_noise_R);
  detail::put_le<std::uint64_t>(os, s.seed);
  for (const auto& sh : s.shots) {
    detail::put_le<double>(os, sh.left.real());
    detail::put_le<double>(os, sh.left.imag());
    detail::put_le<double>(os, sh.right.real());
    detail::put_le<double>(os, sh.right.imag());
  }
  if (!os) throw Error("shot file: write failed");
}

/// The format does not record whether values were referred to the input;
/// files written by this library always hold post-amplifier values.
inline ShotSet read_shots(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kShotMagic, 8) != 0) throw Error("shot file: bad magic");
  if (detail::get_le<std::uint32_t>(is) != detail::kShotVersion) throw Error("shot file: unsupported version");
  ShotSet s;
  const auto count = detail::get_le<std::uint64_t>(is);
  const auto kind = detail::get_le<std::uint8_t>(is);
  if (kind > 1) throw Error("shot file: unknown kind");
  s.kind = static_cast<ShotKind>(kind);
  s.amplifier.gain = detail::get_le<double>(is);
  s.amplifier.added_noise_L = detail::get_le<double>(is);
  s.amplifier.added_noise_R = detail::get_le<double>(is);
  s.seed = detail::get_le<std::uint64_t>(is);
  s.shots.resize(count);
  for (auto& sh : s.shots) {
    const double a = detail::get_le<double>(is), b = detail::get_le<double>(is);
    const double c = detail::get_le<double>(is), d = detail::get_le<double>(is);
    sh = {{a, b}, {c, d}};
  }
  return s;
}

inline void write_shots(const std::string& path, const ShotSet& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("shot file: cannot open " + path);
  write_shots(os, s);
}

inline ShotSet read_shots(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("shot file: cannot open " + path);
  return read_shots(is);
}

/// CSV with columns w,x,y,z,re,im,stderr.
inline void write_moments_csv(std::ostream& os, const MomentSet& m) {
  os << "w,x,y,z,re,im,stderr\n";
  const auto keys = moment_keys(m.max_order);
  char buf[160];
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.17g,%.17g,%.17g\n", keys[i].w, keys[i].x, keys[i].y, keys[i].z,
                  m.value[i].real(), m.value[i].imag(), m.stderr[i]);
    os << buf;
  }
}

}  // namespace wgqed::tomography
