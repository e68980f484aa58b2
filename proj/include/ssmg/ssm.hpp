#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ssmg/common.hpp"

namespace ssmg {

// Non-selective state-space substrate: ZOH discretization of a diagonal
// continuous system, the exact linear recurrence, its global-convolution form
// for static parameters, and a work-efficient prefix scan over time-varying
// affine recurrence steps.

// Series branch threshold for the B discretization; below it the exact
// (exp(z)-1)/z form is replaced by its truncated Taylor expansion so that
// z -> 0 (including a == 0 exactly) stays well-defined and continuous.
inline constexpr double kZohSeriesThreshold = 1e-6;

template <typename T>
struct ContinuousSsmParamsT {
  std::vector<T> a;  // diagonal of the state matrix, strictly negative at init
  std::vector<T> b;
  std::vector<T> c;
  T delta;  // positive timescale
};

template <typename T>
struct DiscreteSsmParamsT {
  std::vector<T> abar;
  std::vector<T> bbar;
};

// One step of h := a (*) h + b with elementwise multiplier/offset.
template <typename T>
struct AffineStepT {
  std::vector<T> a;
  std::vector<T> b;
};

using ContinuousSsmParams = ContinuousSsmParamsT<double>;
using DiscreteSsmParams = DiscreteSsmParamsT<double>;
using AffineStep = AffineStepT<double>;

// Scalar ZOH rule for one diagonal entry:
//   abar = exp(delta a),  bbar = ((exp(delta a) - 1) / a) b
// which equals (delta a)^{-1} (exp(delta a) - I) delta b in the diagonal case.
template <typename T>
inline void zoh_entry(T a, T b, T delta, T& abar, T& bbar) {
  const T z = delta * a;
  abar = std::exp(z);
  if (std::abs(static_cast<double>(z)) < kZohSeriesThreshold)
    bbar = delta * b * (T(1) + z / T(2) + z * z / T(6));
  else
    bbar = (abar - T(1)) / a * b;
}

template <typename T>
DiscreteSsmParamsT<T> discretize_zoh(const std::vector<T>& a, const std::vector<T>& b, T delta) {
  if (!(delta > T(0))) throw ValueError("discretize_zoh: delta must be positive");
  if (a.size() != b.size())
    throw ShapeError("discretize_zoh: A has " + std::to_string(a.size()) + " entries, B has " +
                     std::to_string(b.size()));
  DiscreteSsmParamsT<T> out;
  out.abar.resize(a.size());
  out.bbar.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    zoh_entry(a[i], b[i], delta, out.abar[i], out.bbar[i]);
  return out;
}

template <typename T>
struct ScanResultT {
  std::vector<T> y;       // length L
  std::vector<T> h_last;  // length N
};

// Exact reference semantics of the discrete recurrence
//   h_t = abar_t (*) h_{t-1} + bbar_t x_t,  y_t = <c_t, h_t>.
template <typename T>
ScanResultT<T> scan_sequential(const std::vector<DiscreteSsmParamsT<T>>& params,
                               const std::vector<std::vector<T>>& c, const std::vector<T>& x,
                               std::vector<T> h0 = {}) {
  const std::size_t L = x.size();
  if (params.size() != L || c.size() != L)
    throw ShapeError("scan_sequential: got " + std::to_string(params.size()) + " params, " +
                     std::to_string(c.size()) + " output maps, " + std::to_string(L) + " inputs");
  const std::size_t N = L ? params[0].abar.size() : h0.size();
  if (h0.empty()) h0.assign(N, T(0));
  ScanResultT<T> out;
  out.y.resize(L);
  out.h_last = std::move(h0);
  for (std::size_t t = 0; t < L; ++t) {
    const auto& p = params[t];
    T acc(0);
    for (std::size_t n = 0; n < N; ++n) {
      out.h_last[n] = p.abar[n] * out.h_last[n] + p.bbar[n] * x[t];
      acc += c[t][n] * out.h_last[n];
    }
    out.y[t] = acc;
  }
  return out;
}

// Structured kernel of the static (LTI) system: (c bbar, c abar bbar, ...).
template <typename T>
std::vector<T> lti_kernel(const std::vector<T>& abar, const std::vector<T>& bbar,
                          const std::vector<T>& c, std::int64_t len) {
  if (len <= 0) throw ValueError("lti_kernel: length must be positive");
  const std::size_t N = abar.size();
  std::vector<T> pow(bbar);  // abar^j (*) bbar
  std::vector<T> k(static_cast<std::size_t>(len), T(0));
  for (std::int64_t j = 0; j < len; ++j) {
    T acc(0);
    for (std::size_t n = 0; n < N; ++n) acc += c[n] * pow[n];
    k[static_cast<std::size_t>(j)] = acc;
    for (std::size_t n = 0; n < N; ++n) pow[n] *= abar[n];
  }
  return k;
}

// Causal convolution y_t = sum_{tau <= t} k[t - tau] x[tau]. A kernel longer
// than the sequence is truncated to the sequence length (taps past the start
// of the signal can never contribute).
template <typename T>
std::vector<T> conv_apply(const std::vector<T>& x, const std::vector<T>& k) {
  const std::size_t L = x.size();
  const std::size_t K = std::min(k.size(), L);
  std::vector<T> y(L, T(0));
  if (K == 0) return y;
  for (std::size_t t = 0; t < L; ++t) {
    T acc(0);
    const std::size_t jmax = std::min(K - 1, t);
    for (std::size_t j = 0; j <= jmax; ++j) acc += k[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

inline AffineStep compose_affine(const AffineStep& second, const AffineStep& first) {
  // apply `first`, then `second`
  AffineStep out;
  const std::size_t n = second.a.size();
  out.a.resize(n);
  out.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.a[i] = second.a[i] * first.a[i];
    out.b[i] = second.a[i] * first.b[i] + second.b[i];
  }
  return out;
}

namespace detail {

// In-place Blelloch scan over L affine steps of width N stored as flat
// row-major a[L][N], b[L][N]. On return position t holds the inclusive prefix
// composition step_t o ... o step_1. O(L) compositions, O(log L) depth.
template <typename T>
void blelloch_affine_inclusive(T* a, T* b, std::int64_t L, std::int64_t N) {
  if (L <= 1) return;
  const std::uint64_t P = std::bit_ceil(static_cast<std::uint64_t>(L));
  // padded work arrays; identity step is (a=1, b=0)
  std::vector<T> wa(P * N, T(1)), wb(P * N, T(0));
  std::copy(a, a + L * N, wa.begin());
  std::copy(b, b + L * N, wb.begin());
  // keep original elements for the exclusive->inclusive fixup
  std::vector<T> oa(a, a + L * N), ob(b, b + L * N);

  auto combine_into = [&](std::int64_t dst, std::int64_t src_first) {
    // node[dst] := node[dst] o node[src_first]   (src_first applied first)
    T* ad = wa.data() + dst * N;
    T* bd = wb.data() + dst * N;
    const T* af = wa.data() + src_first * N;
    const T* bf = wb.data() + src_first * N;
    for (std::int64_t n = 0; n < N; ++n) {
      bd[n] = ad[n] * bf[n] + bd[n];
      ad[n] = ad[n] * af[n];
    }
  };

  // up-sweep
  for (std::uint64_t s = 2; s <= P; s <<= 1)
    for (std::uint64_t i = s - 1; i < P; i += s)
      combine_into(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i - s / 2));

  // down-sweep (exclusive prefixes)
  {
    T* ar = wa.data() + (P - 1) * N;
    T* br = wb.data() + (P - 1) * N;
    std::fill(ar, ar + N, T(1));
    std::fill(br, br + N, T(0));
  }
  for (std::uint64_t s = P; s >= 2; s >>= 1)
    for (std::uint64_t i = s - 1; i < P; i += s) {
      T* al = wa.data() + (i - s / 2) * N;
      T* bl = wb.data() + (i - s / 2) * N;
      T* ai = wa.data() + i * N;
      T* bi = wb.data() + i * N;
      for (std::int64_t n = 0; n < N; ++n) {
        const T ta = al[n], tb = bl[n];
        al[n] = ai[n];
        bl[n] = bi[n];
        // right child prefix = (saved left up-sweep) o (prefix before parent)
        bi[n] = ta * bi[n] + tb;
        ai[n] = ta * ai[n];
      }
    }

  // inclusive[t] = element_t o exclusive[t]
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t n = 0; n < N; ++n) {
      const std::int64_t i = t * N + n;
      b[i] = oa[i] * wb[t * N + n] + ob[i];
      a[i] = oa[i] * wa[t * N + n];
    }
}

}  // namespace detail

// All prefix states h_1..h_L of the affine recurrence, computed with the
// work-efficient parallel-scan schedule (identical result to the sequential
// recurrence up to roundoff).
template <typename T>
std::vector<std::vector<T>> scan_parallel(const std::vector<AffineStepT<T>>& steps,
                                          const std::vector<T>& h0) {
  const std::int64_t L = static_cast<std::int64_t>(steps.size());
  if (L < 1) throw ValueError("scan_parallel: need at least one step");
  const std::int64_t N = static_cast<std::int64_t>(steps[0].a.size());
  if (static_cast<std::int64_t>(h0.size()) != N)
    throw ShapeError("scan_parallel: h0 has " + std::to_string(h0.size()) + " entries for state size " +
                     std::to_string(N));
  std::vector<T> a(L * N), b(L * N);
  for (std::int64_t t = 0; t < L; ++t) {
    std::copy(steps[t].a.begin(), steps[t].a.end(), a.begin() + t * N);
    std::copy(steps[t].b.begin(), steps[t].b.end(), b.begin() + t * N);
  }
  detail::blelloch_affine_inclusive(a.data(), b.data(), L, N);
  std::vector<std::vector<T>> h(L, std::vector<T>(N));
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t n = 0; n < N; ++n) h[t][n] = a[t * N + n] * h0[n] + b[t * N + n];
  return h;
}

}  // namespace ssmg
