#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ssmg/ops.hpp"
#include "ssmg/ssm.hpp"

namespace ssmg {

// Input-dependent selection: per-step (B, C, delta) produced from the input
// sequence by linear projections, optionally conditioned on a query embedding
// concatenated to every step, and the scan that evaluates the resulting
// time-varying recurrence.

template <typename T>
struct SelectionProjectionsT {
  TensorT<T> w_b;       // (d_in, n_state)
  TensorT<T> w_c;       // (d_in, n_state)
  TensorT<T> w_delta;   // (d_in, d_model)
  TensorT<T> bias_delta;  // (d_model,)
  TensorT<T> log_a;     // (d_model, n_state); A = -exp(log_a), always negative
  std::int64_t d_model = 0;
  std::int64_t d_query = 0;  // 0: projections consume x alone; else [x || q]
  std::int64_t n_state = 0;

  std::int64_t d_in() const { return d_model + d_query; }

  TensorT<T> a() const { return neg(exp_op(log_a)); }

  static SelectionProjectionsT init(Rng& rng, std::int64_t d_model, std::int64_t n_state,
                                    std::int64_t d_query, bool requires_grad = true) {
    SelectionProjectionsT p;
    p.d_model = d_model;
    p.n_state = n_state;
    p.d_query = d_query;
    const std::int64_t din = d_model + d_query;
    const double k = 1.0 / std::sqrt(static_cast<double>(din));
    p.w_b = rand_uniform<T>({din, n_state}, rng, -k, k, requires_grad);
    p.w_c = rand_uniform<T>({din, n_state}, rng, -k, k, requires_grad);
    p.w_delta = rand_uniform<T>({din, d_model}, rng, -k, k, requires_grad);
    // timescale bias: softplus(bias) log-uniform in [1e-3, 1e-1]
    p.bias_delta = TensorT<T>::zeros({d_model}, requires_grad);
    for (auto& v : p.bias_delta.data()) {
      const double u = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v = static_cast<T>(std::log(std::expm1(u)));
    }
    // A_n = -(n + 1) at init (real diagonal ladder)
    p.log_a = TensorT<T>::zeros({d_model, n_state}, requires_grad);
    for (std::int64_t d = 0; d < d_model; ++d)
      for (std::int64_t n = 0; n < n_state; ++n)
        p.log_a.data()[d * n_state + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
    return p;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params(const std::string& prefix) const {
    return {{prefix + ".w_b", w_b},
            {prefix + ".w_c", w_c},
            {prefix + ".w_delta", w_delta},
            {prefix + ".bias_delta", bias_delta},
            {prefix + ".log_a", log_a}};
  }
};

template <typename T>
struct SelectedParamsT {
  TensorT<T> b;      // (..., v, l, n_state)
  TensorT<T> c;      // (..., v, l, n_state)
  TensorT<T> delta;  // (..., v, l, d), positive
  TensorT<T> a;      // (d, n_state), negative
  TensorT<T> abar;   // (..., v, l, d, n_state), filled by materialize()
  TensorT<T> bbar;
  bool materialized() const { return abar.defined(); }
};

namespace detail {

// bbar = ((exp(delta a) - 1) / a) * b elementwise over (..., d, n) with the
// series branch near delta*a = 0; custom adjoints for all three inputs.
template <typename T>
TensorT<T> discretize_bbar(const TensorT<T>& delta, const TensorT<T>& a, const TensorT<T>& bsel) {
  // delta (..., L, D), a (D, N), bsel (..., L, N) -> out (..., L, D, N)
  const Shape& ds = delta.shape();
  const std::int64_t d = ds.back();
  const std::int64_t l = ds[ds.size() - 2];
  const std::int64_t n = a.shape()[1];
  if (a.shape()[0] != d)
    throw ShapeError("discretize_bbar: A shape " + shape_str(a.shape()) +
                     " does not match delta " + shape_str(ds));
  const std::int64_t outer = delta.numel() / (l * d);
  Shape oshape = ds;
  oshape.push_back(n);
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const T* pd = delta.data().data();
  const T* pa = a.data().data();
  const T* pb = bsel.data().data();
  T* po = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t t = 0; t < l; ++t)
      for (std::int64_t di = 0; di < d; ++di) {
        const T dv = pd[(o * l + t) * d + di];
        const T* brow = pb + (o * l + t) * n;
        T* orow = po + ((o * l + t) * d + di) * n;
        for (std::int64_t ni = 0; ni < n; ++ni) {
          T ab, bb;
          zoh_entry(pa[di * n + ni], brow[ni], dv, ab, bb);
          orow[ni] = bb;
        }
      }
  if (auto* tp = tape_for<T>({&delta, &a, &bsel})) {
    mark_output(out, tp);
    auto dls = delta.storage(), as = a.storage(), bs = bsel.storage(), os = out.storage();
    const bool dd = delta.differentiable(), da = a.differentiable(), db = bsel.differentiable();
    tp->record([dls, as, bs, os, outer, l, d, n, dd, da, db] {
      if (os->grad.empty()) return;
      const T* g = os->grad.data();
      const T* pd = dls->data.data();
      const T* pa = as->data.data();
      const T* pb = bs->data.data();
      if (dd) dls->alloc_grad();
      if (da) as->alloc_grad();
      if (db) bs->alloc_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t t = 0; t < l; ++t)
          for (std::int64_t di = 0; di < d; ++di) {
            const T dv = pd[(o * l + t) * d + di];
            const T* brow = pb + (o * l + t) * n;
            const T* grow = g + ((o * l + t) * d + di) * n;
            T acc_delta(0);
            for (std::int64_t ni = 0; ni < n; ++ni) {
              const T av = pa[di * n + ni];
              const T z = dv * av;
              const T ea = std::exp(z);
              T dbb_ddelta, dbb_da, braw;
              if (std::abs(static_cast<double>(z)) < kZohSeriesThreshold) {
                braw = dv * (T(1) + z / T(2) + z * z / T(6));
                dbb_ddelta = T(1) + z + z * z / T(2);
                dbb_da = dv * dv * (T(0.5) + z / T(3));
              } else {
                braw = (ea - T(1)) / av;
                dbb_ddelta = ea;
                dbb_da = (dv * ea - braw) / av;
              }
              const T gv = grow[ni];
              if (dd) acc_delta += gv * dbb_ddelta * brow[ni];
              if (da) as->grad[di * n + ni] += gv * dbb_da * brow[ni];
              if (db) bs->grad[(o * l + t) * n + ni] += gv * braw;
            }
            if (dd) dls->grad[(o * l + t) * d + di] += acc_delta;
          }
    });
  }
  return out;
}

// Broadcast a query vector against x's leading axes: q is (d_q,) shared, or
// carries the same leading batch dims as x before the (v, l, d) trio.
template <typename T>
TensorT<T> expand_query(const TensorT<T>& q, const Shape& xshape) {
  Shape target = xshape;
  target.back() = q.shape().back();
  if (q.rank() == 1) return broadcast_to(q, target);
  const std::int64_t nb = static_cast<std::int64_t>(xshape.size()) - 3;
  if (q.rank() != nb + 1)
    throw ShapeError("query shape " + shape_str(q.shape()) + " does not align with input " +
                     shape_str(xshape));
  Shape unsq = q.shape();
  unsq.insert(unsq.end() - 1, 2, 1);  // (batch..., 1, 1, d_q)
  return broadcast_to(reshape(q, unsq), target);
}

}  // namespace detail

template <typename T>
void materialize(SelectedParamsT<T>& p) {
  if (p.materialized()) return;
  Shape unsq = p.delta.shape();
  unsq.push_back(1);
  p.abar = exp_op(mul(reshape(p.delta, unsq), p.a));
  p.bbar = detail::discretize_bbar(p.delta, p.a, p.b);
}

// Algorithm line order: B <- Linear_B(x), C <- Linear_C(x),
// delta <- softplus(Linear_delta(x) + bias), then per-step ZOH discretization.
template <typename T>
SelectedParamsT<T> select_params(const TensorT<T>& x, const SelectionProjectionsT<T>& proj) {
  if (x.shape().back() != proj.d_in())
    throw ShapeError("select_params: input width " + shape_str(x.shape()) +
                     " does not match projections (d_in " + std::to_string(proj.d_in()) + ")");
  SelectedParamsT<T> out;
  out.b = linear(x, proj.w_b);
  out.c = linear(x, proj.w_c);
  out.delta = softplus(linear(x, proj.w_delta, proj.bias_delta));
  out.a = proj.a();
  return out;
}

// Text-controlled variant: every projection consumes [x_t || q], the query
// broadcast to all nodes and steps. The scan itself is unchanged.
template <typename T>
SelectedParamsT<T> select_params_text(const TensorT<T>& x, const TensorT<T>& q,
                                      const SelectionProjectionsT<T>& proj) {
  if (proj.d_query == 0)
    throw ShapeError("select_params_text: projections were built without a query block");
  if (q.shape().back() != proj.d_query)
    throw ShapeError("select_params_text: q dimension " + shape_str(q.shape()) +
                     " != " + std::to_string(proj.d_query));
  q.check_finite("select_params_text: q");
  TensorT<T> qb = detail::expand_query(q, x.shape());
  TensorT<T> xq = concat_axis<T>({x, qb}, x.rank() - 1);
  return select_params(xq, proj);
}

// ---------------------------------------------------------------------------
// Fused selective scan: one tape node evaluating, for each node v and channel
// d independently,
//   h_t = abar_t (*) h_{t-1} + bbar_t x_t,   y_t = <c_t, h_t>,   h_0 = 0,
// with abar/bbar the per-step ZOH pair. Forward runs the prefix-scan schedule
// per lane; the bespoke backward recomputes the discretization and states and
// runs the adjoint recurrence in reverse, so nothing quadratic in L (and no
// (L, D, N) tensor) is ever retained.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct ScanDims {
  std::int64_t bv, l, d, n;
};

template <typename T>
ScanDims<T> scan_dims(const TensorT<T>& x, const SelectedParamsT<T>& p) {
  const Shape& xs = x.shape();
  if (xs.size() < 3) throw ShapeError("selective_scan: input must be (..., v, l, d)");
  ScanDims<T> dims;
  dims.d = xs.back();
  dims.l = xs[xs.size() - 2];
  dims.bv = x.numel() / (dims.l * dims.d);
  dims.n = p.a.shape()[1];
  Shape expect_b = xs;
  expect_b.back() = dims.n;
  if (p.b.shape() != expect_b || p.c.shape() != expect_b)
    throw ShapeError("selective_scan: B/C shape " + shape_str(p.b.shape()) +
                     " does not match input " + shape_str(xs));
  if (p.delta.shape() != xs)
    throw ShapeError("selective_scan: delta shape " + shape_str(p.delta.shape()) +
                     " does not match input " + shape_str(xs));
  if (p.a.shape()[0] != dims.d)
    throw ShapeError("selective_scan: A shape " + shape_str(p.a.shape()) + " for channel width " +
                     std::to_string(dims.d));
  return dims;
}

// bbar_raw = (exp(z)-1)/a or its series; shared by forward and backward.
template <typename T>
inline T bbar_raw_entry(T z, T ea, T a, T dv) {
  if (std::abs(static_cast<double>(z)) < kZohSeriesThreshold)
    return dv * (T(1) + z / T(2) + z * z / T(6));
  return (ea - T(1)) / a;
}

}  // namespace detail

template <typename T>
TensorT<T> selective_scan(const TensorT<T>& x, const SelectedParamsT<T>& params) {
  const auto dims = detail::scan_dims(x, params);
  const std::int64_t bv = dims.bv, l = dims.l, d = dims.d, n = dims.n;
  params.a.check_finite("selective_scan: A");
  params.delta.check_finite("selective_scan: delta");

  TensorT<T> out = TensorT<T>::zeros(x.shape());
  {
    const T* px = x.data().data();
    const T* pd = params.delta.data().data();
    const T* pa = params.a.data().data();
    const T* pb = params.b.data().data();
    const T* pc = params.c.data().data();
    T* po = out.data().data();
    // aligned scratch keeps the vectorized exp bit-reproducible across calls
    Eigen::Array<T, Eigen::Dynamic, 1> zbuf(l * n), eabuf(l * n);
    std::vector<T> hb(l * n), ld(l);
    T* z = zbuf.data();
    T* ea = eabuf.data();
    for (std::int64_t g = 0; g < bv; ++g) {
      const T* blane = pb + g * l * n;
      const T* clane = pc + g * l * n;
      for (std::int64_t di = 0; di < d; ++di) {
        const T* arow = pa + di * n;
        for (std::int64_t t = 0; t < l; ++t) ld[t] = pd[(g * l + t) * d + di];
        for (std::int64_t t = 0; t < l; ++t)
          for (std::int64_t ni = 0; ni < n; ++ni) z[t * n + ni] = ld[t] * arow[ni];
        eabuf = zbuf.exp();
        for (std::int64_t t = 0; t < l; ++t) {
          const T xv = px[(g * l + t) * d + di];
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const std::int64_t i = t * n + ni;
            hb[i] = detail::bbar_raw_entry(z[i], ea[i], arow[ni], ld[t]) * blane[t * n + ni] * xv;
          }
        }
        // prefix scan over (ea, hb); h_0 = 0 so the inclusive offset is h_t
        detail::blelloch_affine_inclusive(ea, hb.data(), l, n);
        for (std::int64_t t = 0; t < l; ++t) {
          T acc(0);
          const T* crow = clane + t * n;
          const T* hrow = hb.data() + t * n;
          for (std::int64_t ni = 0; ni < n; ++ni) acc += crow[ni] * hrow[ni];
          po[(g * l + t) * d + di] = acc;
        }
      }
    }
  }

  if (auto* tp = detail::tape_for<T>({&x, &params.delta, &params.a, &params.b, &params.c})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), ds = params.delta.storage(), as = params.a.storage(),
         bs = params.b.storage(), cs = params.c.storage(), os = out.storage();
    const bool dx = x.differentiable(), ddel = params.delta.differentiable(),
               da = params.a.differentiable(), dbp = params.b.differentiable(),
               dcp = params.c.differentiable();
    tp->record([xs, ds, as, bs, cs, os, bv, l, d, n, dx, ddel, da, dbp, dcp] {
      if (os->grad.empty()) return;
      const T* gy = os->grad.data();
      const T* px = xs->data.data();
      const T* pd = ds->data.data();
      const T* pa = as->data.data();
      const T* pb = bs->data.data();
      const T* pc = cs->data.data();
      if (dx) xs->alloc_grad();
      if (ddel) ds->alloc_grad();
      if (da) as->alloc_grad();
      if (dbp) bs->alloc_grad();
      if (dcp) cs->alloc_grad();

      Eigen::Array<T, Eigen::Dynamic, 1> zbuf(l * n), eabuf(l * n);
      std::vector<T> braw(l * n), h(l * n), ld(l), lam(n);
      T* z = zbuf.data();
      T* ea = eabuf.data();
      for (std::int64_t g = 0; g < bv; ++g) {
        const T* blane = pb + g * l * n;
        const T* clane = pc + g * l * n;
        for (std::int64_t di = 0; di < d; ++di) {
          const T* arow = pa + di * n;
          for (std::int64_t t = 0; t < l; ++t) ld[t] = pd[(g * l + t) * d + di];
          for (std::int64_t t = 0; t < l; ++t)
            for (std::int64_t ni = 0; ni < n; ++ni) z[t * n + ni] = ld[t] * arow[ni];
          eabuf = zbuf.exp();
          // recompute states sequentially
          for (std::int64_t t = 0; t < l; ++t) {
            const T xv = px[(g * l + t) * d + di];
            for (std::int64_t ni = 0; ni < n; ++ni) {
              const std::int64_t i = t * n + ni;
              braw[i] = detail::bbar_raw_entry(z[i], ea[i], arow[ni], ld[t]);
              const T hprev = t ? h[i - n] : T(0);
              h[i] = ea[i] * hprev + braw[i] * blane[t * n + ni] * xv;
            }
          }
          // adjoint recurrence, reverse sweep
          std::fill(lam.begin(), lam.end(), T(0));
          for (std::int64_t t = l - 1; t >= 0; --t) {
            const T gyv = gy[(g * l + t) * d + di];
            const T xv = px[(g * l + t) * d + di];
            T acc_x(0), acc_delta(0);
            for (std::int64_t ni = 0; ni < n; ++ni) {
              const std::int64_t i = t * n + ni;
              lam[ni] = (t + 1 < l ? ea[i + n] * lam[ni] : T(0)) + clane[t * n + ni] * gyv;
              const T lv = lam[ni];
              const T bn = blane[t * n + ni];
              const T hprev = t ? h[i - n] : T(0);
              if (dcp) cs->grad[(g * l + t) * n + ni] += gyv * h[i];
              if (dbp) bs->grad[(g * l + t) * n + ni] += lv * braw[i] * xv;
              if (dx) acc_x += lv * braw[i] * bn;
              if (ddel || da) {
                const T gea = lv * hprev;          // dL/d abar
                const T gbraw = lv * bn * xv;      // dL/d bbar_raw
                T dbr_ddelta, dbr_da;
                if (std::abs(static_cast<double>(z[i])) < kZohSeriesThreshold) {
                  dbr_ddelta = T(1) + z[i] + z[i] * z[i] / T(2);
                  dbr_da = ld[t] * ld[t] * (T(0.5) + z[i] / T(3));
                } else {
                  dbr_ddelta = ea[i];
                  dbr_da = (ld[t] * ea[i] - braw[i]) / arow[ni];
                }
                if (ddel) acc_delta += gea * arow[ni] * ea[i] + gbraw * dbr_ddelta;
                if (da) as->grad[di * n + ni] += gea * ld[t] * ea[i] + gbraw * dbr_da;
              }
            }
            if (dx) xs->grad[(g * l + t) * d + di] += acc_x;
            if (ddel) ds->grad[(g * l + t) * d + di] += acc_delta;
          }
        }
      }
    });
  }
  return out;
}

// Tape-path reference: the same computation expressed entirely through
// primitive recorded operations on the materialized (abar, bbar). Quadratic
// bookkeeping in L; correctness oracle for the fused scan at small sizes.
template <typename T>
TensorT<T> selective_scan_reference(const TensorT<T>& x, const SelectedParamsT<T>& params) {
  const auto dims = detail::scan_dims(x, params);
  SelectedParamsT<T> p = params;
  materialize(p);
  const std::int64_t laxis = x.rank() - 2;
  Shape hshape = x.shape();               // (..., v, l, d)
  hshape.erase(hshape.begin() + laxis);   // (..., v, d)
  hshape.push_back(dims.n);               // (..., v, d, n)
  TensorT<T> h = TensorT<T>::zeros(hshape);
  std::vector<TensorT<T>> ys;
  for (std::int64_t t = 0; t < dims.l; ++t) {
    TensorT<T> at = slice_axis(p.abar, laxis, t, 1);  // (..., v, 1, d, n)
    TensorT<T> bt = slice_axis(p.bbar, laxis, t, 1);
    Shape sq = hshape;
    TensorT<T> at2 = reshape(at, sq), bt2 = reshape(bt, sq);
    TensorT<T> xt = slice_axis(x, laxis, t, 1);  // (..., v, 1, d)
    Shape xsq = hshape;
    xsq.back() = 1;
    TensorT<T> xt2 = reshape(xt, xsq);  // (..., v, d, 1)
    h = add(mul(at2, h), mul(bt2, xt2));
    TensorT<T> ct = slice_axis(p.c, laxis, t, 1);  // (..., v, 1, n)
    Shape csq = ct.shape();
    csq.erase(csq.begin() + laxis);
    csq.insert(csq.end() - 1, 1);  // (..., v, 1, n)
    TensorT<T> yt = sum_axis(mul(h, reshape(ct, csq)), h.rank() - 1);  // (..., v, d)
    Shape yshape = yt.shape();
    yshape.insert(yshape.end() - 1, 1);  // (..., v, 1, d)
    ys.push_back(reshape(yt, yshape));
  }
  return concat_axis(ys, laxis);
}

// Executable form of the gated-recurrence identity: with n_state = 1, a = -1,
// b = c = 1 and delta = softplus(z_t), ZOH gives abar = 1 - sigmoid(z_t) and
// bbar = sigmoid(z_t), i.e. h_t = (1 - g_t) h_{t-1} + g_t x_t with gate
// g_t = sigmoid(Linear_delta(x_t, q)). Note: read literally as a fixed-point,
// "h_t = (1 - g_t) h_{t-1} + g_t h_t" collapses to h_t = h_{t-1}; the
// executable reference uses the gated form driven by the current input x_t,
// which is the reading consistent with the ZOH correspondence above.
template <typename T>
std::vector<T> gated_rnn_reference(const std::vector<T>& x, const std::vector<T>& q,
                                   const std::vector<T>& w_delta, T bias_delta,
                                   std::int64_t n_state = 1) {
  if (n_state != 1) throw ValueError("gated_rnn_reference: defined only for n_state = 1");
  if (w_delta.size() != 1 + q.size())
    throw ShapeError("gated_rnn_reference: W_delta must act on [x || q] (" +
                     std::to_string(1 + q.size()) + " inputs, got " +
                     std::to_string(w_delta.size()) + ")");
  std::vector<T> h(x.size());
  T qdot(0);
  for (std::size_t i = 0; i < q.size(); ++i) qdot += w_delta[i + 1] * q[i];
  T prev(0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const T g = detail::stable_sigmoid(w_delta[0] * x[t] + qdot + bias_delta);
    prev = (T(1) - g) * prev + g * x[t];
    h[t] = prev;
  }
  return h;
}

}  // namespace ssmg
