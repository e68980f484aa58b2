#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "ssmg/tape.hpp"
#include "ssmg/tensor.hpp"

namespace ssmg {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Returns the recording tape if any input participates in differentiation,
// checking that no input belongs to a different tape.
template <typename T>
TapeT<T>* tape_for(std::initializer_list<const TensorT<T>*> inputs) {
  TapeT<T>* tp = active_tape<T>();
  if (!tp) return nullptr;
  bool any = false;
  for (const auto* t : inputs) {
    if (!t->defined() || !t->differentiable()) continue;
    any = true;
    if (t->tape() && t->tape() != tp)
      throw Error("operation mixes tensors recorded on different tapes");
  }
  return any ? tp : nullptr;
}

template <typename T>
void mark_output(TensorT<T>& out, TapeT<T>* tp) {
  out.storage()->diff = true;
  out.storage()->tape = tp;
}

// Odometer walk over a row-major output shape with two (possibly broadcast)
// operand stride maps. body(out_flat, off_a, off_b) is called per element of
// the trailing axis loop.
template <typename F>
void broadcast_walk(const Shape& oshape, const Shape& astr, const Shape& bstr, F&& body) {
  const std::int64_t total = numel_of(oshape);
  if (total == 0) return;
  const std::size_t r = oshape.size();
  if (r == 0) {
    body(0, 0, 0);
    return;
  }
  const std::int64_t inner = oshape[r - 1];
  const std::int64_t sa = astr[r - 1], sb = bstr[r - 1];
  Shape idx(r, 0);
  std::int64_t oa = 0, ob = 0, of = 0;
  while (true) {
    std::int64_t a = oa, b = ob;
    for (std::int64_t i = 0; i < inner; ++i, a += sa, b += sb) body(of + i, a, b);
    of += inner;
    // advance odometer over leading axes
    std::size_t ax = r - 1;
    bool done = (r == 1);
    while (ax-- > 0) {
      oa += astr[ax];
      ob += bstr[ax];
      if (++idx[ax] < oshape[ax]) break;
      oa -= astr[ax] * oshape[ax];
      ob -= bstr[ax] * oshape[ax];
      idx[ax] = 0;
      if (ax == 0) done = true;
    }
    if (done || of >= total) break;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binaries with trailing-axis broadcasting
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Sub, Mul };

template <typename T>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, BinKind kind) {
  const Shape oshape = broadcast_shapes(a.shape(), b.shape());
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  const std::int64_t n = out.numel();

  if (a.shape() == b.shape()) {  // fast path
    CArrMap<T> ma(pa, n), mb(pb, n);
    ArrMap<T> mo(po, n);
    switch (kind) {
      case BinKind::Add: mo = ma + mb; break;
      case BinKind::Sub: mo = ma - mb; break;
      case BinKind::Mul: mo = ma * mb; break;
    }
  } else {
    const Shape astr = broadcast_strides(a.shape(), oshape);
    const Shape bstr = broadcast_strides(b.shape(), oshape);
    switch (kind) {
      case BinKind::Add:
        broadcast_walk(oshape, astr, bstr,
                       [&](std::int64_t o, std::int64_t i, std::int64_t j) { po[o] = pa[i] + pb[j]; });
        break;
      case BinKind::Sub:
        broadcast_walk(oshape, astr, bstr,
                       [&](std::int64_t o, std::int64_t i, std::int64_t j) { po[o] = pa[i] - pb[j]; });
        break;
      case BinKind::Mul:
        broadcast_walk(oshape, astr, bstr,
                       [&](std::int64_t o, std::int64_t i, std::int64_t j) { po[o] = pa[i] * pb[j]; });
        break;
    }
  }

  if (auto* tp = tape_for<T>({&a, &b})) {
    mark_output(out, tp);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    const bool da = a.differentiable(), db = b.differentiable();
    tp->record([as, bs, os, oshape, kind, da, db] {
      if (os->grad.empty()) return;
      const T* g = os->grad.data();
      const std::int64_t n = static_cast<std::int64_t>(os->grad.size());
      auto accum = [&](const std::shared_ptr<StorageT<T>>& s, bool negate, bool through_value) {
        s->alloc_grad();
        T* acc = s->grad.data();
        const std::shared_ptr<StorageT<T>>& other = (s == as) ? bs : as;
        if (s->shape == oshape) {
          ArrMap<T> macc(acc, n);
          CArrMap<T> mg(g, n);
          if (!through_value) {
            if (negate) macc -= mg; else macc += mg;
          } else if (other->shape == oshape) {
            CArrMap<T> mv(other->data.data(), n);
            macc += mg * mv;
          } else {
            const Shape ostr = broadcast_strides(other->shape, oshape);
            const Shape sstr = row_major_strides(oshape);
            const T* ov = other->data.data();
            broadcast_walk(oshape, sstr, ostr, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
              acc[i] += g[o] * ov[j];
            });
          }
          return;
        }
        const Shape sstr = broadcast_strides(s->shape, oshape);
        const Shape ostr = broadcast_strides(other->shape, oshape);
        const T* ov = other->data.data();
        broadcast_walk(oshape, sstr, ostr, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
          T v = g[o];
          if (through_value) v *= ov[j];
          if (negate) acc[i] -= v; else acc[i] += v;
        });
      };
      const bool mul = (kind == BinKind::Mul);
      if (da) accum(as, false, mul);
      if (db) accum(bs, kind == BinKind::Sub, mul);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Add);
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Sub);
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Mul);
}

// ---------------------------------------------------------------------------
// Elementwise unaries
// ---------------------------------------------------------------------------

namespace detail {

// fwd(x) -> y, dydx(x, y) -> local derivative
template <typename T, typename Fwd, typename Dydx>
TensorT<T> unary_op(const TensorT<T>& x, Fwd fwd, Dydx dydx) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const T* px = x.data().data();
  T* po = out.data().data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (auto* tp = tape_for<T>({&x})) {
    mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, dydx] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const std::int64_t n = static_cast<std::int64_t>(os->grad.size());
      const T* g = os->grad.data();
      const T* xv = xs->data.data();
      const T* yv = os->data.data();
      T* acc = xs->grad.data();
      for (std::int64_t i = 0; i < n; ++i) acc[i] += g[i] * dydx(xv[i], yv[i]);
    });
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|)).
template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::stable_sigmoid(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> softplus(const TensorT<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::stable_softplus(v); },
      [](T v, T) { return detail::stable_sigmoid(v); });
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * detail::stable_sigmoid(v); },
      [](T v, T) {
        const T s = detail::stable_sigmoid(v);
        return s + v * s * (T(1) - s);
      });
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& x) {
  return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& x) {
  return detail::unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x) {
  return detail::unary_op(x, [](T v) { return std::tanh(v); },
                          [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> rsqrt(const TensorT<T>& x) {
  return detail::unary_op(x, [](T v) { return T(1) / std::sqrt(v); },
                          [](T, T y) { return T(-0.5) * y * y * y; });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
  return detail::unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// Gradient passes through inside [lo, hi], zero outside.
template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi) {
  return detail::unary_op(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// a [..., m, k] x b [..., k, n] -> [..., m, n]; batch extents broadcast.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::int64_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
  const std::int64_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
  if (k != k2)
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(abatch, bbatch);
  Shape oshape = batch;
  oshape.push_back(m);
  oshape.push_back(n);
  TensorT<T> out = TensorT<T>::zeros(oshape);

  const std::int64_t nb = numel_of(batch);
  // element offsets per batch index (0-stride on broadcast axes), in units of blocks
  const Shape astr = broadcast_strides(abatch, batch);
  const Shape bstr = broadcast_strides(bbatch, batch);
  const Shape bst = row_major_strides(batch);
  auto batch_offsets = [&](std::int64_t bi, std::int64_t& ai, std::int64_t& bj) {
    ai = 0;
    bj = 0;
    for (std::size_t ax = 0; ax < batch.size(); ++ax) {
      const std::int64_t ix = (bi / bst[ax]) % batch[ax];
      ai += ix * astr[ax];
      bj += ix * bstr[ax];
    }
  };

  for (std::int64_t bi = 0; bi < nb; ++bi) {
    std::int64_t ai, bj;
    batch_offsets(bi, ai, bj);
    detail::CMatMap<T> ma(a.data().data() + ai * m * k, m, k);
    detail::CMatMap<T> mb(b.data().data() + bj * k * n, k, n);
    detail::MatMap<T> mo(out.data().data() + bi * m * n, m, n);
    mo.noalias() = ma * mb;
  }

  if (auto* tp = detail::tape_for<T>({&a, &b})) {
    detail::mark_output(out, tp);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    const bool da = a.differentiable(), db = b.differentiable();
    tp->record([as, bs, os, batch, astr, bstr, bst, m, k, n, nb, da, db] {
      if (os->grad.empty()) return;
      if (da) as->alloc_grad();
      if (db) bs->alloc_grad();
      for (std::int64_t bi = 0; bi < nb; ++bi) {
        std::int64_t ai = 0, bj = 0;
        for (std::size_t ax = 0; ax < batch.size(); ++ax) {
          const std::int64_t ix = (bi / bst[ax]) % batch[ax];
          ai += ix * astr[ax];
          bj += ix * bstr[ax];
        }
        detail::CMatMap<T> mg(os->grad.data() + bi * m * n, m, n);
        if (da) {
          detail::CMatMap<T> mb(bs->data.data() + bj * k * n, k, n);
          detail::MatMap<T> ga(as->grad.data() + ai * m * k, m, k);
          ga.noalias() += mg * mb.transpose();
        }
        if (db) {
          detail::CMatMap<T> ma(as->data.data() + ai * m * k, m, k);
          detail::MatMap<T> gb(bs->grad.data() + bj * k * n, k, n);
          gb.noalias() += ma.transpose() * mg;
        }
      }
    });
  }
  return out;
}

// x [..., din] x w [din, dout] (+ bias [dout]) -> [..., dout]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias = {}) {
  if (x.rank() < 1 || w.rank() != 2)
    throw ShapeError("linear: bad ranks for " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::int64_t din = x.shape()[x.rank() - 1];
  if (din != w.shape()[0])
    throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != w.shape()[1]))
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  const std::int64_t dout = w.shape()[1];
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(din, 1);
  Shape oshape = x.shape();
  oshape.back() = dout;
  TensorT<T> out = TensorT<T>::zeros(oshape);

  detail::CMatMap<T> mx(x.data().data(), rows, din);
  detail::CMatMap<T> mw(w.data().data(), din, dout);
  detail::MatMap<T> mo(out.data().data(), rows, dout);
  mo.noalias() = mx * mw;
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> mb(bias.data().data(), dout);
    mo.rowwise() += mb;
  }

  const TensorT<T>* bias_ptr = bias.defined() ? &bias : nullptr;
  auto* tp = bias_ptr ? detail::tape_for<T>({&x, &w, bias_ptr}) : detail::tape_for<T>({&x, &w});
  if (tp) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), ws = w.storage(), os = out.storage();
    auto bsn = bias.defined() ? bias.storage() : nullptr;
    const bool dx = x.differentiable(), dw = w.differentiable(),
               dbias = bias.defined() && bias.differentiable();
    tp->record([xs, ws, bsn, os, rows, din, dout, dx, dw, dbias] {
      if (os->grad.empty()) return;
      detail::CMatMap<T> mg(os->grad.data(), rows, dout);
      if (dx) {
        xs->alloc_grad();
        detail::MatMap<T> gx(xs->grad.data(), rows, din);
        detail::CMatMap<T> mw(ws->data.data(), din, dout);
        gx.noalias() += mg * mw.transpose();
      }
      if (dw) {
        ws->alloc_grad();
        detail::MatMap<T> gw(ws->grad.data(), din, dout);
        detail::CMatMap<T> mx(xs->data.data(), rows, din);
        gw.noalias() += mx.transpose() * mg;
      }
      if (dbias) {
        bsn->alloc_grad();
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bsn->grad.data(), dout);
        gb += mg.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  TensorT<T> out = TensorT<T>::zeros(std::move(shape));
  out.data() = x.data();
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      detail::ArrMap<T>(xs->grad.data(), xs->grad.size()) +=
          detail::CArrMap<T>(os->grad.data(), os->grad.size());
    });
  }
  return out;
}

template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  std::vector<std::int64_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
  return permute(x, perm);
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<std::int64_t>& perm) {
  if (static_cast<std::int64_t>(perm.size()) != x.rank())
    throw ShapeError("permute: wrong axis count for " + shape_str(x.shape()));
  Shape oshape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) oshape[i] = x.shape()[perm[i]];
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const Shape xstr = row_major_strides(x.shape());
  Shape pstr(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) pstr[i] = xstr[perm[i]];
  const Shape zeros(perm.size(), 0);
  const T* px = x.data().data();
  T* po = out.data().data();
  detail::broadcast_walk(oshape, pstr, zeros,
                         [&](std::int64_t o, std::int64_t i, std::int64_t) { po[o] = px[i]; });
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, oshape, pstr, zeros] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      detail::broadcast_walk(oshape, pstr, zeros,
                             [&](std::int64_t o, std::int64_t i, std::int64_t) { acc[i] += g[o]; });
    });
  }
  return out;
}

template <typename T>
TensorT<T> broadcast_to(const TensorT<T>& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape)
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  TensorT<T> out = TensorT<T>::zeros(shape);
  const Shape xstr = broadcast_strides(x.shape(), shape);
  const Shape zeros(shape.size(), 0);
  const T* px = x.data().data();
  T* po = out.data().data();
  detail::broadcast_walk(shape, xstr, zeros,
                         [&](std::int64_t o, std::int64_t i, std::int64_t) { po[o] = px[i]; });
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    const Shape oshape = shape;
    tp->record([xs, os, oshape, xstr, zeros] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      detail::broadcast_walk(oshape, xstr, zeros,
                             [&](std::int64_t o, std::int64_t i, std::int64_t) { acc[i] += g[o]; });
    });
  }
  return out;
}

namespace detail {
// axis helpers: [outer, extent, inner] view of a row-major tensor
inline void axis_split(const Shape& s, std::int64_t axis, std::int64_t& outer, std::int64_t& ext,
                       std::int64_t& inner) {
  if (axis < 0 || axis >= static_cast<std::int64_t>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[i];
  ext = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
TensorT<T> concat_axis(const std::vector<TensorT<T>>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat_axis: no inputs");
  Shape oshape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != oshape.size())
      throw ShapeError("concat_axis: rank mismatch " + shape_str(oshape) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<std::int64_t>(i) != axis && s[i] != oshape[i])
        throw ShapeError("concat_axis: extent mismatch " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(s));
    oshape[axis] += s[axis];
  }
  TensorT<T> out = TensorT<T>::zeros(oshape);
  std::int64_t outer, oext, inner;
  detail::axis_split(oshape, axis, outer, oext, inner);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t pext = p.shape()[axis];
    const T* src = p.data().data();
    T* dst = out.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(dst + (o * oext + off) * inner, src + o * pext * inner,
                  sizeof(T) * pext * inner);
    off += pext;
  }
  std::vector<const TensorT<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  TapeT<T>* tp = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || p.differentiable();
  if (tp && any) {
    detail::mark_output(out, tp);
    std::vector<std::shared_ptr<StorageT<T>>> srcs;
    std::vector<bool> want;
    for (const auto& p : parts) {
      srcs.push_back(p.storage());
      want.push_back(p.differentiable());
    }
    auto os = out.storage();
    tp->record([srcs, want, os, outer, oext, inner, axis] {
      if (os->grad.empty()) return;
      const T* g = os->grad.data();
      std::int64_t off = 0;
      for (std::size_t p = 0; p < srcs.size(); ++p) {
        const std::int64_t pext = srcs[p]->shape[axis];
        if (want[p]) {
          srcs[p]->alloc_grad();
          T* acc = srcs[p]->grad.data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* gs = g + (o * oext + off) * inner;
            T* as = acc + o * pext * inner;
            for (std::int64_t i = 0; i < pext * inner; ++i) as[i] += gs[i];
          }
        }
        off += pext;
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> slice_axis(const TensorT<T>& x, std::int64_t axis, std::int64_t start,
                      std::int64_t len) {
  std::int64_t outer, ext, inner;
  detail::axis_split(x.shape(), axis, outer, ext, inner);
  if (start < 0 || len < 0 || start + len > ext)
    throw ShapeError("slice_axis: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for " + shape_str(x.shape()));
  Shape oshape = x.shape();
  oshape[axis] = len;
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(dst + o * len * inner, src + (o * ext + start) * inner, sizeof(T) * len * inner);
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, outer, ext, inner, start, len] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* gs = g + o * len * inner;
        T* as = acc + (o * ext + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) as[i] += gs[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> reverse_axis(const TensorT<T>& x, std::int64_t axis) {
  std::int64_t outer, ext, inner;
  detail::axis_split(x.shape(), axis, outer, ext, inner);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t e = 0; e < ext; ++e)
      std::memcpy(dst + (o * ext + e) * inner, src + (o * ext + (ext - 1 - e)) * inner,
                  sizeof(T) * inner);
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, outer, ext, inner] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t e = 0; e < ext; ++e) {
          const T* gs = g + (o * ext + (ext - 1 - e)) * inner;
          T* as = acc + (o * ext + e) * inner;
          for (std::int64_t i = 0; i < inner; ++i) as[i] += gs[i];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& x, std::int64_t axis, bool keepdim = false) {
  std::int64_t outer, ext, inner;
  detail::axis_split(x.shape(), axis, outer, ext, inner);
  Shape oshape = x.shape();
  if (keepdim)
    oshape[axis] = 1;
  else
    oshape.erase(oshape.begin() + axis);
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t e = 0; e < ext; ++e) {
      const T* s = src + (o * ext + e) * inner;
      T* d = dst + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) d[i] += s[i];
    }
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, outer, ext, inner] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t e = 0; e < ext; ++e) {
          const T* gs = g + o * inner;
          T* as = acc + (o * ext + e) * inner;
          for (std::int64_t i = 0; i < inner; ++i) as[i] += gs[i];
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, std::int64_t axis, bool keepdim = false) {
  const std::int64_t ext = x.shape()[axis];
  return scale(sum_axis(x, axis, keepdim), T(1) / static_cast<T>(ext));
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros({});
  T acc(0);
  for (const T v : x.data()) acc += v;
  out.data()[0] = acc;
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T g = os->grad[0];
      for (auto& a : xs->grad) a += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
TensorT<T> softmax_axis(const TensorT<T>& x, std::int64_t axis) {
  std::int64_t outer, ext, inner;
  detail::axis_split(x.shape(), axis, outer, ext, inner);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const T* s = src + o * ext * inner + i;
      T* d = dst + o * ext * inner + i;
      T mx = s[0];
      for (std::int64_t e = 1; e < ext; ++e) mx = std::max(mx, s[e * inner]);
      T z(0);
      for (std::int64_t e = 0; e < ext; ++e) {
        const T v = std::exp(s[e * inner] - mx);
        d[e * inner] = v;
        z += v;
      }
      const T iz = T(1) / z;
      for (std::int64_t e = 0; e < ext; ++e) d[e * inner] *= iz;
    }
  if (auto* tp = detail::tape_for<T>({&x})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, outer, ext, inner] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      const T* p = os->data.data();
      T* acc = xs->grad.data();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * ext * inner + i;
          T dot(0);
          for (std::int64_t e = 0; e < ext; ++e) dot += g[base + e * inner] * p[base + e * inner];
          for (std::int64_t e = 0; e < ext; ++e)
            acc[base + e * inner] += p[base + e * inner] * (g[base + e * inner] - dot);
        }
    });
  }
  return out;
}

// Depthwise causal convolution along the second-to-last axis (time), one
// kernel column per channel: y[.., t, d] = sum_j w[j, d] * x[.., t - j, d].
template <typename T>
TensorT<T> depthwise_causal_conv(const TensorT<T>& x, const TensorT<T>& w) {
  if (x.rank() < 2 || w.rank() != 2)
    throw ShapeError("depthwise_causal_conv: bad ranks for " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::int64_t d = x.shape()[x.rank() - 1];
  const std::int64_t l = x.shape()[x.rank() - 2];
  const std::int64_t kw = w.shape()[0];
  if (w.shape()[1] != d)
    throw ShapeError("depthwise_causal_conv: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  const std::int64_t outer = x.numel() / (l * d);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const T* px = x.data().data();
  const T* pw = w.data().data();
  T* po = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t t = 0; t < l; ++t) {
      T* dst = po + (o * l + t) * d;
      const std::int64_t jmax = std::min(kw - 1, t);
      for (std::int64_t j = 0; j <= jmax; ++j) {
        const T* src = px + (o * l + t - j) * d;
        const T* wj = pw + j * d;
        for (std::int64_t c = 0; c < d; ++c) dst[c] += wj[c] * src[c];
      }
    }
  if (auto* tp = detail::tape_for<T>({&x, &w})) {
    detail::mark_output(out, tp);
    auto xs = x.storage(), ws = w.storage(), os = out.storage();
    const bool dx = x.differentiable(), dw = w.differentiable();
    tp->record([xs, ws, os, outer, l, d, kw, dx, dw] {
      if (os->grad.empty()) return;
      const T* g = os->grad.data();
      const T* px = xs->data.data();
      const T* pw = ws->data.data();
      if (dx) xs->alloc_grad();
      if (dw) ws->alloc_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t t = 0; t < l; ++t) {
          const T* gt = g + (o * l + t) * d;
          const std::int64_t jmax = std::min(kw - 1, t);
          for (std::int64_t j = 0; j <= jmax; ++j) {
            const std::int64_t src_idx = (o * l + t - j) * d;
            if (dx) {
              T* ax = xs->grad.data() + src_idx;
              const T* wj = pw + j * d;
              for (std::int64_t c = 0; c < d; ++c) ax[c] += wj[c] * gt[c];
            }
            if (dw) {
              T* aw = ws->grad.data() + j * d;
              const T* sx = px + src_idx;
              for (std::int64_t c = 0; c < d; ++c) aw[c] += sx[c] * gt[c];
            }
          }
        }
    });
  }
  return out;
}

}  // namespace ssmg
