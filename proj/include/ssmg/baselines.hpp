#pragma once

#include <cmath>

#include "ssmg/model.hpp"

namespace ssmg {

// Reference baselines for the memory benchmark: a minimal temporal
// self-attention encoder with cross-attention text injection (quadratic
// retained activations) and a small recurrent net (linear, smaller state than
// the scan path).

namespace detail {

// (l, h*dh) -> (h, l, dh) in one copy
template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, std::int64_t heads) {
  const std::int64_t l = x.shape()[0], d = x.shape()[1];
  const std::int64_t dh = d / heads;
  TensorT<T> out = TensorT<T>::zeros({heads, l, dh});
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t t = 0; t < l; ++t)
      for (std::int64_t k = 0; k < dh; ++k) dst[(h * l + t) * dh + k] = src[t * d + h * dh + k];
  if (auto* tp = tape_for<T>({&x})) {
    mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, heads, l, d, dh] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t t = 0; t < l; ++t)
          for (std::int64_t k = 0; k < dh; ++k)
            acc[t * d + h * dh + k] += g[(h * l + t) * dh + k];
    });
  }
  return out;
}

// (h, l, dh) -> (l, h*dh)
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x) {
  const std::int64_t heads = x.shape()[0], l = x.shape()[1], dh = x.shape()[2];
  const std::int64_t d = heads * dh;
  TensorT<T> out = TensorT<T>::zeros({l, d});
  const T* src = x.data().data();
  T* dst = out.data().data();
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t t = 0; t < l; ++t)
      for (std::int64_t k = 0; k < dh; ++k) dst[t * d + h * dh + k] = src[(h * l + t) * dh + k];
  if (auto* tp = tape_for<T>({&x})) {
    mark_output(out, tp);
    auto xs = x.storage(), os = out.storage();
    tp->record([xs, os, heads, l, d, dh] {
      if (os->grad.empty()) return;
      xs->alloc_grad();
      const T* g = os->grad.data();
      T* acc = xs->grad.data();
      for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t t = 0; t < l; ++t)
          for (std::int64_t k = 0; k < dh; ++k)
            acc[(h * l + t) * dh + k] += g[t * d + h * dh + k];
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
class AttentionBaselineT {
 public:
  AttentionBaselineT(std::int64_t input_dim, std::int64_t d_model, std::int64_t heads,
                     std::uint64_t seed)
      : input_dim_(input_dim), d_(d_model), heads_(heads) {
    Rng rng(seed);
    auto w = [&](std::int64_t fi, std::int64_t fo) {
      const double k = 1.0 / std::sqrt(static_cast<double>(fi));
      return rand_uniform<T>({fi, fo}, rng, -k, k, true);
    };
    embed_w_ = w(input_dim, d_);
    embed_b_ = TensorT<T>::zeros({d_}, true);
    cross_q_ = w(d_, d_);
    cross_k_ = w(d_, d_);
    cross_v_ = w(d_, d_);
    norm1_ = TensorT<T>::full({d_}, T(1), true);
    norm2_ = TensorT<T>::full({d_}, T(1), true);
    wq_ = w(d_, d_);
    wk_ = w(d_, d_);
    wv_ = w(d_, d_);
    wo_ = w(d_, d_);
    head_w_ = w(d_, 1);
    head_b_ = TensorT<T>::zeros({1}, true);
  }

  // motion (v, l, c), q (d) -> frame scores (l,)
  FrameScoresT<T> forward(const TensorT<T>& motion, const TensorT<T>& q) const {
    const std::int64_t l = motion.shape()[1];
    TensorT<T> pooled = mean_axis(motion, 0);                       // (l, c)
    TensorT<T> x = linear(pooled, embed_w_, embed_b_);              // (l, d)
    TensorT<T> q2 = reshape(q, {1, d_});

    // cross-attention injection from the single query token
    {
      TensorT<T> xq = linear(detail::rmsnorm(x, norm1_), cross_q_);
      TensorT<T> kq = linear(q2, cross_k_);
      TensorT<T> vq = linear(q2, cross_v_);
      TensorT<T> scores =
          scale(matmul(xq, transpose_last2(kq)), T(1.0 / std::sqrt(static_cast<double>(d_))));
      TensorT<T> probs = softmax_axis(scores, 1);  // (l, 1)
      x = add(x, matmul(probs, vq));
    }

    // global temporal self-attention
    {
      TensorT<T> xn = detail::rmsnorm(x, norm2_);
      const std::int64_t dh = d_ / heads_;
      TensorT<T> qh = detail::split_heads(linear(xn, wq_), heads_);  // (h, l, dh)
      TensorT<T> kh = detail::split_heads(linear(xn, wk_), heads_);
      TensorT<T> vh = detail::split_heads(linear(xn, wv_), heads_);
      TensorT<T> scores = scale(matmul(qh, transpose_last2(kh)),
                                T(1.0 / std::sqrt(static_cast<double>(dh))));  // (h, l, l)
      TensorT<T> probs = softmax_axis(scores, 2);
      TensorT<T> ctx = detail::merge_heads(matmul(probs, vh));  // (l, d)
      x = add(x, linear(ctx, wo_));
    }

    FrameScoresT<T> out;
    out.logits = reshape(linear(x, head_w_, head_b_), {l});
    out.s = sigmoid(out.logits);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    return {{"attn.embed.w", embed_w_}, {"attn.embed.b", embed_b_}, {"attn.cross.q", cross_q_},
            {"attn.cross.k", cross_k_}, {"attn.cross.v", cross_v_}, {"attn.norm1", norm1_},
            {"attn.norm2", norm2_},     {"attn.wq", wq_},           {"attn.wk", wk_},
            {"attn.wv", wv_},           {"attn.wo", wo_},           {"attn.head.w", head_w_},
            {"attn.head.b", head_b_}};
  }

 private:
  std::int64_t input_dim_, d_, heads_;
  TensorT<T> embed_w_, embed_b_;
  TensorT<T> cross_q_, cross_k_, cross_v_;
  TensorT<T> norm1_, norm2_;
  TensorT<T> wq_, wk_, wv_, wo_;
  TensorT<T> head_w_, head_b_;
};

// Plain recurrent net over the pooled sequence; the hidden state is smaller
// than the scan path's per-channel state block.
template <typename T>
class RecurrentBaselineT {
 public:
  RecurrentBaselineT(std::int64_t input_dim, std::int64_t d_query, std::int64_t hidden,
                     std::uint64_t seed)
      : hidden_(hidden) {
    Rng rng(seed);
    auto w = [&](std::int64_t fi, std::int64_t fo) {
      const double k = 1.0 / std::sqrt(static_cast<double>(fi));
      return rand_uniform<T>({fi, fo}, rng, -k, k, true);
    };
    embed_w_ = w(input_dim, hidden);
    embed_b_ = TensorT<T>::zeros({hidden}, true);
    q_w_ = w(d_query, hidden);
    rec_w_ = w(2 * hidden, hidden);
    rec_b_ = TensorT<T>::zeros({hidden}, true);
    head_w_ = w(hidden, 1);
    head_b_ = TensorT<T>::zeros({1}, true);
  }

  FrameScoresT<T> forward(const TensorT<T>& motion, const TensorT<T>& q) const {
    const std::int64_t l = motion.shape()[1];
    TensorT<T> x = linear(mean_axis(motion, 0), embed_w_, embed_b_);  // (l, hidden)
    TensorT<T> qi = linear(reshape(q, {1, static_cast<std::int64_t>(q.numel())}), q_w_);
    x = add(x, qi);  // broadcast over frames
    TensorT<T> h = TensorT<T>::zeros({1, hidden_});
    std::vector<TensorT<T>> states;
    for (std::int64_t t = 0; t < l; ++t) {
      TensorT<T> xt = slice_axis(x, 0, t, 1);  // (1, hidden)
      h = tanh_op(linear(concat_axis<T>({xt, h}, 1), rec_w_, rec_b_));
      states.push_back(h);
    }
    FrameScoresT<T> out;
    out.logits = reshape(linear(concat_axis(states, 0), head_w_, head_b_), {l});
    out.s = sigmoid(out.logits);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    return {{"rnn.embed.w", embed_w_}, {"rnn.embed.b", embed_b_}, {"rnn.q.w", q_w_},
            {"rnn.rec.w", rec_w_},     {"rnn.rec.b", rec_b_},     {"rnn.head.w", head_w_},
            {"rnn.head.b", head_b_}};
  }

 private:
  std::int64_t hidden_;
  TensorT<T> embed_w_, embed_b_, q_w_;
  TensorT<T> rec_w_, rec_b_;
  TensorT<T> head_w_, head_b_;
};

}  // namespace ssmg
