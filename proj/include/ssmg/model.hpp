#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssmg/graph.hpp"
#include "ssmg/selective.hpp"

namespace ssmg {

struct ModelConfig {
  std::int64_t feature_dim = 256;  // D, width of motion features and query embedding
  std::int64_t num_blocks = 3;
  std::int64_t state_dim = 16;  // N
  std::int64_t num_nodes = 0;   // V, must match the skeleton graph
  std::int64_t max_len = 2000;
  std::int64_t expansion = 2;  // inner-width multiplier inside a block
  std::int64_t input_dim = 3;  // raw per-node channels
  // ablation axes
  bool text_control = true;
  bool relational = true;
  bool bidirectional = true;
  // optional depthwise causal conv in front of each directional scan
  bool temporal_conv = false;
  std::int64_t conv_width = 4;

  std::int64_t inner_dim() const { return feature_dim * expansion; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"num_blocks", c.num_blocks},
                     {"state_dim", c.state_dim},
                     {"num_nodes", c.num_nodes},
                     {"max_len", c.max_len},
                     {"expansion", c.expansion},
                     {"input_dim", c.input_dim},
                     {"text_control", c.text_control},
                     {"relational", c.relational},
                     {"bidirectional", c.bidirectional},
                     {"temporal_conv", c.temporal_conv},
                     {"conv_width", c.conv_width}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.state_dim = j.value("state_dim", d.state_dim);
  c.num_nodes = j.value("num_nodes", d.num_nodes);
  c.max_len = j.value("max_len", d.max_len);
  c.expansion = j.value("expansion", d.expansion);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.text_control = j.value("text_control", d.text_control);
  c.relational = j.value("relational", d.relational);
  c.bidirectional = j.value("bidirectional", d.bidirectional);
  c.temporal_conv = j.value("temporal_conv", d.temporal_conv);
  c.conv_width = j.value("conv_width", d.conv_width);
}

template <typename T>
struct FrameScoresT {
  TensorT<T> s;       // sigmoid(logits), in (0,1); (l,) or (batch, l)
  TensorT<T> logits;
};

template <typename T>
struct TmMambaBlockT {
  TensorT<T> norm_g;  // pre-normalization scale (no bias)
  AgcnLayerT<T> agcn;
  TensorT<T> in_proj_w, in_proj_b;  // (d or 2d) -> inner
  SelectionProjectionsT<T> fwd, bwd;
  TensorT<T> conv_fwd, conv_bwd;  // (conv_width, inner)
  TensorT<T> gate_w, gate_b;      // inner -> inner
  TensorT<T> out_w, out_b;        // inner -> d
};

namespace detail {
template <typename T>
TensorT<T> rmsnorm(const TensorT<T>& x, const TensorT<T>& g) {
  TensorT<T> ms = mean_axis(mul(x, x), x.rank() - 1, /*keepdim=*/true);
  return mul(mul(x, rsqrt(add_scalar(ms, T(1e-6)))), g);
}
}  // namespace detail

template <typename T>
class TmMambaModelT {
 public:
  TmMambaModelT(ModelConfig cfg, SkeletonGraphT<T> graph, std::uint64_t seed)
      : cfg_(cfg), graph_(std::move(graph)) {
    if (cfg_.num_nodes == 0) cfg_.num_nodes = graph_.num_nodes;
    if (cfg_.num_nodes != graph_.num_nodes)
      throw ShapeError("model config expects " + std::to_string(cfg_.num_nodes) +
                       " nodes, graph has " + std::to_string(graph_.num_nodes));
    Rng rng(seed);
    const std::int64_t d = cfg_.feature_dim, inner = cfg_.inner_dim();
    embed_w_ = init_weight(rng, cfg_.input_dim, d);
    embed_b_ = TensorT<T>::zeros({d}, true);
    if (!cfg_.text_control) {
      fusion_w1_ = init_weight(rng, 2 * d, d);
      fusion_b1_ = TensorT<T>::zeros({d}, true);
      fusion_w2_ = init_weight(rng, d, d);
      fusion_b2_ = TensorT<T>::zeros({d}, true);
    }
    const std::int64_t dq = cfg_.text_control ? d : 0;
    for (std::int64_t i = 0; i < cfg_.num_blocks; ++i) {
      TmMambaBlockT<T> blk;
      blk.norm_g = TensorT<T>::full({d}, T(1), true);
      if (cfg_.relational) blk.agcn = AgcnLayerT<T>::init(rng, graph_.a_norm, d);
      const std::int64_t in_w = cfg_.relational ? 2 * d : d;
      blk.in_proj_w = init_weight(rng, in_w, inner);
      blk.in_proj_b = TensorT<T>::zeros({inner}, true);
      blk.fwd = SelectionProjectionsT<T>::init(rng, inner, cfg_.state_dim, dq);
      if (cfg_.bidirectional) blk.bwd = SelectionProjectionsT<T>::init(rng, inner, cfg_.state_dim, dq);
      if (cfg_.temporal_conv) {
        blk.conv_fwd = init_weight(rng, cfg_.conv_width, inner, cfg_.conv_width);
        if (cfg_.bidirectional) blk.conv_bwd = init_weight(rng, cfg_.conv_width, inner, cfg_.conv_width);
      }
      blk.gate_w = init_weight(rng, inner, inner);
      blk.gate_b = TensorT<T>::zeros({inner}, true);
      blk.out_w = init_weight(rng, inner, d);
      blk.out_b = TensorT<T>::zeros({d}, true);
      blocks_.push_back(std::move(blk));
    }
    head_w1_ = init_weight(rng, d, d);
    head_b1_ = TensorT<T>::zeros({d}, true);
    head_w2_ = init_weight(rng, d, 1);
    head_b2_ = TensorT<T>::zeros({1}, true);
  }

  const ModelConfig& config() const { return cfg_; }
  const SkeletonGraphT<T>& graph() const { return graph_; }
  std::vector<TmMambaBlockT<T>>& blocks() { return blocks_; }

  // One block: prenorm, relational embedding, re-projection, bidirectional
  // text-controlled scans, multiplicative SiLU gate, output projection,
  // residual connection.
  TensorT<T> block_forward(const TensorT<T>& x, const TensorT<T>& q,
                           const TmMambaBlockT<T>& blk) const {
    const std::int64_t laxis = x.rank() - 2;
    TensorT<T> xn = detail::rmsnorm(x, blk.norm_g);
    TensorT<T> zin = xn;
    if (cfg_.relational) zin = relational_concat(xn, agcn_forward(xn, blk.agcn));
    TensorT<T> z = linear(zin, blk.in_proj_w, blk.in_proj_b);

    auto run_dir = [&](const TensorT<T>& zd, const SelectionProjectionsT<T>& proj,
                       const TensorT<T>& conv_w) {
      TensorT<T> zs = zd;
      if (cfg_.temporal_conv) zs = silu(depthwise_causal_conv(zs, conv_w));
      SelectedParamsT<T> p =
          cfg_.text_control ? select_params_text(zs, q, proj) : select_params(zs, proj);
      return selective_scan(zs, p);
    };

    TensorT<T> y = run_dir(z, blk.fwd, blk.conv_fwd);
    if (cfg_.bidirectional) {
      TensorT<T> zr = reverse_axis(z, laxis);
      y = add(y, reverse_axis(run_dir(zr, blk.bwd, blk.conv_bwd), laxis));
    }
    TensorT<T> gate = silu(linear(z, blk.gate_w, blk.gate_b));
    return add(linear(mul(y, gate), blk.out_w, blk.out_b), x);
  }

  // motion (..., v, l, c_in), q (..., d) -> frame scores (..., l).
  FrameScoresT<T> forward(const TensorT<T>& motion, const TensorT<T>& q) const {
    const Shape& ms = motion.shape();
    if (motion.rank() < 3 || ms.back() != cfg_.input_dim)
      throw ShapeError("model_forward: motion shape " + shape_str(ms) + " needs " +
                       std::to_string(cfg_.input_dim) + " input channels");
    if (ms[ms.size() - 3] != cfg_.num_nodes)
      throw ShapeError("model_forward: motion has " + std::to_string(ms[ms.size() - 3]) +
                       " nodes, model expects " + std::to_string(cfg_.num_nodes));
    const std::int64_t l = ms[ms.size() - 2];
    if (l > cfg_.max_len)
      throw ValueError("model_forward: sequence length " + std::to_string(l) +
                       " exceeds max_len " + std::to_string(cfg_.max_len));
    if (q.shape().back() != cfg_.feature_dim)
      throw ShapeError("model_forward: query width " + shape_str(q.shape()) + ", expected " +
                       std::to_string(cfg_.feature_dim));

    TensorT<T> x = linear(motion, embed_w_, embed_b_);
    if (!cfg_.text_control) {
      // concatenation-fusion: query is merged into the sequence input by an
      // MLP and the scans run without query conditioning
      TensorT<T> qb = detail::expand_query(q, x.shape());
      TensorT<T> fused = concat_axis<T>({x, qb}, x.rank() - 1);
      x = linear(silu(linear(fused, fusion_w1_, fusion_b1_)), fusion_w2_, fusion_b2_);
    }
    for (const auto& blk : blocks_) x = block_forward(x, q, blk);
    TensorT<T> pooled = mean_axis(x, x.rank() - 3);  // mean over nodes
    TensorT<T> hidden = silu(linear(pooled, head_w1_, head_b1_));
    TensorT<T> logits2 = linear(hidden, head_w2_, head_b2_);  // (..., l, 1)
    Shape lshape = logits2.shape();
    lshape.pop_back();
    FrameScoresT<T> out;
    out.logits = reshape(logits2, lshape);
    out.s = sigmoid(out.logits);
    return out;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> ps;
    ps.push_back({"embed.w", embed_w_});
    ps.push_back({"embed.b", embed_b_});
    if (!cfg_.text_control) {
      ps.push_back({"fusion.w1", fusion_w1_});
      ps.push_back({"fusion.b1", fusion_b1_});
      ps.push_back({"fusion.w2", fusion_w2_});
      ps.push_back({"fusion.b2", fusion_b2_});
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      const auto& b = blocks_[i];
      ps.push_back({p + ".norm.g", b.norm_g});
      if (cfg_.relational)
        for (auto& kv : b.agcn.named_params(p + ".agcn")) ps.push_back(kv);
      ps.push_back({p + ".in_proj.w", b.in_proj_w});
      ps.push_back({p + ".in_proj.b", b.in_proj_b});
      for (auto& kv : b.fwd.named_params(p + ".fwd")) ps.push_back(kv);
      if (cfg_.bidirectional)
        for (auto& kv : b.bwd.named_params(p + ".bwd")) ps.push_back(kv);
      if (cfg_.temporal_conv) {
        ps.push_back({p + ".conv.fwd", b.conv_fwd});
        if (cfg_.bidirectional) ps.push_back({p + ".conv.bwd", b.conv_bwd});
      }
      ps.push_back({p + ".gate.w", b.gate_w});
      ps.push_back({p + ".gate.b", b.gate_b});
      ps.push_back({p + ".out.w", b.out_w});
      ps.push_back({p + ".out.b", b.out_b});
    }
    ps.push_back({"head.w1", head_w1_});
    ps.push_back({"head.b1", head_b1_});
    ps.push_back({"head.w2", head_w2_});
    ps.push_back({"head.b2", head_b2_});
    return ps;
  }

  void zero_grad() {
    for (auto& [name, p] : named_params()) p.zero_grad();
  }

 private:
  static TensorT<T> init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out,
                                std::int64_t rows = 0) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rand_uniform<T>({rows ? rows : fan_in, fan_out}, rng, -k, k, true);
  }

  ModelConfig cfg_;
  SkeletonGraphT<T> graph_;
  TensorT<T> embed_w_, embed_b_;
  TensorT<T> fusion_w1_, fusion_b1_, fusion_w2_, fusion_b2_;
  std::vector<TmMambaBlockT<T>> blocks_;
  TensorT<T> head_w1_, head_b1_, head_w2_, head_b2_;
};

using TmMambaModel = TmMambaModelT<double>;

// Mean binary cross-entropy over frames (and any leading batch axes), with the
// score clamped to [eps, 1-eps] before the logs.
template <typename T>
TensorT<T> loss_ce(const FrameScoresT<T>& scores, const TensorT<T>& labels, T eps = T(1e-7)) {
  if (scores.s.shape() != labels.shape())
    throw ShapeError("loss_ce: scores " + shape_str(scores.s.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  TensorT<T> sc = clamp(scores.s, eps, T(1) - eps);
  TensorT<T> ones = TensorT<T>::full(labels.shape(), T(1));
  TensorT<T> term =
      add(mul(labels, log_op(sc)), mul(sub(ones, labels), log_op(sub(ones, sc))));
  return scale(mean_all(term), T(-1));
}

}  // namespace ssmg
