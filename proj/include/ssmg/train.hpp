#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "ssmg/checkpoint.hpp"
#include "ssmg/eval.hpp"
#include "ssmg/model.hpp"
#include "ssmg/optim.hpp"
#include "ssmg/synthetic.hpp"

namespace ssmg {

struct EvalProtocol {
  std::vector<double> seg_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double nms_iou = 0.5;
  std::vector<double> map_thresholds = map_iou_grid();
};

inline void to_json(nlohmann::json& j, const EvalProtocol& p) {
  j = nlohmann::json{{"seg_thresholds", p.seg_thresholds},
                     {"nms_iou", p.nms_iou},
                     {"map_thresholds", p.map_thresholds}};
}

inline void from_json(const nlohmann::json& j, EvalProtocol& p) {
  EvalProtocol d;
  p.seg_thresholds = j.value("seg_thresholds", d.seg_thresholds);
  p.nms_iou = j.value("nms_iou", d.nms_iou);
  p.map_thresholds = j.value("map_thresholds", d.map_thresholds);
}

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 2;
  std::uint64_t seed = 1;
  double grad_clip_norm = 1.0;
  std::string dtype = "f64";  // f64 default; f32 for speed runs
  std::int64_t workers = 1;
  ModelConfig model;
  ProviderConfig provider;
  SyntheticConfig data;
  double train_fraction = 5.0 / 6.0;
  EvalProtocol eval;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"dtype", c.dtype},
                     {"workers", c.workers},
                     {"model", c.model},
                     {"provider", c.provider},
                     {"data", c.data},
                     {"train_fraction", c.train_fraction},
                     {"eval", c.eval},
                     {"text_control", c.model.text_control},
                     {"relational", c.model.relational},
                     {"bidirectional", c.model.bidirectional}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.grad_clip_norm = j.value("grad_clip_norm", d.grad_clip_norm);
  c.dtype = j.value("dtype", d.dtype);
  c.workers = j.value("workers", d.workers);
  c.model = j.value("model", d.model);
  c.provider = j.value("provider", d.provider);
  c.data = j.value("data", d.data);
  c.train_fraction = j.value("train_fraction", d.train_fraction);
  c.eval = j.value("eval", d.eval);
  // ablation flags may also be given flat
  c.model.text_control = j.value("text_control", c.model.text_control);
  c.model.relational = j.value("relational", c.model.relational);
  c.model.bidirectional = j.value("bidirectional", c.model.bidirectional);
}

// The desk-scale defaults the synthetic task trains under.
inline TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.model.feature_dim = 64;
  cfg.model.num_blocks = 1;
  cfg.model.state_dim = 8;
  cfg.model.num_nodes = 8;
  cfg.model.expansion = 1;
  cfg.model.input_dim = 3;
  cfg.model.max_len = 2000;
  cfg.provider.dim = 64;
  cfg.provider.num_queries = 6;
  cfg.learning_rate = 1e-3;
  return cfg;
}

namespace detail {

template <typename T>
TensorT<T> stack_motion(const std::vector<SyntheticItem>& items,
                        const std::vector<std::size_t>& idxs) {
  const auto& first = items[idxs[0]];
  const std::int64_t b = static_cast<std::int64_t>(idxs.size());
  TensorT<T> out = TensorT<T>::zeros({b, first.num_nodes, first.length, first.channels});
  T* dst = out.data().data();
  const std::int64_t stride = first.num_nodes * first.length * first.channels;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& item = items[idxs[i]];
    if (item.num_nodes != first.num_nodes || item.length != first.length ||
        item.channels != first.channels)
      throw ShapeError("stack_motion: items in a batch must share dimensions");
    for (std::int64_t k = 0; k < stride; ++k) dst[i * stride + k] = static_cast<T>(item.motion[k]);
  }
  return out;
}

template <typename T>
TensorT<T> stack_labels(const std::vector<SyntheticItem>& items,
                        const std::vector<std::size_t>& idxs) {
  const std::int64_t b = static_cast<std::int64_t>(idxs.size());
  const std::int64_t l = items[idxs[0]].length;
  TensorT<T> out = TensorT<T>::zeros({b, l});
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t t = 0; t < l; ++t)
      out.data()[i * l + t] = static_cast<T>(items[idxs[i]].labels[t]);
  return out;
}

}  // namespace detail

// Frame scores -> candidate segments -> NMS, for one item.
template <typename T>
std::vector<ScoredSegment> predict_segments(const TmMambaModelT<T>& model,
                                            const QueryEmbeddingProviderT<T>& provider,
                                            const SyntheticItem& item, const EvalProtocol& proto) {
  TensorT<T> motion = TensorT<T>::zeros({item.num_nodes, item.length, item.channels});
  for (std::size_t k = 0; k < item.motion.size(); ++k)
    motion.data()[k] = static_cast<T>(item.motion[k]);
  auto scores = model.forward(motion, provider.get(item.query_id));
  std::vector<double> s(scores.s.data().begin(), scores.s.data().end());
  return nms(scores_to_segments(s, proto.seg_thresholds), proto.nms_iou);
}

// Runs the model over a corpus and evaluates the grounding protocol. Items are
// independent; `workers` threads partition them by index, and results are
// merged in index order so the outcome does not depend on scheduling.
template <typename T>
MapTable evaluate(const TmMambaModelT<T>& model, const QueryEmbeddingProviderT<T>& provider,
                  const std::vector<SyntheticItem>& items, const EvalProtocol& proto,
                  std::int64_t workers = 1) {
  std::vector<EvalItem> eval_items(items.size());
  auto run_range = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < items.size(); i += stride) {
      EvalItem e;
      e.predictions = predict_segments(model, provider, items[i], proto);
      e.ground_truth = items[i].segments;
      e.query_id = items[i].query_id;
      eval_items[i] = std::move(e);
    }
  };
  if (workers <= 1) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::int64_t w = 0; w < workers; ++w)
      pool.emplace_back(run_range, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
    for (auto& th : pool) th.join();
  }
  return map_suite(eval_items, proto.map_thresholds);
}

// Evaluation with injected scores (oracle paths, tests).
inline MapTable evaluate_scored(
    const std::vector<SyntheticItem>& items,
    const std::function<std::vector<double>(const SyntheticItem&)>& score_fn,
    const EvalProtocol& proto) {
  std::vector<EvalItem> eval_items;
  for (const auto& item : items) {
    EvalItem e;
    e.predictions = nms(scores_to_segments(score_fn(item), proto.seg_thresholds), proto.nms_iou);
    e.ground_truth = item.segments;
    e.query_id = item.query_id;
    eval_items.push_back(std::move(e));
  }
  return map_suite(eval_items, proto.map_thresholds);
}

template <typename T>
struct TrainResult {
  double initial_loss = 0.0;             // first batch, before any update
  std::vector<double> epoch_loss;        // mean train loss per epoch
  std::vector<double> epoch_val_map;     // average mAP (percent) per epoch
  MapTable final_table;
  nlohmann::json metrics;
};

// Minimizes the mean frame cross-entropy with AdamW. Deterministic under the
// seed in single-worker mode; aborts with a diagnostic if the loss diverges.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, TmMambaModelT<T>& model,
                     QueryEmbeddingProviderT<T>& provider,
                     const std::vector<SyntheticItem>& train_items,
                     const std::vector<SyntheticItem>& val_items) {
  if (train_items.empty()) throw ValueError("train: empty corpus");
  auto params = model.named_params();
  for (auto& kv : provider.named_params()) params.push_back(kv);
  AdamWT<T> opt(params);

  TrainResult<T> result;
  auto t_start = std::chrono::steady_clock::now();
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE50C + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_acc = 0.0;
    std::int64_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t take = std::min<std::size_t>(cfg.batch_size, order.size() - at);
      std::vector<std::size_t> idxs(order.begin() + at, order.begin() + at + take);
      TensorT<T> motion = detail::stack_motion<T>(train_items, idxs);
      TensorT<T> labels = detail::stack_labels<T>(train_items, idxs);
      std::vector<std::int64_t> qids;
      for (auto i : idxs) qids.push_back(train_items[i].query_id);

      TapeT<T> tape;
      double loss_value;
      {
        TapeScope<T> scope(tape);
        TensorT<T> q = provider.batch(qids);
        TensorT<T> loss = loss_ce(model.forward(motion, q), labels);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
          throw ValueError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches));
        tape.backward(loss);
      }
      if (epoch == 0 && batches == 0) result.initial_loss = loss_value;
      clip_grad_norm(params, cfg.grad_clip_norm);
      opt.step(cfg.learning_rate, cfg.weight_decay);
      for (auto& [name, p] : params) p.zero_grad();
      loss_acc += loss_value;
      ++batches;
    }
    result.epoch_loss.push_back(loss_acc / static_cast<double>(batches));
    if (!val_items.empty()) {
      MapTable table = evaluate(model, provider, val_items, cfg.eval, cfg.workers);
      result.epoch_val_map.push_back(table.average_percent);
      result.final_table = table;
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  result.metrics["initial_loss"] = result.initial_loss;
  result.metrics["epoch_loss"] = result.epoch_loss;
  result.metrics["epoch_val_map"] = result.epoch_val_map;
  result.metrics["seconds"] = seconds;
  result.metrics["seed"] = cfg.seed;
  if (!val_items.empty()) result.metrics["final"] = map_table_json(result.final_table);
  return result;
}

}  // namespace ssmg
