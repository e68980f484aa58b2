#pragma once

#include <fstream>

#include "ssmg/baselines.hpp"
#include "ssmg/synthetic.hpp"
#include "ssmg/train.hpp"

namespace ssmg {

// Peak retained-activation measurement per model and sequence length: one
// forward+backward on one item, counting scalars held by tensor storage above
// the pre-run baseline. A configured cap turns runaway allocations into an
// out-of-memory row instead of an actual allocation failure.

struct BenchConfig {
  std::vector<std::int64_t> lengths{256, 512, 1024, 2048, 4096};
  std::vector<std::string> models{"tm_mamba", "attention", "recurrent"};
  std::int64_t cap_scalars = 256000000;
  std::int64_t num_nodes = 4;
  std::int64_t d_model = 64;
  std::int64_t state_dim = 8;
  std::int64_t heads = 8;
  std::int64_t recurrent_hidden = 32;
  std::uint64_t seed = 5;
};

inline void to_json(nlohmann::json& j, const BenchConfig& c) {
  j = nlohmann::json{{"lengths", c.lengths},
                     {"models", c.models},
                     {"cap_scalars", c.cap_scalars},
                     {"num_nodes", c.num_nodes},
                     {"d_model", c.d_model},
                     {"state_dim", c.state_dim},
                     {"heads", c.heads},
                     {"recurrent_hidden", c.recurrent_hidden},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, BenchConfig& c) {
  BenchConfig d;
  c.lengths = j.value("lengths", d.lengths);
  c.models = j.value("models", d.models);
  c.cap_scalars = j.value("cap_scalars", d.cap_scalars);
  c.num_nodes = j.value("num_nodes", d.num_nodes);
  c.d_model = j.value("d_model", d.d_model);
  c.state_dim = j.value("state_dim", d.state_dim);
  c.heads = j.value("heads", d.heads);
  c.recurrent_hidden = j.value("recurrent_hidden", d.recurrent_hidden);
  c.seed = j.value("seed", d.seed);
}

struct BenchRow {
  std::string model;
  std::int64_t length = 0;
  std::int64_t peak_scalars = 0;
  bool oom = false;
};

namespace detail {

template <typename Forward>
BenchRow bench_one(const std::string& name, std::int64_t length, std::int64_t cap, Forward&& fwd) {
  BenchRow row;
  row.model = name;
  row.length = length;
  memory::reset_peak();
  const std::int64_t base = memory::live();
  memory::set_cap(cap > 0 ? base + cap : 0);
  try {
    fwd();
    row.peak_scalars = memory::peak() - base;
  } catch (const memory::CapExceeded&) {
    row.oom = true;
    row.peak_scalars = cap;
  }
  memory::set_cap(0);
  return row;
}

}  // namespace detail

inline std::vector<BenchRow> bench_memory(const BenchConfig& cfg) {
  for (std::size_t i = 1; i < cfg.lengths.size(); ++i)
    if (cfg.lengths[i] <= cfg.lengths[i - 1])
      throw ValueError("bench_memory: lengths must be ascending");

  std::vector<BenchRow> rows;
  const std::int64_t max_len = cfg.lengths.back();

  for (const auto& model_name : cfg.models) {
    for (const std::int64_t length : cfg.lengths) {
      SyntheticConfig data;
      data.num_nodes = cfg.num_nodes;
      data.length = length;
      data.items = 1;
      data.seed = cfg.seed;
      const auto bank = make_motif_bank(data);
      const SyntheticItem item = gen_item(data, bank, derive_seed(cfg.seed, 17));

      Tensor motion = Tensor::zeros({item.num_nodes, item.length, item.channels});
      for (std::size_t k = 0; k < item.motion.size(); ++k) motion.data()[k] = item.motion[k];
      Tensor labels = Tensor::zeros({item.length});
      for (std::int64_t t = 0; t < item.length; ++t)
        labels.data()[t] = static_cast<double>(item.labels[t]);

      ProviderConfig pc;
      pc.dim = cfg.d_model;
      pc.num_queries = data.num_motifs;
      QueryEmbeddingProviderT<double> provider(pc);
      Tensor q = provider.get(item.query_id);

      if (model_name == "tm_mamba") {
        ModelConfig mc;
        mc.feature_dim = cfg.d_model;
        mc.num_blocks = 1;
        mc.state_dim = cfg.state_dim;
        mc.num_nodes = cfg.num_nodes;
        mc.max_len = max_len;
        mc.expansion = 1;
        mc.input_dim = data.input_dim;
        TmMambaModelT<double> model(mc, make_graph<double>(default_skeleton_edges(cfg.num_nodes),
                                                           cfg.num_nodes),
                                    cfg.seed);
        rows.push_back(detail::bench_one(model_name, length, cfg.cap_scalars, [&] {
          Tape tape;
          TapeScope<double> scope(tape);
          tape.backward(loss_ce(model.forward(motion, q), labels));
        }));
      } else if (model_name == "attention") {
        AttentionBaselineT<double> model(data.input_dim, cfg.d_model, cfg.heads, cfg.seed);
        rows.push_back(detail::bench_one(model_name, length, cfg.cap_scalars, [&] {
          Tape tape;
          TapeScope<double> scope(tape);
          tape.backward(loss_ce(model.forward(motion, q), labels));
        }));
      } else if (model_name == "recurrent") {
        RecurrentBaselineT<double> model(data.input_dim, cfg.d_model, cfg.recurrent_hidden,
                                         cfg.seed);
        rows.push_back(detail::bench_one(model_name, length, cfg.cap_scalars, [&] {
          Tape tape;
          TapeScope<double> scope(tape);
          tape.backward(loss_ce(model.forward(motion, q), labels));
        }));
      } else {
        throw ValueError("bench_memory: unknown model " + model_name);
      }
    }
  }
  return rows;
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "model,length,peak_scalars,status\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.length << ',';
    if (r.oom)
      out << "," << "oom\n";
    else
      out << r.peak_scalars << ",ok\n";
  }
}

}  // namespace ssmg
