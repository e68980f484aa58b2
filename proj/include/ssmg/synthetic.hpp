#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmg/eval.hpp"
#include "ssmg/ops.hpp"

namespace ssmg {

// Desk-scale text-grounding corpora: multivariate sequences on a skeleton
// graph with embedded sinusoid-burst motifs, queries referencing motif ids,
// per-frame labels, and a pluggable query-embedding provider.

struct MotifSpec {
  std::int64_t motif_id = 0;
  std::vector<std::int64_t> node_subset;
  double frequency = 0.0;            // cycles per frame
  std::vector<double> phase;         // per channel
  std::vector<double> amplitude;     // per channel
  std::int64_t min_duration = 10;
  std::int64_t max_duration = 21;
};

struct SyntheticItem {
  std::int64_t num_nodes = 0, length = 0, channels = 0;
  std::vector<double> motion;  // (v, l, c) row-major
  std::int64_t query_id = 0;
  std::vector<std::int64_t> labels;  // per-frame {0,1}
  std::vector<Segment> segments;     // runs of 1s, sorted by start
  bool operator==(const SyntheticItem&) const = default;

  double& at(std::int64_t v, std::int64_t t, std::int64_t c) {
    return motion[(v * length + t) * channels + c];
  }
  double at(std::int64_t v, std::int64_t t, std::int64_t c) const {
    return motion[(v * length + t) * channels + c];
  }
};

struct SyntheticConfig {
  std::int64_t num_nodes = 8;
  std::int64_t length = 256;
  std::int64_t input_dim = 3;
  std::int64_t num_motifs = 6;
  std::int64_t items = 2400;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = nlohmann::json{{"num_nodes", c.num_nodes}, {"length", c.length},
                     {"input_dim", c.input_dim}, {"num_motifs", c.num_motifs},
                     {"items", c.items},         {"noise_std", c.noise_std},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  c.num_nodes = j.value("num_nodes", d.num_nodes);
  c.length = j.value("length", d.length);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.num_motifs = j.value("num_motifs", d.num_motifs);
  c.items = j.value("items", d.items);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.seed = j.value("seed", d.seed);
}

// Binary-tree skeleton over v nodes; deterministic stand-in topology.
inline std::vector<std::pair<std::int64_t, std::int64_t>> default_skeleton_edges(std::int64_t v) {
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (std::int64_t i = 1; i < v; ++i) edges.push_back({(i - 1) / 2, i});
  return edges;
}

// Motif bank: band-limited sinusoid bursts on 3-node subsets, frequencies
// spaced so that identification needs temporal context rather than a single
// frame.
inline std::vector<MotifSpec> make_motif_bank(const SyntheticConfig& cfg) {
  if (cfg.num_motifs < 2) throw ValueError("make_motif_bank: need at least two motifs");
  std::vector<MotifSpec> bank;
  const double f0 = 0.0625;
  const double spacing =
      std::min(0.0625, (0.45 - f0) / static_cast<double>(std::max<std::int64_t>(1, cfg.num_motifs - 1)));
  for (std::int64_t m = 0; m < cfg.num_motifs; ++m) {
    MotifSpec spec;
    spec.motif_id = m;
    for (std::int64_t k = 0; k < 3; ++k) spec.node_subset.push_back((m + k) % cfg.num_nodes);
    spec.frequency = f0 + spacing * static_cast<double>(m);
    for (std::int64_t c = 0; c < cfg.input_dim; ++c) {
      spec.phase.push_back(2.0 * std::numbers::pi * static_cast<double>(c) /
                               static_cast<double>(cfg.input_dim) +
                           0.7 * static_cast<double>(m));
      spec.amplitude.push_back(1.0);
    }
    bank.push_back(std::move(spec));
  }
  return bank;
}

namespace detail {

// 5-frame raised-cosine on/off ramps inside the interval
inline double motif_envelope(std::int64_t offset, std::int64_t duration) {
  auto ramp = [](std::int64_t k) {
    if (k >= 5) return 1.0;
    const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / 12.0);
    return s * s;
  };
  return ramp(offset) * ramp(duration - 1 - offset);
}

inline void paint_motif(SyntheticItem& item, const MotifSpec& spec, const Segment& seg) {
  for (std::int64_t t = seg.start; t < seg.end; ++t) {
    const double env = motif_envelope(t - seg.start, seg.length());
    const double angle = 2.0 * std::numbers::pi * spec.frequency * static_cast<double>(t - seg.start);
    for (const std::int64_t v : spec.node_subset)
      for (std::int64_t c = 0; c < item.channels; ++c)
        item.at(v, t, c) += env * spec.amplitude[c] * std::sin(angle + spec.phase[c]);
  }
}

}  // namespace detail

inline SyntheticItem gen_item(const SyntheticConfig& cfg, const std::vector<MotifSpec>& bank,
                              std::uint64_t item_seed) {
  Rng rng(item_seed);
  SyntheticItem item;
  item.num_nodes = cfg.num_nodes;
  item.length = cfg.length;
  item.channels = cfg.input_dim;
  item.motion.resize(cfg.num_nodes * cfg.length * cfg.input_dim);
  for (auto& v : item.motion) v = rng.normal(0.0, cfg.noise_std);

  item.query_id = rng.uniform_int(0, cfg.num_motifs - 1);
  const std::int64_t n_query = rng.uniform_int(1, 4);
  const std::int64_t n_distract = rng.uniform_int(1, 3);

  struct Planned {
    std::int64_t motif;
    std::int64_t duration;
  };
  std::vector<Planned> plan;
  for (std::int64_t k = 0; k < n_query; ++k)
    plan.push_back({item.query_id,
                    rng.uniform_int(bank[item.query_id].min_duration,
                                    bank[item.query_id].max_duration)});
  for (std::int64_t k = 0; k < n_distract; ++k) {
    std::int64_t m = rng.uniform_int(0, cfg.num_motifs - 2);
    if (m >= item.query_id) ++m;  // any motif but the queried one
    plan.push_back({m, rng.uniform_int(bank[m].min_duration, bank[m].max_duration)});
  }
  rng.shuffle(plan.begin(), plan.end());

  std::int64_t total = 0;
  for (const auto& p : plan) total += p.duration;
  const std::int64_t count = static_cast<std::int64_t>(plan.size());
  const std::int64_t slack = cfg.length - total - (count - 1);  // 1-frame gaps keep runs apart
  if (slack < 0)
    throw ValueError("gen_item: requested intervals (" + std::to_string(total) +
                     " frames) do not fit into length " + std::to_string(cfg.length));

  // distribute the slack over count+1 gaps
  std::vector<std::int64_t> cuts;
  for (std::int64_t k = 0; k < count; ++k) cuts.push_back(rng.uniform_int(0, slack));
  std::sort(cuts.begin(), cuts.end());

  std::int64_t cursor = 0;
  std::int64_t prev_cut = 0;
  item.labels.assign(cfg.length, 0);
  for (std::int64_t k = 0; k < count; ++k) {
    cursor += cuts[k] - prev_cut;
    prev_cut = cuts[k];
    const Segment seg{cursor, cursor + plan[k].duration};
    detail::paint_motif(item, bank[plan[k].motif], seg);
    if (plan[k].motif == item.query_id) {
      item.segments.push_back(seg);
      for (std::int64_t t = seg.start; t < seg.end; ++t) item.labels[t] = 1;
    }
    cursor = seg.end + 1;  // enforced gap
  }
  std::sort(item.segments.begin(), item.segments.end(),
            [](const Segment& a, const Segment& b) { return a.start < b.start; });
  return item;
}

inline std::vector<SyntheticItem> gen_corpus(const SyntheticConfig& cfg) {
  if (cfg.num_motifs < 2) throw ValueError("gen_corpus: need at least two motifs");
  const auto bank = make_motif_bank(cfg);
  std::vector<SyntheticItem> corpus;
  corpus.reserve(cfg.items);
  for (std::int64_t i = 0; i < cfg.items; ++i)
    corpus.push_back(gen_item(cfg, bank, derive_seed(cfg.seed, static_cast<std::uint64_t>(i))));
  return corpus;
}

// Seed-deterministic, motif-stratified partition by largest remainder.
inline std::vector<std::vector<SyntheticItem>> split(const std::vector<SyntheticItem>& corpus,
                                                     const std::vector<double>& fractions,
                                                     std::uint64_t seed = 7) {
  if (corpus.empty()) throw ValueError("split: empty corpus");
  double sum = 0;
  for (double f : fractions) {
    if (f < 0) throw ValueError("split: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValueError("split: fractions must sum to 1");

  std::map<std::int64_t, std::vector<std::size_t>> by_query;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_query[corpus[i].query_id].push_back(i);

  std::vector<std::vector<SyntheticItem>> parts(fractions.size());
  for (auto& [qid, idxs] : by_query) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(qid)));
    rng.shuffle(idxs.begin(), idxs.end());
    // largest-remainder apportionment within the group
    const std::size_t n = idxs.size();
    std::vector<std::size_t> counts(fractions.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
      const double exact = fractions[p] * static_cast<double>(n);
      counts[p] = static_cast<std::size_t>(exact);
      assigned += counts[p];
      rema.push_back({exact - static_cast<double>(counts[p]), p});
    }
    std::sort(rema.begin(), rema.end(), [](auto& a, auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) counts[rema[r % rema.size()].second]++;
    std::size_t cursor = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p)
      for (std::size_t k = 0; k < counts[p]; ++k) parts[p].push_back(corpus[idxs[cursor++]]);
  }
  return parts;
}

// ---------------------------------------------------------------------------
// JSONL serialization: one item per line.
// ---------------------------------------------------------------------------

inline nlohmann::json item_to_json(const SyntheticItem& item) {
  nlohmann::json j;
  auto motion = nlohmann::json::array();
  for (std::int64_t v = 0; v < item.num_nodes; ++v) {
    auto nv = nlohmann::json::array();
    for (std::int64_t t = 0; t < item.length; ++t) {
      auto nt = nlohmann::json::array();
      for (std::int64_t c = 0; c < item.channels; ++c) nt.push_back(item.at(v, t, c));
      nv.push_back(std::move(nt));
    }
    motion.push_back(std::move(nv));
  }
  j["motion"] = std::move(motion);
  j["query_id"] = item.query_id;
  j["labels"] = item.labels;
  auto segs = nlohmann::json::array();
  for (const auto& s : item.segments) segs.push_back({s.start, s.end});
  j["segments"] = std::move(segs);
  return j;
}

inline SyntheticItem item_from_json(const nlohmann::json& j) {
  SyntheticItem item;
  const auto& motion = j.at("motion");
  item.num_nodes = static_cast<std::int64_t>(motion.size());
  if (item.num_nodes == 0) throw ValueError("item has no nodes");
  item.length = static_cast<std::int64_t>(motion.at(0).size());
  item.channels = item.length ? static_cast<std::int64_t>(motion.at(0).at(0).size()) : 0;
  item.motion.reserve(item.num_nodes * item.length * item.channels);
  for (const auto& nv : motion) {
    if (static_cast<std::int64_t>(nv.size()) != item.length)
      throw ValueError("ragged motion array");
    for (const auto& nt : nv) {
      if (static_cast<std::int64_t>(nt.size()) != item.channels)
        throw ValueError("ragged motion array");
      for (const auto& x : nt) item.motion.push_back(x.get<double>());
    }
  }
  item.query_id = j.at("query_id").get<std::int64_t>();
  item.labels = j.at("labels").get<std::vector<std::int64_t>>();
  for (const auto& s : j.at("segments"))
    item.segments.push_back(Segment{s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>()});
  return item;
}

inline void save_corpus_jsonl(const std::vector<SyntheticItem>& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& item : corpus) out << item_to_json(item).dump() << '\n';
}

inline std::vector<SyntheticItem> load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<SyntheticItem> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      corpus.push_back(item_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Query-embedding provider standing in for a text encoder: frozen random unit
// vectors by default, a learnable table as an option.
// ---------------------------------------------------------------------------

struct ProviderConfig {
  std::uint64_t seed = 9001;
  std::int64_t dim = 64;
  std::int64_t num_queries = 6;
  bool learnable = false;
};

inline void to_json(nlohmann::json& j, const ProviderConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"dim", c.dim},
                     {"num_queries", c.num_queries},
                     {"learnable", c.learnable}};
}

inline void from_json(const nlohmann::json& j, ProviderConfig& c) {
  ProviderConfig d;
  c.seed = j.value("seed", d.seed);
  c.dim = j.value("dim", d.dim);
  c.num_queries = j.value("num_queries", d.num_queries);
  c.learnable = j.value("learnable", d.learnable);
}

template <typename T>
class QueryEmbeddingProviderT {
 public:
  explicit QueryEmbeddingProviderT(ProviderConfig cfg) : cfg_(cfg) {
    for (std::int64_t m = 0; m < cfg_.num_queries; ++m) {
      Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(m)));
      TensorT<T> v = TensorT<T>::zeros({cfg_.dim}, cfg_.learnable);
      double norm = 0.0;
      std::vector<double> raw(cfg_.dim);
      for (auto& x : raw) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (std::int64_t i = 0; i < cfg_.dim; ++i) v.data()[i] = static_cast<T>(raw[i] / norm);
      table_.push_back(std::move(v));
    }
  }

  const ProviderConfig& config() const { return cfg_; }

  TensorT<T> get(std::int64_t motif_id) const {
    if (motif_id < 0 || motif_id >= static_cast<std::int64_t>(table_.size()))
      throw ValueError("query id " + std::to_string(motif_id) + " outside the provider table");
    return table_[motif_id];
  }

  // (batch, dim) embedding matrix; keeps gradient flow into a learnable table.
  TensorT<T> batch(const std::vector<std::int64_t>& ids) const {
    std::vector<TensorT<T>> rows;
    for (const auto id : ids) rows.push_back(reshape(get(id), {1, cfg_.dim}));
    return concat_axis(rows, 0);
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> ps;
    if (cfg_.learnable)
      for (std::size_t m = 0; m < table_.size(); ++m)
        ps.push_back({"query_table." + std::to_string(m), table_[m]});
    return ps;
  }

 private:
  ProviderConfig cfg_;
  std::vector<TensorT<T>> table_;
};

}  // namespace ssmg
