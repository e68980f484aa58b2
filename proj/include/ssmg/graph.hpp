#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmg/ops.hpp"

namespace ssmg {

// Topology awareness: symmetric-normalized skeleton adjacency plus an adaptive
// graph-convolution layer whose mixing matrix is the sum of the static
// normalized adjacency, a free learned matrix, and a data-dependent attention
// computed from the time-mean of the sequence.

template <typename T>
struct SkeletonGraphT {
  std::int64_t num_nodes = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  TensorT<T> a_norm;  // (v, v), D^{-1/2} (A + I) D^{-1/2}
};

// Symmetric normalization with self-loops.
template <typename T>
TensorT<T> normalize_adjacency(const std::vector<std::pair<std::int64_t, std::int64_t>>& edges,
                               std::int64_t num_nodes) {
  if (num_nodes <= 0) throw ValueError("normalize_adjacency: need at least one node");
  std::vector<T> adj(num_nodes * num_nodes, T(0));
  for (std::int64_t v = 0; v < num_nodes; ++v) adj[v * num_nodes + v] = T(1);  // self-loops
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= num_nodes || j >= num_nodes)
      throw ValueError("normalize_adjacency: edge (" + std::to_string(i) + "," +
                       std::to_string(j) + ") out of range for " + std::to_string(num_nodes) +
                       " nodes");
    if (i == j || !seen.insert({std::min(i, j), std::max(i, j)}).second)
      throw ValueError("normalize_adjacency: duplicate or degenerate edge (" + std::to_string(i) +
                       "," + std::to_string(j) + ")");
    adj[i * num_nodes + j] = T(1);
    adj[j * num_nodes + i] = T(1);
  }
  std::vector<T> dinv(num_nodes);
  for (std::int64_t v = 0; v < num_nodes; ++v) {
    T deg(0);
    for (std::int64_t u = 0; u < num_nodes; ++u) deg += adj[v * num_nodes + u];
    dinv[v] = T(1) / std::sqrt(deg);
  }
  TensorT<T> out = TensorT<T>::zeros({num_nodes, num_nodes});
  for (std::int64_t v = 0; v < num_nodes; ++v)
    for (std::int64_t u = 0; u < num_nodes; ++u)
      out.data()[v * num_nodes + u] = dinv[v] * adj[v * num_nodes + u] * dinv[u];
  return out;
}

template <typename T>
SkeletonGraphT<T> make_graph(std::vector<std::pair<std::int64_t, std::int64_t>> edges,
                             std::int64_t num_nodes) {
  SkeletonGraphT<T> g;
  g.num_nodes = num_nodes;
  g.edges = std::move(edges);
  g.a_norm = normalize_adjacency<T>(g.edges, num_nodes);
  return g;
}

template <typename T>
SkeletonGraphT<T> load_graph_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open graph file " + path);
  nlohmann::json j;
  in >> j;
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<std::int64_t>(),
                                                         e.at(1).get<std::int64_t>());
  return make_graph<T>(std::move(edges), j.at("num_nodes").get<std::int64_t>());
}

template <typename T>
void save_graph_json(const SkeletonGraphT<T>& g, const std::string& path) {
  nlohmann::json j;
  j["num_nodes"] = g.num_nodes;
  auto arr = nlohmann::json::array();
  for (const auto& [i, jn] : g.edges) arr.push_back({i, jn});
  j["edges"] = arr;
  std::ofstream out(path);
  if (!out) throw Error("cannot write graph file " + path);
  out << j.dump(2) << '\n';
}

template <typename T>
struct AgcnLayerT {
  TensorT<T> a_static;   // fixed normalized adjacency, not a parameter
  TensorT<T> b_learned;  // (v, v), initialized to zero
  TensorT<T> theta;      // (d, d_e) data-dependent branch embeddings
  TensorT<T> phi;        // (d, d_e)
  TensorT<T> w_out;      // (d, d)

  static AgcnLayerT init(Rng& rng, const TensorT<T>& a_norm, std::int64_t d,
                         bool requires_grad = true) {
    AgcnLayerT l;
    l.a_static = a_norm;
    const std::int64_t v = a_norm.shape()[0];
    const std::int64_t de = std::max<std::int64_t>(1, d / 4);
    const double k = 1.0 / std::sqrt(static_cast<double>(d));
    l.b_learned = TensorT<T>::zeros({v, v}, requires_grad);
    l.theta = rand_uniform<T>({d, de}, rng, -k, k, requires_grad);
    l.phi = rand_uniform<T>({d, de}, rng, -k, k, requires_grad);
    l.w_out = rand_uniform<T>({d, d}, rng, -k, k, requires_grad);
    return l;
  }

  std::vector<std::pair<std::string, TensorT<T>>> named_params(const std::string& prefix) const {
    return {{prefix + ".b_learned", b_learned},
            {prefix + ".theta", theta},
            {prefix + ".phi", phi},
            {prefix + ".w_out", w_out}};
  }
};

// Row-stochastic data-dependent mixing matrix from the time-mean features.
template <typename T>
TensorT<T> agcn_data_matrix(const TensorT<T>& x, const AgcnLayerT<T>& layer) {
  TensorT<T> xbar = mean_axis(x, x.rank() - 2);  // (..., v, d)
  TensorT<T> th = linear(xbar, layer.theta);
  TensorT<T> ph = linear(xbar, layer.phi);
  return softmax_axis(matmul(th, transpose_last2(ph)), x.rank() - 2);
}

// R_t = (A_static + B_learned + C_data(mean_t X)) X_t W_out, per time step.
template <typename T>
TensorT<T> agcn_forward(const TensorT<T>& x, const AgcnLayerT<T>& layer) {
  if (x.rank() < 3) throw ShapeError("agcn_forward: input must be (..., v, l, d)");
  const std::int64_t v = x.shape()[x.rank() - 3];
  if (v != layer.a_static.shape()[0])
    throw ShapeError("agcn_forward: input " + shape_str(x.shape()) + " does not match graph of " +
                     shape_str(layer.a_static.shape()));
  const std::int64_t l = x.shape()[x.rank() - 2];
  const std::int64_t d = x.shape()[x.rank() - 1];
  TensorT<T> mix = add(add(layer.b_learned, agcn_data_matrix(x, layer)), layer.a_static);
  Shape flat = x.shape();
  flat.pop_back();
  flat.back() = l * d;
  Shape orig = x.shape();
  TensorT<T> mixed = matmul(mix, reshape(x, flat));  // (..., v, l*d)
  return linear(reshape(mixed, orig), layer.w_out);
}

// Channel-axis concatenation of motion features with the relational embedding;
// the block that consumes this re-projects 2d back down to the scan width.
template <typename T>
TensorT<T> relational_concat(const TensorT<T>& x, const TensorT<T>& r) {
  if (x.shape() != r.shape())
    throw ShapeError("relational_concat: " + shape_str(x.shape()) + " vs " +
                     shape_str(r.shape()));
  return concat_axis<T>({x, r}, x.rank() - 1);
}

}  // namespace ssmg
