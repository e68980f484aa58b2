#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "ssmg/gradcheck.hpp"
#include "ssmg/graph.hpp"

using namespace ssmg;
using Catch::Matchers::WithinAbs;

TEST_CASE("normalize_adjacency closed forms", "[graph]") {
  // no edges: self-loops only, so the identity
  Tensor i2 = normalize_adjacency<double>({}, 2);
  CHECK(i2.data() == std::vector<double>{1, 0, 0, 1});

  // single edge on two nodes: degrees 2 and 2, every entry 1/2
  Tensor e = normalize_adjacency<double>({{0, 1}}, 2);
  for (double v : e.data()) CHECK_THAT(v, WithinAbs(0.5, 1e-15));

  // path 0-1-2: entry (0,1) = 1/sqrt(2)/sqrt(3)
  Tensor p = normalize_adjacency<double>({{0, 1}, {1, 2}}, 3);
  CHECK_THAT(p.at({0, 1}), WithinAbs(1.0 / std::sqrt(6.0), 1e-14));
}

TEST_CASE("normalize_adjacency rejects bad edges", "[graph]") {
  CHECK_THROWS_AS(normalize_adjacency<double>({{0, 3}}, 3), ValueError);
  CHECK_THROWS_AS(normalize_adjacency<double>({{0, 1}, {1, 0}}, 3), ValueError);
  CHECK_THROWS_AS(normalize_adjacency<double>({{1, 1}}, 3), ValueError);
}

TEST_CASE("spectral radius of the normalized adjacency is at most 1", "[graph]") {
  // power iteration on a small tree
  Tensor a = normalize_adjacency<double>({{0, 1}, {1, 2}, {1, 3}, {3, 4}}, 5);
  std::vector<double> v(5, 1.0);
  double lambda = 0;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> w(5, 0.0);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) w[i] += a.at({i, j}) * v[j];
    double norm = 0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    for (int i = 0; i < 5; ++i) v[i] = w[i] / norm;
    lambda = norm;
  }
  CHECK(lambda <= 1.0 + 1e-10);
}

namespace {

AgcnLayerT<double> uniform_layer(std::int64_t v, std::int64_t d) {
  Rng rng(0);
  auto l = AgcnLayerT<double>::init(rng, normalize_adjacency<double>({}, v), d);
  std::fill(l.theta.data().begin(), l.theta.data().end(), 0.0);
  std::fill(l.phi.data().begin(), l.phi.data().end(), 0.0);
  std::fill(l.w_out.data().begin(), l.w_out.data().end(), 0.0);
  for (std::int64_t i = 0; i < d; ++i) l.w_out.data()[i * d + i] = 1.0;  // identity
  return l;
}

}  // namespace

TEST_CASE("agcn_forward with uniform attention adds the node mean", "[graph]") {
  const std::int64_t v = 4, len = 5, d = 3;
  auto layer = uniform_layer(v, d);
  Rng rng(41);
  Tensor x = randn<double>({v, len, d}, rng);
  Tensor r = agcn_forward(x, layer);
  REQUIRE(r.shape() == x.shape());
  for (std::int64_t vi = 0; vi < v; ++vi)
    for (std::int64_t t = 0; t < len; ++t)
      for (std::int64_t di = 0; di < d; ++di) {
        double mean = 0;
        for (std::int64_t u = 0; u < v; ++u) mean += x.at({u, t, di});
        mean /= static_cast<double>(v);
        CHECK_THAT(r.at({vi, t, di}), WithinAbs(x.at({vi, t, di}) + mean, 1e-12));
      }
}

TEST_CASE("agcn_forward on zero input is zero", "[graph]") {
  Rng rng(42);
  auto layer = AgcnLayerT<double>::init(rng, normalize_adjacency<double>({{0, 1}, {1, 2}}, 3), 4);
  Tensor r = agcn_forward(Tensor::zeros({3, 6, 4}), layer);
  for (double v : r.data()) CHECK(v == 0.0);
}

TEST_CASE("data-dependent mixing rows sum to one", "[graph]") {
  Rng rng(43);
  const std::int64_t v = 5, len = 7, d = 8;
  auto layer = AgcnLayerT<double>::init(rng, normalize_adjacency<double>({{0, 1}, {2, 3}}, v), d);
  Tensor x = randn<double>({v, len, d}, rng);
  Tensor c = agcn_data_matrix(x, layer);
  REQUIRE(c.shape() == Shape{v, v});
  for (std::int64_t i = 0; i < v; ++i) {
    double row = 0;
    for (std::int64_t j = 0; j < v; ++j) row += c.at({i, j});
    CHECK_THAT(row, WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("agcn_forward is permutation-equivariant", "[graph]") {
  Rng rng(44);
  const std::int64_t v = 4, len = 3, d = 5;
  const std::vector<std::int64_t> perm{2, 0, 3, 1};
  const std::vector<std::pair<std::int64_t, std::int64_t>> edges{{0, 1}, {1, 2}, {1, 3}};
  auto layer = AgcnLayerT<double>::init(rng, normalize_adjacency<double>(edges, v), d);

  // relabel the graph and permute the learned matrix consistently
  std::vector<std::pair<std::int64_t, std::int64_t>> pedges;
  for (auto [i, j] : edges) pedges.push_back({perm[i], perm[j]});
  auto player = layer;
  player.a_static = normalize_adjacency<double>(pedges, v);
  player.b_learned = Tensor::zeros({v, v}, true);
  Rng brng(45);
  auto blearn = randn<double>({v, v}, brng, 0.3);
  layer.b_learned = blearn;
  for (std::int64_t i = 0; i < v; ++i)
    for (std::int64_t j = 0; j < v; ++j)
      player.b_learned.data()[perm[i] * v + perm[j]] = blearn.at({i, j});

  Tensor x = randn<double>({v, len, d}, rng);
  Tensor px = Tensor::zeros({v, len, d});
  for (std::int64_t i = 0; i < v; ++i)
    for (std::int64_t t = 0; t < len; ++t)
      for (std::int64_t di = 0; di < d; ++di)
        px.data()[(perm[i] * len + t) * d + di] = x.at({i, t, di});

  Tensor r = agcn_forward(x, layer);
  Tensor pr = agcn_forward(px, player);
  for (std::int64_t i = 0; i < v; ++i)
    for (std::int64_t t = 0; t < len; ++t)
      for (std::int64_t di = 0; di < d; ++di)
        CHECK_THAT(pr.at({perm[i], t, di}), WithinAbs(r.at({i, t, di}), 1e-12));
}

TEST_CASE("agcn gradients pass finite differences", "[graph]") {
  Rng rng(46);
  const std::int64_t v = 3, len = 4, d = 4;
  auto layer = AgcnLayerT<double>::init(rng, normalize_adjacency<double>({{0, 1}, {1, 2}}, v), d);
  Tensor x = randn<double>({v, len, d}, rng, 0.7, true);
  Tensor probe = rand_uniform<double>({v, len, d}, rng, 0.5, 1.5);
  auto f = [&] { return mean_all(mul(agcn_forward(x, layer), probe)); };
  const double err =
      finite_diff_check<double>(f, {x, layer.b_learned, layer.theta, layer.phi, layer.w_out});
  CHECK(err < 1e-4);
}

TEST_CASE("relational_concat shape law and order sensitivity", "[graph]") {
  Rng rng(47);
  Tensor x = randn<double>({5, 7, 4}, rng);
  Tensor r = randn<double>({5, 7, 4}, rng);
  Tensor c = relational_concat(x, r);
  REQUIRE(c.shape() == Shape{5, 7, 8});
  Tensor c2 = relational_concat(r, x);
  CHECK(c.data() != c2.data());
  CHECK_THROWS_AS(relational_concat(x, randn<double>({5, 7, 3}, rng)), ShapeError);
}

TEST_CASE("zero weights on the R half of the re-projection ignore topology", "[graph]") {
  Rng rng(48);
  const std::int64_t v = 3, len = 4, d = 3, inner = 5;
  auto layer = AgcnLayerT<double>::init(rng, normalize_adjacency<double>({{0, 1}}, v), d);
  Tensor w = randn<double>({2 * d, inner}, rng);
  for (std::int64_t row = d; row < 2 * d; ++row)
    for (std::int64_t col = 0; col < inner; ++col) w.data()[row * inner + col] = 0.0;
  Tensor x1 = randn<double>({v, len, d}, rng);
  Tensor z1 = linear(relational_concat(x1, agcn_forward(x1, layer)), w);
  Tensor zr = linear(relational_concat(x1, randn<double>({v, len, d}, rng)), w);
  CHECK(z1.data() == zr.data());
}

TEST_CASE("graph json round trip", "[graph]") {
  auto g = make_graph<double>({{0, 1}, {1, 2}, {1, 3}}, 4);
  const std::string path = "/tmp/ssmg_test_graph.json";
  save_graph_json(g, path);
  auto g2 = load_graph_json<double>(path);
  CHECK(g2.num_nodes == 4);
  CHECK(g2.edges == g.edges);
  CHECK(g2.a_norm.data() == g.a_norm.data());
  std::remove(path.c_str());
}
