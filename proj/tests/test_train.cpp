#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "ssmg/bench.hpp"
#include "ssmg/train.hpp"

using namespace ssmg;
using Catch::Matchers::WithinAbs;

namespace {

// quick-to-train configuration used by the harness tests
TrainConfig tiny_train_config() {
  TrainConfig cfg = desk_train_config();
  cfg.model.feature_dim = 16;
  cfg.model.state_dim = 4;
  cfg.model.num_nodes = 4;
  cfg.provider.dim = 16;
  cfg.data.num_nodes = 4;
  cfg.data.length = 160;
  cfg.data.items = 12;
  cfg.data.seed = 21;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  return cfg;
}

template <typename T>
struct Setup {
  TrainConfig cfg;
  std::vector<SyntheticItem> items;
  TmMambaModelT<T> model;
  QueryEmbeddingProviderT<T> provider;
  explicit Setup(TrainConfig c)
      : cfg(c),
        items(gen_corpus(c.data)),
        model(c.model, make_graph<T>(default_skeleton_edges(c.model.num_nodes), c.model.num_nodes),
              c.seed),
        provider(c.provider) {}
};

}  // namespace

TEST_CASE("adamw first step on a scalar", "[train]") {
  Tensor theta = Tensor::from_vector({1}, {1.0}, true);
  theta.grad()[0] = 1.0;
  AdamWT<double> opt({{"theta", theta}});
  opt.step(0.1, 0.0);
  // mhat = 1, vhat = 1: theta' = 1 - 0.1 / (1 + 1e-8)
  CHECK_THAT(theta.data()[0], WithinAbs(1.0 - 0.1 / (1.0 + 1e-8), 1e-12));
}

TEST_CASE("adamw leaves parameters alone without gradient or decay", "[train]") {
  Tensor theta = Tensor::from_vector({3}, {1.0, -2.0, 0.5}, true);
  AdamWT<double> opt({{"theta", theta}});
  opt.step(0.1, 0.0);  // g = 0, wd = 0
  CHECK(theta.data() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adamw decoupled decay acts alone when g = 0", "[train]") {
  Tensor theta = Tensor::from_vector({1}, {2.0}, true);
  AdamWT<double> opt({{"theta", theta}});  // fresh state
  opt.step(0.1, 0.1);
  CHECK_THAT(theta.data()[0], WithinAbs(2.0 * (1.0 - 0.01), 1e-14));
}

TEST_CASE("adamw rejects non-finite gradients", "[train]") {
  Tensor theta = Tensor::from_vector({1}, {1.0}, true);
  theta.grad()[0] = std::nan("");
  AdamWT<double> opt({{"theta", theta}});
  CHECK_THROWS_AS(opt.step(0.1, 0.0), ValueError);
}

TEST_CASE("adamw matches a hand-coded scalar oracle over 100 steps", "[train]") {
  Rng rng(101);
  Tensor theta = Tensor::from_vector({1}, {0.7}, true);
  AdamWT<double> opt({{"theta", theta}});
  // independent scalar implementation of the decoupled update
  double ref = 0.7, m = 0, v = 0;
  const double lr = 3e-3, wd = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 100; ++t) {
    const double g = rng.normal();
    theta.grad()[0] = g;
    opt.step(lr, wd);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    ref = ref - lr * (mhat / (std::sqrt(vhat) + eps) + wd * ref);
    CHECK_THAT(theta.data()[0], WithinAbs(ref, 1e-12));
  }
}

TEST_CASE("gradient clipping caps the global norm", "[train]") {
  Tensor a = Tensor::from_vector({2}, {0.0, 0.0}, true);
  a.grad() = {3.0, 4.0};
  const double norm = clip_grad_norm<double>({{"a", a}}, 1.0);
  CHECK_THAT(norm, WithinAbs(5.0, 1e-12));
  CHECK_THAT(a.grad()[0], WithinAbs(0.6, 1e-12));
  CHECK_THAT(a.grad()[1], WithinAbs(0.8, 1e-12));
}

TEST_CASE("one epoch of training reduces the loss", "[train]") {
  Setup<double> s(tiny_train_config());
  auto result = train(s.cfg, s.model, s.provider, s.items, {});
  CHECK(result.epoch_loss.back() < result.initial_loss);
}

TEST_CASE("lr = 0 leaves parameters bitwise unchanged", "[train]") {
  auto cfg = tiny_train_config();
  cfg.learning_rate = 0.0;
  Setup<double> s(cfg);
  std::vector<std::vector<double>> before;
  for (auto& [n, p] : s.model.named_params()) before.push_back(p.data());
  train(s.cfg, s.model, s.provider, s.items, {});
  auto params = s.model.named_params();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].second.data() == before[i]);
}

TEST_CASE("training is deterministic under the seed", "[train]") {
  auto cfg = tiny_train_config();
  cfg.epochs = 2;
  Setup<double> s1(cfg), s2(cfg);
  auto r1 = train(s1.cfg, s1.model, s1.provider, s1.items, s1.items);
  auto r2 = train(s2.cfg, s2.model, s2.provider, s2.items, s2.items);
  CHECK(r1.epoch_loss == r2.epoch_loss);
  CHECK(r1.epoch_val_map == r2.epoch_val_map);
  CHECK(r1.metrics.at("epoch_loss") == r2.metrics.at("epoch_loss"));
}

TEST_CASE("training aborts with a diagnostic on divergence", "[train]") {
  auto cfg = tiny_train_config();
  Setup<double> s(cfg);
  // poison one weight so the first forward produces a non-finite loss
  for (auto& [name, p] : s.model.named_params())
    if (name == "embed.w") p.data()[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH(train(s.cfg, s.model, s.provider, s.items, {}),
                    Catch::Matchers::ContainsSubstring("diverged") ||
                        Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("empty corpus is an error", "[train]") {
  Setup<double> s(tiny_train_config());
  CHECK_THROWS_AS(train(s.cfg, s.model, s.provider, {}, {}), ValueError);
}

TEST_CASE("oracle scores evaluate to 100% mAP", "[train]") {
  auto cfg = tiny_train_config();
  cfg.data.items = 30;
  auto items = gen_corpus(cfg.data);
  auto table = evaluate_scored(
      items,
      [](const SyntheticItem& item) {
        std::vector<double> s(item.labels.size());
        for (std::size_t t = 0; t < s.size(); ++t) s[t] = item.labels[t] ? 0.95 : 0.05;
        return s;
      },
      cfg.eval);
  CHECK_THAT(table.average_percent, WithinAbs(100.0, 1e-9));
}

TEST_CASE("random scores land on the oracle-computed chance floor", "[train]") {
  auto cfg = tiny_train_config();
  cfg.data.items = 60;
  auto items = gen_corpus(cfg.data);
  Rng rng(103);
  std::map<const SyntheticItem*, std::vector<double>> cache;
  auto score_fn = [&](const SyntheticItem& item) {
    auto& s = cache[&item];
    if (s.empty()) {
      s.resize(item.labels.size());
      for (auto& v : s) v = rng.uniform(0.01, 0.99);
    }
    return s;
  };
  auto impl = evaluate_scored(items, score_fn, cfg.eval);

  // same predictions through the exhaustive-matching evaluator
  std::vector<EvalItem> eval_items;
  for (const auto& item : items) {
    EvalItem e;
    e.predictions =
        nms(scores_to_segments(score_fn(item), cfg.eval.seg_thresholds), cfg.eval.nms_iou);
    e.ground_truth = item.segments;
    e.query_id = item.query_id;
    eval_items.push_back(std::move(e));
  }
  auto ref = oracle::brute_force_map(eval_items, cfg.eval.map_thresholds);
  CHECK(impl.average_percent < 30.0);  // chance floor, far below a trained model
  CHECK_THAT(impl.average_percent, WithinAbs(ref.average_percent, 1e-9));
}

TEST_CASE("evaluation workers do not change the result", "[train]") {
  auto cfg = tiny_train_config();
  cfg.data.items = 16;
  Setup<double> s(cfg);
  auto t1 = evaluate(s.model, s.provider, s.items, cfg.eval, 1);
  auto t3 = evaluate(s.model, s.provider, s.items, cfg.eval, 3);
  CHECK(t1.map_percent == t3.map_percent);
  CHECK(t1.average_percent == t3.average_percent);
}

TEST_CASE("single-precision training path runs end to end", "[train]") {
  auto cfg = tiny_train_config();
  cfg.dtype = "f32";
  Setup<float> s(cfg);
  auto result = train(s.cfg, s.model, s.provider, s.items, s.items);
  CHECK(std::isfinite(result.epoch_loss.back()));
  CHECK(result.final_table.average_percent >= 0.0);
}

TEST_CASE("memory bench rows and csv", "[train]") {
  BenchConfig cfg;
  cfg.lengths = {256, 512};
  cfg.models = {"recurrent"};
  auto rows = bench_memory(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(!rows[0].oom);
  const double ratio =
      static_cast<double>(rows[1].peak_scalars) / static_cast<double>(rows[0].peak_scalars);
  CHECK(ratio > 1.8);
  CHECK(ratio < 2.2);
  const std::string path = "/tmp/ssmg_bench_test.csv";
  write_bench_csv(rows, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "model,length,peak_scalars,status");
  std::remove(path.c_str());

  cfg.lengths = {512, 256};
  CHECK_THROWS_AS(bench_memory(cfg), ValueError);
  cfg.lengths = {256};
  cfg.models = {"bogus"};
  CHECK_THROWS_AS(bench_memory(cfg), ValueError);
}

TEST_CASE("activation cap produces an oom row instead of a crash", "[train]") {
  BenchConfig cfg;
  cfg.lengths = {256};
  cfg.models = {"attention"};
  cfg.cap_scalars = 100000;  // far below what attention needs at 256
  auto rows = bench_memory(cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].oom);
  CHECK(memory::cap() == 0);  // cap restored
}
