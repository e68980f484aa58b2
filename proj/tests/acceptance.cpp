// Integration acceptance suite: runs every criterion at its stated tolerance
// and prints one pass/fail line each. Exit code 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "ssmg/annotations.hpp"
#include "ssmg/bench.hpp"
#include "ssmg/gradcheck.hpp"
#include "ssmg/train.hpp"

using namespace ssmg;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s — %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// --- 1: parallel/sequential scan equivalence over selective parameterizations
void criterion1() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  double worst = 0;
  int cases = 0;
  for (int rep = 0; rep < 110; ++rep) {
    const std::int64_t l = 1 + rng.uniform_int(0, 256);
    const std::int64_t v = 1 + rep % 2, d = 2, n = 1 + rep % 4;
    auto proj = SelectionProjectionsT<double>::init(rng, d, n, 0, false);
    TensorT<double> x = randn<double>({v, l, d}, rng);
    auto sel = select_params(x, proj);
    materialize(sel);
    for (std::int64_t vi = 0; vi < v; ++vi)
      for (std::int64_t di = 0; di < d; ++di) {
        std::vector<AffineStep> steps(l);
        for (std::int64_t t = 0; t < l; ++t) {
          steps[t].a.resize(n);
          steps[t].b.resize(n);
          for (std::int64_t ni = 0; ni < n; ++ni) {
            steps[t].a[ni] = sel.abar.at({vi, t, di, ni});
            steps[t].b[ni] = sel.bbar.at({vi, t, di, ni}) * x.at({vi, t, di});
          }
        }
        auto par = scan_parallel<double>(steps, std::vector<double>(n, 0.0));
        std::vector<double> h(n, 0.0);
        for (std::int64_t t = 0; t < l; ++t)
          for (std::int64_t ni = 0; ni < n; ++ni) {
            h[ni] = steps[t].a[ni] * h[ni] + steps[t].b[ni];
            worst = std::max(worst, std::abs(par[t][ni] - h[ni]));
          }
        ++cases;
      }
  }
  const double secs = seconds_since(t0);
  report(1, "scan equivalence", worst < 1e-10 && secs < 10.0,
         fmt("%d lane scans over L in {1..257}, max abs dev %.2e, %.1f s", cases, worst, secs));
}

// --- 2: LTI recurrence == global convolution
void criterion2() {
  Rng rng(1002);
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rep % 6;
    const std::size_t len = 8 + static_cast<std::size_t>(rng.uniform_int(0, 56));
    std::vector<double> a, b, c, x(len);
    const double delta = rng.uniform(0.05, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(rng.uniform(-3.0, -0.1));
      b.push_back(rng.uniform(-1.0, 1.0));
      c.push_back(rng.uniform(-1.0, 1.0));
    }
    for (auto& v : x) v = rng.normal();
    auto disc = discretize_zoh<double>(a, b, delta);
    std::vector<DiscreteSsmParams> params(len, disc);
    std::vector<std::vector<double>> cs(len, c);
    auto rec = scan_sequential<double>(params, cs, x);
    auto conv = conv_apply<double>(x, lti_kernel<double>(disc.abar, disc.bbar, c, len));
    for (std::size_t t = 0; t < len; ++t)
      worst = std::max(worst, std::abs(rec.y[t] - conv[t]) / std::max(1.0, std::abs(rec.y[t])));
  }
  report(2, "LTI tri-equivalence", worst < 1e-9, fmt("50 systems, max rel err %.2e", worst));
}

// --- 3: ZOH correctness and series-branch continuity
void criterion3() {
  auto d = discretize_zoh<double>({-1.0}, {1.0}, std::log(2.0));
  const double e1 = std::abs(d.abar[0] - 0.5);
  const double e2 = std::abs(d.bbar[0] - 0.5);
  auto lo = discretize_zoh<double>({-1.0}, {1.0}, kZohSeriesThreshold * (1 - 1e-9));
  auto hi = discretize_zoh<double>({-1.0}, {1.0}, kZohSeriesThreshold * (1 + 1e-9));
  const double jump = std::abs(lo.bbar[0] - hi.bbar[0]);
  report(3, "ZOH correctness", e1 < 1e-12 && e2 < 1e-12 && jump < 1e-8,
         fmt("abar err %.2e, bbar err %.2e, branch jump %.2e", e1, e2, jump));
}

// --- 4: gated-recurrence identity
void criterion4() {
  Rng rng(1004);
  double worst = 0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::int64_t l = 1 + rng.uniform_int(0, 32);
    const std::int64_t dq = 1 + rep % 4;
    std::vector<double> xs(l), qv(dq), w(1 + dq);
    for (auto& v : xs) v = rng.normal();
    for (auto& v : qv) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    const double bias = rng.normal();
    auto href = gated_rnn_reference<double>(xs, qv, w, bias);
    SelectedParamsT<double> sel;
    sel.a = TensorT<double>::from_vector({1, 1}, {-1.0});
    sel.b = TensorT<double>::full({1, l, 1}, 1.0);
    sel.c = TensorT<double>::full({1, l, 1}, 1.0);
    std::vector<double> dv(l);
    for (std::int64_t t = 0; t < l; ++t) {
      double z = w[0] * xs[t] + bias;
      for (std::int64_t j = 0; j < dq; ++j) z += w[1 + j] * qv[j];
      dv[t] = detail::stable_softplus(z);
    }
    sel.delta = TensorT<double>::from_vector({1, l, 1}, dv);
    TensorT<double> y = selective_scan(TensorT<double>::from_vector({1, l, 1}, xs), sel);
    for (std::int64_t t = 0; t < l; ++t)
      worst = std::max(worst, std::abs(y.at({0, t, 0}) - href[static_cast<std::size_t>(t)]));
  }
  report(4, "gated-recurrence identity", worst < 1e-10, fmt("50 draws, max abs dev %.2e", worst));
}

// --- 5: end-to-end gradient fidelity on the tiny model
void criterion5() {
  const auto t0 = Clock::now();
  ModelConfig mc;
  mc.feature_dim = 8;
  mc.num_blocks = 1;
  mc.state_dim = 4;
  mc.num_nodes = 4;
  mc.expansion = 1;
  mc.input_dim = 3;
  TmMambaModelT<double> model(mc, make_graph<double>(default_skeleton_edges(4), 4), 1005);
  Rng rng(1006);
  TensorT<double> motion = randn<double>({4, 12, 3}, rng);
  TensorT<double> q = randn<double>({8}, rng, 1.0, true);
  TensorT<double> labels = TensorT<double>::zeros({12});
  for (std::int64_t t = 4; t < 8; ++t) labels.data()[t] = 1.0;
  std::vector<TensorT<double>> leaves{q};
  std::size_t count = static_cast<std::size_t>(q.numel());
  for (auto& [name, p] : model.named_params()) {
    leaves.push_back(p);
    count += static_cast<std::size_t>(p.numel());
  }
  const double err = finite_diff_check<double>(
      [&] { return loss_ce(model.forward(motion, q), labels); }, leaves, 3e-4);
  const double secs = seconds_since(t0);
  report(5, "gradient fidelity", err < 1e-4 && secs < 120.0,
         fmt("%zu parameters, max rel err %.2e, %.1f s", count, err, secs));
}

// --- 6: evaluation oracle equivalence
void criterion6() {
  Rng rng(1007);
  auto items = oracle::random_items(rng, 200);
  auto impl = map_suite(items);
  auto ref = oracle::brute_force_map(items, map_iou_grid());
  bool equal = impl.average_percent == ref.average_percent;
  for (std::size_t i = 0; i < impl.map_percent.size(); ++i)
    equal = equal && impl.map_percent[i] == ref.map_percent[i];

  EvalItem exact{{{{10, 20}, 0.9}}, {{10, 20}}, 0};
  EvalItem half{{{{0, 10}, 0.9}, {{40, 50}, 0.8}}, {{40, 50}}, 0};
  EvalItem gated{{{{0, 4}, 0.9}}, {{0, 10}}, 0};
  const bool hand = average_precision({exact}, 0.5) == 1.0 &&
                    average_precision({half}, 0.5) == 0.5 &&
                    average_precision({gated}, 0.5) == 0.0 &&
                    average_precision({gated}, 0.3) == 1.0;
  report(6, "evaluation oracle", equal && hand,
         fmt("200 items oracle %s, hand cases {1.0, 0.5, 0.0} %s", equal ? "exact" : "DIFFERS",
             hand ? "exact" : "DIFFER"));
}

// --- 7: memory scaling
void criterion7() {
  const auto t0 = Clock::now();
  BenchConfig cfg;  // lengths 256..4096, cap 256M scalars
  auto rows = bench_memory(cfg);
  std::map<std::string, std::map<std::int64_t, BenchRow>> by;
  for (const auto& r : rows) by[r.model][r.length] = r;

  bool ok = true;
  std::string detail;
  for (const std::int64_t l : {256, 512, 1024}) {
    const double rt = static_cast<double>(by["tm_mamba"][2 * l].peak_scalars) /
                      static_cast<double>(by["tm_mamba"][l].peak_scalars);
    const double ra = static_cast<double>(by["attention"][2 * l].peak_scalars) /
                      static_cast<double>(by["attention"][l].peak_scalars);
    ok = ok && rt > 1.8 && rt < 2.2 && !by["tm_mamba"][2 * l].oom;
    ok = ok && ra > 3.5 && ra < 4.5 && !by["attention"][2 * l].oom && !by["attention"][l].oom;
    detail += fmt("L%lld tm %.2f attn %.2f; ", static_cast<long long>(l), rt, ra);
  }
  ok = ok && by["attention"][4096].oom;
  detail += by["attention"][4096].oom ? "attention@4096 out-of-memory; " : "attention@4096 RAN; ";
  const double tm_slope = static_cast<double>(by["tm_mamba"][1024].peak_scalars -
                                              by["tm_mamba"][512].peak_scalars) /
                          512.0;
  const double rnn_slope = static_cast<double>(by["recurrent"][1024].peak_scalars -
                                               by["recurrent"][512].peak_scalars) /
                           512.0;
  ok = ok && rnn_slope < tm_slope;
  detail += fmt("slopes rnn %.0f < tm %.0f, %.0f s", rnn_slope, tm_slope, seconds_since(t0));
  report(7, "memory scaling", ok, detail);
}

// --- 8 and 9: directional ablations and the trainability floor
void criteria89() {
  const auto t0 = Clock::now();
  TrainConfig base = desk_train_config();
  base.dtype = "f32";  // single precision is the speed-run dtype
  base.epochs = 3;
  base.learning_rate = 2e-3;
  base.data.items = 2400;  // 2000 train / 400 val after the 5:6 split
  base.data.seed = 424242;

  auto corpus = gen_corpus(base.data);
  auto parts = split(corpus, {base.train_fraction, 1.0 - base.train_fraction}, base.data.seed);

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::map<std::string, std::vector<double>> arm_map;
  std::vector<std::pair<std::string, ModelConfig>> arms;
  {
    ModelConfig full = base.model;
    ModelConfig norel = base.model;
    norel.relational = false;
    ModelConfig unidir = base.model;
    unidir.bidirectional = false;
    ModelConfig notext = base.model;
    notext.text_control = false;
    arms = {{"full", full},
            {"no_relational", norel},
            {"unidirectional", unidir},
            {"no_text_control", notext}};
  }

  for (const auto& [name, mc] : arms) {
    for (const auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model = mc;
      cfg.seed = seed;
      auto graph =
          make_graph<float>(default_skeleton_edges(cfg.model.num_nodes), cfg.model.num_nodes);
      TmMambaModelT<float> model(cfg.model, graph, seed);
      QueryEmbeddingProviderT<float> provider(cfg.provider);
      auto result = train(cfg, model, provider, parts[0], parts[1]);
      arm_map[name].push_back(result.final_table.average_percent);
      std::printf("    %-16s seed %llu: avg mAP %6.2f%%  (%.0f s elapsed)\n", name.c_str(),
                  static_cast<unsigned long long>(seed), result.final_table.average_percent,
                  seconds_since(t0));
      std::fflush(stdout);
    }
  }

  bool order_ok = true;
  double min_gap = 1e9;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const double full = arm_map["full"][s];
    const double norel = arm_map["no_relational"][s];
    const double unid = arm_map["unidirectional"][s];
    const double notext = arm_map["no_text_control"][s];
    order_ok = order_ok && full >= norel && full >= unid && norel >= notext && unid >= notext;
    min_gap = std::min(min_gap, full - notext);
  }
  const double secs = seconds_since(t0);
  report(8, "directional ablation", order_ok && min_gap >= 5.0 && secs < 1800.0,
         fmt("ordering %s per seed, min full-vs-fusion gap %.1f pts, %.0f s",
             order_ok ? "holds" : "BROKEN", min_gap, secs));

  bool floor_ok = true;
  std::string detail = "full-model mAP:";
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    floor_ok = floor_ok && arm_map["full"][s] >= 60.0;
    detail += fmt(" %.1f%%", arm_map["full"][s]);
  }
  report(9, "trainability floor", floor_ok, detail + " (floor 60%, 3/3 seeds)");
}

// --- 10: annotation rules
void criterion10() {
  bool ok = true;
  std::string detail;

  auto a = AnnotationItem{"s", "walks", {{0, 100}}, 200};
  auto b = AnnotationItem{"s", "waves", {{10, 95}}, 200};
  auto merged = merge_overlapping({a, b}, 0.8);
  ok = ok && merged.size() == 1 && merged[0].segments == std::vector<Segment>{{0, 100}} &&
       merged[0].text == "walks; waves";

  auto c = AnnotationItem{"s", "sits", {{50, 150}}, 200};
  ok = ok && merge_overlapping({a, c}, 0.8).size() == 2;

  auto o = one_to_many({AnnotationItem{"s", "walks", {{0, 10}}, 200},
                        AnnotationItem{"s", "walks", {{20, 30}}, 200}});
  ok = ok && o.size() == 1 && o[0].segments == (std::vector<Segment>{{0, 10}, {20, 30}});
  auto o2 = one_to_many({AnnotationItem{"s", "walks", {{0, 10}}, 200},
                         AnnotationItem{"s", "walks", {{5, 15}}, 200}});
  ok = ok && o2.size() == 1 && o2[0].segments == std::vector<Segment>{{0, 15}};
  detail += ok ? "hand cases exact; " : "hand cases DIFFER; ";

  Rng rng(1010);
  int bad = 0;
  const std::vector<std::string> words{"walk", "turn", "jump", "sit"};
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<AnnotationItem> corpus;
    const std::int64_t len = 60 + rng.uniform_int(0, 140);
    const std::int64_t n = 1 + rng.uniform_int(0, 8);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t s = rng.uniform_int(0, len - 2);
      corpus.push_back(
          {"s", words[rng.uniform_int(0, 3)], {{s, rng.uniform_int(s + 1, len)}}, len});
    }
    auto covered = [](const std::vector<AnnotationItem>& items) {
      std::set<std::int64_t> f;
      for (const auto& it : items)
        for (const auto& sg : it.segments)
          for (std::int64_t t = sg.start; t < sg.end; ++t) f.insert(t);
      return f;
    };
    const auto before = covered(corpus);
    auto m1 = merge_overlapping(corpus, 0.8);
    if (merge_overlapping(m1, 0.8) != m1 || covered(m1) != before) ++bad;
    auto u1 = one_to_many(corpus);
    if (one_to_many(u1) != u1 || covered(u1) != before) ++bad;
  }
  ok = ok && bad == 0;
  detail += fmt("%d/1000 fuzz violations", bad);
  report(10, "annotation rules", ok, detail);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion10();
  criteria89();
  std::printf("%s\n", failures == 0 ? "all criteria passed" : "FAILURES PRESENT");
  return failures == 0 ? 0 : 1;
}
