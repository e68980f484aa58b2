#pragma once

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ssmg/annotations.hpp"
#include "ssmg/bench.hpp"
#include "ssmg/checkpoint.hpp"
#include "ssmg/train.hpp"

namespace ssmg::cli {

namespace detail {

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

template <typename T>
SkeletonGraphT<T> graph_for(const std::string& graph_path, std::int64_t num_nodes) {
  if (!graph_path.empty()) return load_graph_json<T>(graph_path);
  return make_graph<T>(default_skeleton_edges(num_nodes), num_nodes);
}

template <typename T>
int run_train(const TrainConfig& cfg, const std::string& train_path, const std::string& val_path,
              const std::string& graph_path, const std::string& out_dir,
              const std::string& metrics_path) {
  std::vector<SyntheticItem> train_items, val_items;
  if (train_path.empty()) {
    auto corpus = gen_corpus(cfg.data);
    auto parts = split(corpus, {cfg.train_fraction, 1.0 - cfg.train_fraction}, cfg.data.seed);
    train_items = std::move(parts[0]);
    val_items = std::move(parts[1]);
  } else {
    train_items = load_corpus_jsonl(train_path);
    if (!val_path.empty()) val_items = load_corpus_jsonl(val_path);
  }

  TrainConfig effective = cfg;
  effective.model.num_nodes = train_items.empty() ? cfg.model.num_nodes : train_items[0].num_nodes;
  effective.model.input_dim = train_items.empty() ? cfg.model.input_dim : train_items[0].channels;
  effective.provider.dim = effective.model.feature_dim;

  auto graph = graph_for<T>(graph_path, effective.model.num_nodes);
  TmMambaModelT<T> model(effective.model, graph, effective.seed);
  QueryEmbeddingProviderT<T> provider(effective.provider);
  auto result = train(effective, model, provider, train_items, val_items);

  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e << ": train loss " << result.epoch_loss[e];
    if (e < result.epoch_val_map.size())
      std::cout << ", val mAP " << result.epoch_val_map[e] << "%";
    std::cout << '\n';
  }

  if (!out_dir.empty()) {
    nlohmann::json extra;
    extra["train_config"] = effective;
    extra["metrics"] = result.metrics;
    save_checkpoint(model, out_dir, extra);
    std::cout << "checkpoint written to " << out_dir << '\n';
  }
  if (!metrics_path.empty()) {
    std::ofstream out(metrics_path);
    if (!out) throw Error("cannot write " + metrics_path);
    out << result.metrics.dump(2) << '\n';
  }
  return 0;
}

template <typename T>
int run_eval(const std::string& ckpt_dir, const std::string& data_path, const std::string& out_json,
             const std::string& out_csv, std::int64_t workers) {
  nlohmann::json extra;
  TmMambaModelT<T> model = load_checkpoint<T>(ckpt_dir, &extra);
  TrainConfig cfg;
  if (extra.contains("train_config")) cfg = extra.at("train_config").get<TrainConfig>();
  cfg.provider.dim = model.config().feature_dim;
  QueryEmbeddingProviderT<T> provider(cfg.provider);

  auto items = load_corpus_jsonl(data_path);
  for (const auto& item : items) {
    if (item.num_nodes != model.config().num_nodes || item.channels != model.config().input_dim)
      throw ShapeError("corpus items (" + std::to_string(item.num_nodes) + " nodes, " +
                       std::to_string(item.channels) + " channels) do not match the checkpoint (" +
                       std::to_string(model.config().num_nodes) + ", " +
                       std::to_string(model.config().input_dim) + ")");
  }
  MapTable table = evaluate(model, provider, items, cfg.eval, workers);
  std::cout << "avg mAP " << table.average_percent << "%\n";
  if (!out_json.empty()) write_map_json(table, out_json);
  if (!out_csv.empty()) write_map_csv(table, out_csv);
  return 0;
}

}  // namespace detail

// Command-line dispatch; returns the process exit code (0 ok, 1 runtime
// failure, 2 usage error).
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"text-controlled selective state-space sequence models over skeleton graphs"};
  app.require_subcommand(1);

  // --- gen-data ---------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic grounding corpus");
  std::string gen_config, gen_out = "corpus.jsonl", gen_graph, gen_train_out, gen_val_out;
  SyntheticConfig gen_cfg;
  double gen_fraction = 5.0 / 6.0;
  std::int64_t gen_items = -1, gen_length = -1, gen_seed = -1;
  gen->add_option("--config", gen_config, "JSON config (synthetic section)");
  gen->add_option("-o,--out", gen_out, "corpus JSONL path");
  gen->add_option("--graph", gen_graph, "skeleton graph JSON to write");
  gen->add_option("--items", gen_items, "number of items");
  gen->add_option("--length", gen_length, "frames per item");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--split-train", gen_train_out, "also write a train split here");
  gen->add_option("--split-val", gen_val_out, "also write a val split here");
  gen->add_option("--fraction", gen_fraction, "train fraction for --split-*");

  // --- train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_train, tr_val, tr_graph, tr_out, tr_metrics;
  std::int64_t tr_seed = -1, tr_epochs = -1, tr_batch = -1, tr_workers = -1;
  double tr_lr = -1;
  std::string tr_dtype;
  bool no_text = false, no_rel = false, unidir = false;
  tr->add_option("--config", tr_config, "TrainConfig JSON");
  tr->add_option("--train", tr_train, "training corpus JSONL (default: generate)");
  tr->add_option("--val", tr_val, "validation corpus JSONL");
  tr->add_option("--graph", tr_graph, "skeleton graph JSON");
  tr->add_option("--out", tr_out, "checkpoint directory");
  tr->add_option("--metrics", tr_metrics, "metrics JSON path");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--epochs", tr_epochs, "epoch count");
  tr->add_option("--batch-size", tr_batch, "batch size");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--dtype", tr_dtype, "f64 or f32");
  tr->add_option("--workers", tr_workers, "evaluation workers");
  tr->add_flag("--no-text-control", no_text, "ablation: concatenation fusion instead");
  tr->add_flag("--no-relational", no_rel, "ablation: drop the relational branch");
  tr->add_flag("--unidirectional", unidir, "ablation: forward scan only");

  // --- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_json = "results.json", ev_csv = "results.csv";
  std::int64_t ev_workers = 1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", ev_data, "corpus JSONL")->required();
  ev->add_option("--out", ev_json, "results JSON path");
  ev->add_option("--csv", ev_csv, "results CSV path");
  ev->add_option("--workers", ev_workers, "evaluation workers");

  // --- bench-memory -------------------------------------------------------
  auto* bm = app.add_subcommand("bench-memory", "peak retained-activation benchmark");
  std::string bm_out = "bench.csv", bm_config;
  std::vector<std::int64_t> bm_lengths;
  std::vector<std::string> bm_models;
  std::int64_t bm_cap = -1;
  bm->add_option("--config", bm_config, "BenchConfig JSON");
  bm->add_option("--lengths", bm_lengths, "sequence lengths (ascending)");
  bm->add_option("--models", bm_models, "subset of tm_mamba,attention,recurrent");
  bm->add_option("--cap", bm_cap, "activation cap in scalars");
  bm->add_option("-o,--out", bm_out, "CSV path");

  // --- augment-annotations --------------------------------------------------
  auto* aug = app.add_subcommand("augment-annotations", "apply temporal-augmentation rules");
  std::string aug_in, aug_out;
  double aug_ratio = 0.8;
  std::string aug_basis = "min";
  bool no_merge = false, no_one_to_many = false;
  aug->add_option("-i,--in", aug_in, "annotations JSONL")->required();
  aug->add_option("-o,--out", aug_out, "output JSONL")->required();
  aug->add_option("--ratio", aug_ratio, "overlap ratio for window merging");
  aug->add_option("--basis", aug_basis, "ratio basis: min | max | either");
  aug->add_flag("--no-merge", no_merge, "skip window merging");
  aug->add_flag("--no-one-to-many", no_one_to_many, "skip one-to-many consolidation");

  // --- stats ----------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "annotation corpus statistics");
  std::string st_in, st_json = "stats.json", st_csv = "stats.csv";
  st->add_option("-i,--in", st_in, "annotations JSONL")->required();
  st->add_option("--json", st_json, "stats JSON path");
  st->add_option("--csv", st_csv, "histogram CSV path");

  std::vector<std::string> argv_copy(args.rbegin(), args.rend());
  try {
    app.parse(argv_copy);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      if (!gen_config.empty()) gen_cfg = detail::load_json_file(gen_config).get<SyntheticConfig>();
      if (gen_items >= 0) gen_cfg.items = gen_items;
      if (gen_length >= 0) gen_cfg.length = gen_length;
      if (gen_seed >= 0) gen_cfg.seed = static_cast<std::uint64_t>(gen_seed);
      auto corpus = gen_corpus(gen_cfg);
      save_corpus_jsonl(corpus, gen_out);
      std::cout << "wrote " << corpus.size() << " items to " << gen_out << '\n';
      if (!gen_graph.empty()) {
        auto graph = make_graph<double>(default_skeleton_edges(gen_cfg.num_nodes), gen_cfg.num_nodes);
        save_graph_json(graph, gen_graph);
      }
      if (!gen_train_out.empty() || !gen_val_out.empty()) {
        auto parts = split(corpus, {gen_fraction, 1.0 - gen_fraction}, gen_cfg.seed);
        if (!gen_train_out.empty()) save_corpus_jsonl(parts[0], gen_train_out);
        if (!gen_val_out.empty()) save_corpus_jsonl(parts[1], gen_val_out);
      }
      return 0;
    }

    if (tr->parsed()) {
      TrainConfig cfg = desk_train_config();
      bool seed_given = tr_seed >= 0;
      if (!tr_config.empty()) {
        const auto j = detail::load_json_file(tr_config);
        cfg = j.get<TrainConfig>();
        seed_given = seed_given || j.contains("seed");
      }
      if (tr_seed >= 0) cfg.seed = static_cast<std::uint64_t>(tr_seed);
      if (!seed_given) {
        if (const char* env = std::getenv("SSMG_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
      }
      if (tr_epochs >= 0) cfg.epochs = tr_epochs;
      if (tr_batch >= 0) cfg.batch_size = tr_batch;
      if (tr_lr >= 0) cfg.learning_rate = tr_lr;
      if (tr_workers >= 0) cfg.workers = tr_workers;
      if (!tr_dtype.empty()) cfg.dtype = tr_dtype;
      if (no_text) cfg.model.text_control = false;
      if (no_rel) cfg.model.relational = false;
      if (unidir) cfg.model.bidirectional = false;
      if (cfg.dtype == "f64")
        return detail::run_train<double>(cfg, tr_train, tr_val, tr_graph, tr_out, tr_metrics);
      if (cfg.dtype == "f32")
        return detail::run_train<float>(cfg, tr_train, tr_val, tr_graph, tr_out, tr_metrics);
      throw ValueError("unknown dtype " + cfg.dtype + " (expected f64 or f32)");
    }

    if (ev->parsed()) {
      const auto manifest = detail::load_json_file(
          (std::filesystem::path(ev_ckpt) / "manifest.json").string());
      const std::string dtype = manifest.value("dtype", "f64");
      if (dtype == "f64") return detail::run_eval<double>(ev_ckpt, ev_data, ev_json, ev_csv, ev_workers);
      if (dtype == "f32") return detail::run_eval<float>(ev_ckpt, ev_data, ev_json, ev_csv, ev_workers);
      throw ValueError("checkpoint has unknown dtype " + dtype);
    }

    if (bm->parsed()) {
      BenchConfig cfg;
      if (!bm_config.empty()) cfg = detail::load_json_file(bm_config).get<BenchConfig>();
      if (!bm_lengths.empty()) cfg.lengths = bm_lengths;
      if (!bm_models.empty()) cfg.models = bm_models;
      if (bm_cap >= 0) cfg.cap_scalars = bm_cap;
      auto rows = bench_memory(cfg);
      write_bench_csv(rows, bm_out);
      for (const auto& r : rows)
        std::cout << r.model << " L=" << r.length << ' '
                  << (r.oom ? "-- out of memory --" : std::to_string(r.peak_scalars)) << '\n';
      return 0;
    }

    if (aug->parsed()) {
      auto items = load_annotations_jsonl(aug_in);
      if (!no_merge) {
        OverlapBasis basis = OverlapBasis::Min;
        if (aug_basis == "max")
          basis = OverlapBasis::Max;
        else if (aug_basis == "either")
          basis = OverlapBasis::Either;
        else if (aug_basis != "min")
          throw ValueError("unknown overlap basis " + aug_basis);
        std::map<std::string, std::vector<AnnotationItem>> by_seq;
        for (auto& item : items) by_seq[item.sequence_id].push_back(item);
        items.clear();
        for (auto& [id, group] : by_seq)
          for (auto& merged : merge_overlapping(group, aug_ratio, basis))
            items.push_back(std::move(merged));
      }
      if (!no_one_to_many) items = one_to_many(items);
      save_annotations_jsonl(items, aug_out);
      std::cout << "wrote " << items.size() << " items to " << aug_out << '\n';
      return 0;
    }

    if (st->parsed()) {
      auto items = load_annotations_jsonl(st_in);
      const auto stats = corpus_stats(items);
      write_stats(stats, st_json, st_csv);
      std::cout << stats.sequences << " sequences, " << stats.annotations << " annotations, "
                << stats.total_segments << " segments\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ssmg::cli
