#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "ssmg/model.hpp"

namespace ssmg {

// Checkpoint layout: a directory holding manifest.json (config, graph, dtype,
// parameter names/shapes, optional tool metadata) plus one raw little-endian
// array file per parameter.

template <typename T>
inline const char* dtype_name();
template <>
inline const char* dtype_name<double>() {
  return "f64";
}
template <>
inline const char* dtype_name<float>() {
  return "f32";
}

namespace detail {

inline std::string param_file_name(std::string name) {
  for (auto& c : name)
    if (c == '.' || c == '/') c = '_';
  return name + ".bin";
}

template <typename T>
void write_raw(const std::string& path, const std::vector<T>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <typename T>
void read_raw(const std::string& path, std::vector<T>& data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(T)))
    throw Error("short read in " + path);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const TmMambaModelT<T>& model, const std::string& dir,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ssmg-checkpoint-v1";
  manifest["dtype"] = dtype_name<T>();
  manifest["config"] = model.config();
  nlohmann::json graph;
  graph["num_nodes"] = model.graph().num_nodes;
  auto earr = nlohmann::json::array();
  for (auto [i, j] : model.graph().edges) earr.push_back({i, j});
  graph["edges"] = earr;
  manifest["graph"] = graph;
  manifest["extra"] = extra;
  auto params = nlohmann::json::array();
  for (const auto& [name, t] : model.named_params()) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["file"] = detail::param_file_name(name);
    params.push_back(p);
    detail::write_raw<T>((fs::path(dir) / detail::param_file_name(name)).string(), t.data());
  }
  manifest["params"] = params;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir);
  out << manifest.dump(2) << '\n';
}

template <typename T>
nlohmann::json read_manifest(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) throw Error("cannot open checkpoint manifest in " + dir);
  nlohmann::json manifest;
  in >> manifest;
  if (manifest.value("format", "") != "ssmg-checkpoint-v1")
    throw Error("unrecognized checkpoint format in " + dir);
  if (manifest.value("dtype", "") != dtype_name<T>())
    throw Error("checkpoint dtype is " + manifest.value("dtype", "?") + ", requested " +
                dtype_name<T>());
  return manifest;
}

template <typename T>
TmMambaModelT<T> load_checkpoint(const std::string& dir,
                                 nlohmann::json* extra_out = nullptr) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest = read_manifest<T>(dir);
  ModelConfig cfg = manifest.at("config").get<ModelConfig>();
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  for (const auto& e : manifest.at("graph").at("edges"))
    edges.emplace_back(e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>());
  auto graph = make_graph<T>(std::move(edges),
                             manifest.at("graph").at("num_nodes").get<std::int64_t>());
  TmMambaModelT<T> model(cfg, std::move(graph), /*seed=*/0);
  auto params = model.named_params();
  std::size_t loaded = 0;
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    bool found = false;
    for (auto& [pname, t] : params) {
      if (pname != name) continue;
      const Shape shape = p.at("shape").get<Shape>();
      if (shape != t.shape())
        throw ShapeError("checkpoint param " + name + " has shape " + shape_str(shape) +
                         ", model expects " + shape_str(t.shape()));
      detail::read_raw<T>((fs::path(dir) / p.at("file").get<std::string>()).string(), t.data());
      found = true;
      ++loaded;
      break;
    }
    if (!found) throw Error("checkpoint param " + name + " not present in model");
  }
  if (loaded != params.size())
    throw Error("checkpoint in " + dir + " is missing " + std::to_string(params.size() - loaded) +
                " model parameters");
  if (extra_out) *extra_out = manifest.value("extra", nlohmann::json::object());
  return model;
}

}  // namespace ssmg
