#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmg/common.hpp"

namespace ssmg {

// Inference and evaluation protocol: frame scores -> candidate segments via a
// threshold sweep, greedy NMS, then average precision over an IoU grid.

struct Segment {
  std::int64_t start = 0;  // inclusive
  std::int64_t end = 0;    // exclusive
  std::int64_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

inline Segment make_segment(std::int64_t start, std::int64_t end) {
  if (start < 0 || start >= end)
    throw ValueError("segment [" + std::to_string(start) + "," + std::to_string(end) +
                     ") is not a valid interval");
  return Segment{start, end};
}

struct ScoredSegment {
  Segment segment;
  double score = 0.0;
  bool operator==(const ScoredSegment&) const = default;
};

struct EvalItem {
  std::vector<ScoredSegment> predictions;
  std::vector<Segment> ground_truth;  // possibly several per query
  std::int64_t query_id = 0;
};

// Frame-count IoU on end-exclusive integer intervals.
inline double iou(const Segment& a, const Segment& b) {
  const std::int64_t inter =
      std::max<std::int64_t>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const std::int64_t uni = a.length() + b.length() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// For each threshold, every maximal run of frames with s_t >= theta becomes a
// candidate scored by its mean activation; candidates from all thresholds are
// pooled.
inline std::vector<ScoredSegment> scores_to_segments(const std::vector<double>& s,
                                                     const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ValueError("scores_to_segments: empty threshold list");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] <= 0.0 || thresholds[i] >= 1.0)
      throw ValueError("scores_to_segments: thresholds must lie in (0,1)");
    if (i && thresholds[i] <= thresholds[i - 1])
      throw ValueError("scores_to_segments: thresholds must be sorted ascending");
  }
  std::vector<ScoredSegment> out;
  const std::int64_t len = static_cast<std::int64_t>(s.size());
  for (const double theta : thresholds) {
    std::int64_t t = 0;
    while (t < len) {
      if (s[t] < theta) {
        ++t;
        continue;
      }
      std::int64_t e = t;
      double acc = 0.0;
      while (e < len && s[e] >= theta) acc += s[e++];
      out.push_back({Segment{t, e}, acc / static_cast<double>(e - t)});
      t = e;
    }
  }
  return out;
}

namespace detail {
// Deterministic candidate order: score descending, then earlier start, then
// shorter segment.
inline bool scored_before(const ScoredSegment& a, const ScoredSegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
  return a.segment.length() < b.segment.length();
}
}  // namespace detail

// Greedy suppression: keep a candidate iff its IoU with every kept one stays
// below the threshold.
inline std::vector<ScoredSegment> nms(std::vector<ScoredSegment> candidates,
                                      double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold >= 1.0)
    throw ValueError("nms: iou_threshold must lie in [0,1)");
  std::sort(candidates.begin(), candidates.end(), detail::scored_before);
  std::vector<ScoredSegment> kept;
  for (const auto& c : candidates) {
    bool keep = true;
    for (const auto& k : kept)
      if (iou(c.segment, k.segment) >= iou_threshold) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(c);
  }
  return kept;
}

// Interpolation-free detection AP: pool predictions over items by descending
// score (ties broken by item index, then start, then length, for determinism),
// match each greedily to the highest-IoU still-unmatched ground truth of its
// item at IoU >= threshold, and sum precision at true-positive ranks.
inline double average_precision(const std::vector<EvalItem>& items, double iou_threshold) {
  std::size_t total_gt = 0;
  for (const auto& it : items) total_gt += it.ground_truth.size();
  if (total_gt == 0) throw ValueError("average_precision: no ground-truth segments");

  struct Pooled {
    ScoredSegment pred;
    std::size_t item;
  };
  std::vector<Pooled> pool;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (const auto& p : items[i].predictions) pool.push_back({p, i});
  std::sort(pool.begin(), pool.end(), [](const Pooled& a, const Pooled& b) {
    if (a.pred.score != b.pred.score) return a.pred.score > b.pred.score;
    if (a.item != b.item) return a.item < b.item;
    return detail::scored_before(a.pred, b.pred);
  });

  std::vector<std::vector<bool>> used(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) used[i].assign(items[i].ground_truth.size(), false);

  double ap = 0.0;
  std::size_t tp = 0;
  const double recall_step = 1.0 / static_cast<double>(total_gt);
  for (std::size_t rank = 0; rank < pool.size(); ++rank) {
    const auto& entry = pool[rank];
    const auto& gts = items[entry.item].ground_truth;
    std::size_t best = gts.size();
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[entry.item][g]) continue;
      const double v = iou(entry.pred.segment, gts[g]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best < gts.size()) {
      used[entry.item][best] = true;
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1) * recall_step;
    }
  }
  return ap;
}

struct MapTable {
  std::vector<double> thresholds;            // the IoU grid
  std::vector<double> map_percent;           // mAP per threshold, in percent
  double average_percent = 0.0;
  std::map<std::int64_t, std::vector<double>> per_query_percent;  // query_id -> AP per threshold
};

inline const std::vector<double>& map_iou_grid() {
  static const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  return grid;
}

// AP per query set per threshold, averaged over query sets.
inline MapTable map_suite(const std::vector<EvalItem>& items,
                          const std::vector<double>& thresholds = map_iou_grid()) {
  if (items.empty()) throw ValueError("map_suite: no items");
  std::map<std::int64_t, std::vector<EvalItem>> by_query;
  for (const auto& it : items) by_query[it.query_id].push_back(it);

  MapTable table;
  table.thresholds = thresholds;
  for (auto& [qid, group] : by_query) table.per_query_percent[qid] = {};
  for (const double th : thresholds) {
    double acc = 0.0;
    for (auto& [qid, group] : by_query) {
      const double ap = average_precision(group, th) * 100.0;
      table.per_query_percent[qid].push_back(ap);
      acc += ap;
    }
    table.map_percent.push_back(acc / static_cast<double>(by_query.size()));
  }
  double avg = 0.0;
  for (const double v : table.map_percent) avg += v;
  table.average_percent = avg / static_cast<double>(table.map_percent.size());
  return table;
}

inline nlohmann::json map_table_json(const MapTable& t) {
  nlohmann::json j;
  nlohmann::json m;
  char key[16];
  for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
    std::snprintf(key, sizeof key, "%.1f", t.thresholds[i]);
    m[key] = t.map_percent[i];
  }
  m["avg"] = t.average_percent;
  j["map"] = m;
  auto pq = nlohmann::json::array();
  for (const auto& [qid, aps] : t.per_query_percent) {
    nlohmann::json e;
    e["query_id"] = qid;
    nlohmann::json am;
    for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
      std::snprintf(key, sizeof key, "%.1f", t.thresholds[i]);
      am[key] = aps[i];
    }
    e["ap"] = am;
    pq.push_back(e);
  }
  j["per_query"] = pq;
  return j;
}

inline void write_map_json(const MapTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << map_table_json(t).dump(2) << '\n';
}

inline void write_map_csv(const MapTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "threshold,map\n";
  for (std::size_t i = 0; i < t.thresholds.size(); ++i)
    out << t.thresholds[i] << ',' << t.map_percent[i] << '\n';
  out << "avg," << t.average_percent << '\n';
}

}  // namespace ssmg
