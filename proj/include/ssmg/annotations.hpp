#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmg/eval.hpp"

namespace ssmg {

// Temporal-augmentation rules over generic annotation corpora: overlap-based
// window merging, one-to-many text->segments consolidation, and corpus
// statistics.

struct AnnotationItem {
  std::string sequence_id;
  std::string text;
  std::vector<Segment> segments;  // sorted by start, inside [0, sequence_length)
  std::int64_t sequence_length = 0;
  bool operator==(const AnnotationItem&) const = default;
};

inline void validate_annotation(const AnnotationItem& item) {
  for (std::size_t i = 0; i < item.segments.size(); ++i) {
    const auto& s = item.segments[i];
    if (s.start < 0 || s.start >= s.end || s.end > item.sequence_length)
      throw ValueError("annotation segment [" + std::to_string(s.start) + "," +
                       std::to_string(s.end) + ") outside sequence of length " +
                       std::to_string(item.sequence_length));
    if (i && item.segments[i - 1].start > s.start)
      throw ValueError("annotation segments must be sorted by start");
  }
}

// How "a certain ratio of one of them" is measured: against the shorter
// segment (permissive), the longer one, or either.
enum class OverlapBasis { Min, Max, Either };

namespace detail {

inline bool qualifies(const Segment& a, const Segment& b, double ratio, OverlapBasis basis) {
  const std::int64_t overlap =
      std::max<std::int64_t>(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  if (overlap <= 0) return false;
  const double lo = static_cast<double>(std::min(a.length(), b.length()));
  const double hi = static_cast<double>(std::max(a.length(), b.length()));
  const double ov = static_cast<double>(overlap);
  switch (basis) {
    case OverlapBasis::Min: return ov >= ratio * lo;
    case OverlapBasis::Max: return ov >= ratio * hi;
    case OverlapBasis::Either: return ov >= ratio * lo || ov >= ratio * hi;
  }
  return false;
}

struct Atom {
  std::string text;
  Segment seg;
};

inline bool atom_before(const Atom& a, const Atom& b) {
  if (a.seg.start != b.seg.start) return a.seg.start < b.seg.start;
  if (a.seg.end != b.seg.end) return a.seg.end < b.seg.end;
  return a.text < b.text;
}

}  // namespace detail

// Time-window merging for the annotations of one sequence: any two annotated
// segments whose overlap reaches the ratio are replaced by their union
// carrying the concatenated texts, iterated to a fixpoint. Processing order is
// canonical (ascending start), so the result does not depend on input order.
inline std::vector<AnnotationItem> merge_overlapping(const std::vector<AnnotationItem>& items,
                                                     double ratio,
                                                     OverlapBasis basis = OverlapBasis::Min) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValueError("merge_overlapping: ratio must be in (0,1]");
  if (items.empty()) return {};
  const std::string seq_id = items[0].sequence_id;
  const std::int64_t seq_len = items[0].sequence_length;
  std::vector<detail::Atom> atoms;
  for (const auto& item : items) {
    if (item.sequence_id != seq_id)
      throw ValueError("merge_overlapping operates on the annotations of one sequence");
    validate_annotation(item);
    for (const auto& s : item.segments) atoms.push_back({item.text, s});
  }
  std::sort(atoms.begin(), atoms.end(), detail::atom_before);

  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t i = 0; i < atoms.size() && !merged; ++i)
      for (std::size_t j = i + 1; j < atoms.size() && !merged; ++j) {
        if (!detail::qualifies(atoms[i].seg, atoms[j].seg, ratio, basis)) continue;
        detail::Atom joined;
        joined.seg = {std::min(atoms[i].seg.start, atoms[j].seg.start),
                      std::max(atoms[i].seg.end, atoms[j].seg.end)};
        joined.text = atoms[i].text + "; " + atoms[j].text;
        atoms.erase(atoms.begin() + j);
        atoms[i] = std::move(joined);
        std::sort(atoms.begin(), atoms.end(), detail::atom_before);
        merged = true;
      }
  }

  std::vector<AnnotationItem> out;
  for (const auto& a : atoms) out.push_back({seq_id, a.text, {a.seg}, seq_len});
  return out;
}

// One-to-many consolidation: items sharing (sequence_id, exact text) merge
// into a single item whose segments are the sorted union, with overlapping
// segments coalesced.
inline std::vector<AnnotationItem> one_to_many(const std::vector<AnnotationItem>& items) {
  std::map<std::pair<std::string, std::string>, AnnotationItem> grouped;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& item : items) {
    validate_annotation(item);
    const auto key = std::make_pair(item.sequence_id, item.text);
    auto it = grouped.find(key);
    if (it == grouped.end()) {
      grouped[key] = item;
      order.push_back(key);
    } else {
      for (const auto& s : item.segments) it->second.segments.push_back(s);
    }
  }
  std::vector<AnnotationItem> out;
  for (const auto& key : order) {
    AnnotationItem item = grouped[key];
    std::sort(item.segments.begin(), item.segments.end(), [](const Segment& a, const Segment& b) {
      return a.start != b.start ? a.start < b.start : a.end < b.end;
    });
    std::vector<Segment> coalesced;
    for (const auto& s : item.segments) {
      if (!coalesced.empty() && s.start < coalesced.back().end)
        coalesced.back().end = std::max(coalesced.back().end, s.end);
      else
        coalesced.push_back(s);
    }
    item.segments = std::move(coalesced);
    out.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

struct StatSummary {
  double mean = 0, min = 0, max = 0;
  std::vector<double> bin_edges;       // nbins + 1 edges
  std::vector<std::int64_t> counts;    // nbins
};

struct CorpusStats {
  std::int64_t sequences = 0;
  std::int64_t annotations = 0;
  std::int64_t total_segments = 0;
  StatSummary frame_number;     // sequence length per distinct sequence
  StatSummary text_tokens;      // whitespace tokens per query
  StatSummary grounded_ratio;   // sum of segment lengths over sequence length
  StatSummary segment_counts;   // segments per query
};

namespace detail {

inline StatSummary summarize(std::vector<double> values, int nbins = 10) {
  StatSummary s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double acc = 0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());
  const double width = (s.max > s.min) ? (s.max - s.min) / nbins : 1.0;
  for (int b = 0; b <= nbins; ++b) s.bin_edges.push_back(s.min + width * b);
  s.counts.assign(nbins, 0);
  for (double v : values) {
    int b = static_cast<int>((v - s.min) / width);
    if (b >= nbins) b = nbins - 1;
    s.counts[b]++;
  }
  return s;
}

inline std::int64_t count_tokens(const std::string& text) {
  std::istringstream in(text);
  std::string tok;
  std::int64_t n = 0;
  while (in >> tok) ++n;
  return n;
}

}  // namespace detail

inline CorpusStats corpus_stats(const std::vector<AnnotationItem>& items) {
  if (items.empty()) throw ValueError("corpus_stats: empty corpus");
  CorpusStats st;
  st.annotations = static_cast<std::int64_t>(items.size());
  std::map<std::string, std::int64_t> seq_len;
  std::vector<double> tokens, ratios, counts;
  for (const auto& item : items) {
    validate_annotation(item);
    seq_len[item.sequence_id] = item.sequence_length;
    tokens.push_back(static_cast<double>(detail::count_tokens(item.text)));
    std::int64_t covered = 0;
    for (const auto& s : item.segments) covered += s.length();
    ratios.push_back(static_cast<double>(covered) / static_cast<double>(item.sequence_length));
    counts.push_back(static_cast<double>(item.segments.size()));
    st.total_segments += static_cast<std::int64_t>(item.segments.size());
  }
  st.sequences = static_cast<std::int64_t>(seq_len.size());
  std::vector<double> frames;
  for (const auto& [id, len] : seq_len) frames.push_back(static_cast<double>(len));
  st.frame_number = detail::summarize(std::move(frames));
  st.text_tokens = detail::summarize(std::move(tokens));
  st.grounded_ratio = detail::summarize(std::move(ratios));
  st.segment_counts = detail::summarize(std::move(counts));
  return st;
}

inline nlohmann::json summary_json(const StatSummary& s) {
  return nlohmann::json{
      {"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"bin_edges", s.bin_edges},
      {"counts", s.counts}};
}

inline nlohmann::json stats_json(const CorpusStats& st) {
  return nlohmann::json{{"sequences", st.sequences},
                        {"annotations", st.annotations},
                        {"total_segments", st.total_segments},
                        {"frame_number", summary_json(st.frame_number)},
                        {"text_tokens", summary_json(st.text_tokens)},
                        {"grounded_ratio", summary_json(st.grounded_ratio)},
                        {"segment_counts", summary_json(st.segment_counts)}};
}

inline void write_stats(const CorpusStats& st, const std::string& json_path,
                        const std::string& csv_path) {
  {
    std::ofstream out(json_path);
    if (!out) throw Error("cannot write " + json_path);
    out << stats_json(st).dump(2) << '\n';
  }
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot write " + csv_path);
  out << "metric,bin_lo,bin_hi,count\n";
  auto rows = [&](const char* name, const StatSummary& s) {
    for (std::size_t b = 0; b < s.counts.size(); ++b)
      out << name << ',' << s.bin_edges[b] << ',' << s.bin_edges[b + 1] << ',' << s.counts[b]
          << '\n';
  };
  rows("frame_number", st.frame_number);
  rows("text_tokens", st.text_tokens);
  rows("grounded_ratio", st.grounded_ratio);
  rows("segment_counts", st.segment_counts);
}

// ---------------------------------------------------------------------------
// JSONL ingestion
// ---------------------------------------------------------------------------

inline nlohmann::json annotation_to_json(const AnnotationItem& item) {
  auto segs = nlohmann::json::array();
  for (const auto& s : item.segments) segs.push_back({s.start, s.end});
  return nlohmann::json{{"sequence_id", item.sequence_id},
                        {"text", item.text},
                        {"segments", segs},
                        {"sequence_length", item.sequence_length}};
}

inline AnnotationItem annotation_from_json(const nlohmann::json& j) {
  AnnotationItem item;
  item.sequence_id = j.at("sequence_id").get<std::string>();
  item.text = j.at("text").get<std::string>();
  item.sequence_length = j.at("sequence_length").get<std::int64_t>();
  for (const auto& s : j.at("segments"))
    item.segments.push_back(Segment{s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>()});
  std::sort(item.segments.begin(), item.segments.end(),
            [](const Segment& a, const Segment& b) { return a.start < b.start; });
  validate_annotation(item);
  return item;
}

inline void save_annotations_jsonl(const std::vector<AnnotationItem>& items,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& item : items) out << annotation_to_json(item).dump() << '\n';
}

inline std::vector<AnnotationItem> load_annotations_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<AnnotationItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      items.push_back(annotation_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

}  // namespace ssmg
