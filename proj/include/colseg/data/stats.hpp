#pragma once

// Manifest statistics: sound classes, mask sizes, clip durations, masks per sample, and the
// two-object / single-object split of the test records.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "colseg/core/rle.hpp"
#include "colseg/core/svg.hpp"
#include "colseg/data/records.hpp"

namespace colseg::data {

struct Histogram {
  std::string name;
  std::vector<std::string> labels;  // non-empty bins only, in bin order
  std::vector<long> counts;

  long total() const {
    long t = 0;
    for (long c : counts) t += c;
    return t;
  }
};

struct StatsReport {
  long records = 0;
  long test_records = 0;
  std::optional<double> two_object_pct;  // over test records with ground truth
  std::optional<double> single_object_pct;
  std::vector<Histogram> histograms;
};

// Bin labels for a value v against ascending edges: "<e0", "e0-e1", ..., ">=eN".
inline std::string bin_label(double v, const std::vector<double>& edges, const std::string& unit) {
  char buf[64];
  if (v < edges.front()) {
    std::snprintf(buf, sizeof buf, "<%g%s", edges.front(), unit.c_str());
    return buf;
  }
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (v < edges[i]) {
      std::snprintf(buf, sizeof buf, "%g-%g%s", edges[i - 1], edges[i], unit.c_str());
      return buf;
    }
  std::snprintf(buf, sizeof buf, ">=%g%s", edges.back(), unit.c_str());
  return buf;
}

inline int bin_index(double v, const std::vector<double>& edges) {
  int k = 0;
  while (k < static_cast<int>(edges.size()) && v >= edges[static_cast<std::size_t>(k)]) ++k;
  return k;
}

inline const std::vector<double>& duration_edges() {
  static const std::vector<double> e{1.0, 3.0, 5.0};
  return e;
}
inline const std::vector<double>& mask_area_edges() {  // percent of the image
  static const std::vector<double> e{0.5, 1.0, 2.0, 5.0, 10.0, 20.0};
  return e;
}

namespace detail {
// Accumulates (bin order key, label) -> count and emits non-empty bins in key order.
struct BinCounter {
  std::map<std::pair<int, std::string>, long> counts;
  void add(int key, const std::string& label) { ++counts[{key, label}]; }
  Histogram finish(std::string name) const {
    Histogram h{std::move(name), {}, {}};
    for (const auto& [k, c] : counts) {
      h.labels.push_back(k.second);
      h.counts.push_back(c);
    }
    return h;
  }
};
}  // namespace detail

inline StatsReport dataset_stats(const std::vector<SampleRecord>& records) {
  StatsReport rep;
  rep.records = static_cast<long>(records.size());
  detail::BinCounter cls, area, dur, nmask;
  long two = 0, one = 0;
  for (const auto& r : records) {
    cls.add(0, r.sound_class.value_or("unlabelled"));
    dur.add(bin_index(r.duration(), duration_edges()), bin_label(r.duration(), duration_edges(), "s"));
    if (r.split == "test") ++rep.test_records;
    if (!r.gt_masks) continue;
    const int n = r.n_gt();
    nmask.add(n, std::to_string(n));
    (n >= 2 ? two : one) += 1;
    const double pixels = static_cast<double>(r.mask_height) * r.mask_width;
    for (const auto& rle : *r.gt_masks) {
      const double pct = 100.0 * static_cast<double>(rle_to_mask(rle, r.mask_height, r.mask_width).area()) / pixels;
      area.add(bin_index(pct, mask_area_edges()), bin_label(pct, mask_area_edges(), "%"));
    }
  }
  if (two + one > 0) {
    rep.two_object_pct = 100.0 * static_cast<double>(two) / static_cast<double>(two + one);
    rep.single_object_pct = 100.0 * static_cast<double>(one) / static_cast<double>(two + one);
  }
  rep.histograms = {cls.finish("sound_class"), area.finish("mask_size"), dur.finish("clip_duration"),
                    nmask.finish("masks_per_sample")};
  return rep;
}

inline std::string format_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// <dir>/stats.csv (histogram,bin,count,fraction plus summary rows) and one SVG per non-empty
// histogram.
inline void write_stats_report(const std::filesystem::path& dir, const StatsReport& rep) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "stats.csv");
  if (!os) throw Error("cannot write " + (dir / "stats.csv").string());
  os << "histogram,bin,count,fraction\n";
  char buf[32];
  for (const auto& h : rep.histograms) {
    const long total = h.total();
    for (std::size_t i = 0; i < h.labels.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(h.counts[i]) / static_cast<double>(total));
      os << h.name << ',' << h.labels[i] << ',' << h.counts[i] << ',' << buf << '\n';
    }
    if (!h.labels.empty()) {
      std::vector<double> v(h.counts.begin(), h.counts.end());
      write_bar_chart_svg(dir / (h.name + ".svg"), h.name, h.labels, v, "count");
    }
  }
  os << "summary,records," << rep.records << ",\n";
  os << "summary,test_records," << rep.test_records << ",\n";
  if (rep.two_object_pct) {
    os << "summary,two_object_pct," << format_pct(*rep.two_object_pct) << ",\n";
    os << "summary,single_object_pct," << format_pct(*rep.single_object_pct) << ",\n";
  }
}

}  // namespace colseg::data
