#pragma once

// Evaluation over a test set: per-sample Hungarian matching, global metrics, strata, and the
// per-sample CSV / JSON summary writers.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/media.hpp"
#include "colseg/core/svg.hpp"
#include "colseg/data/curation.hpp"
#include "colseg/data/records.hpp"
#include "colseg/data/stats.hpp"
#include "colseg/eval/metrics.hpp"
#include "colseg/nn/tensor.hpp"

namespace colseg::eval {

struct EvalSample {
  std::string id;
  Image image;  // native resolution; ground truth has the same size
  AudioClip audio;
  std::vector<BinaryMask> gt;
};

struct Prediction {
  std::vector<BinaryMask> masks;
  std::vector<std::string> provenance;  // one tag per mask
};

using Predictor = std::function<Prediction(const EvalSample&)>;

struct SampleResult {
  std::string id;
  std::vector<double> ious;  // per ground-truth mask
  std::vector<int> matched;  // prediction index per ground-truth mask, -1 for padding
  int n_pred = 0;
  int n_gt = 0;
  std::vector<std::string> provenance;
  std::string error;  // non-empty when the sample failed to evaluate
};

struct EvalResult {
  std::vector<SampleResult> per_sample;
  double miou = 0.0;
  double auc = 0.0;
  bool per_sample_first = false;

  std::vector<std::vector<double>> iou_lists() const {
    std::vector<std::vector<double>> out;
    for (const auto& s : per_sample)
      if (s.error.empty()) out.push_back(s.ious);
    return out;
  }
  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& s : per_sample) n += !s.error.empty();
    return n;
  }
};

inline SampleResult score_sample(const EvalSample& s, const Prediction& p) {
  SampleResult r;
  r.id = s.id;
  r.n_pred = static_cast<int>(p.masks.size());
  r.n_gt = static_cast<int>(s.gt.size());
  r.provenance = p.provenance;
  const auto m = match_masks(p.masks, s.gt);
  r.ious = m.gt_iou;
  r.matched = m.gt_pred;
  return r;
}

// Samples are scored on `workers` threads into fixed slots, so results do not depend on the
// worker count. A throwing predictor marks the sample as failed; failed samples are excluded
// from the metrics.
inline EvalResult run_eval(const std::vector<EvalSample>& samples, const Predictor& predict, int workers = 1,
                           bool per_sample_first = false) {
  EvalResult res;
  res.per_sample_first = per_sample_first;
  res.per_sample.resize(samples.size());
  auto one = [&](std::size_t i) {
    nn::NoGradGuard guard;
    try {
      res.per_sample[i] = score_sample(samples[i], predict(samples[i]));
    } catch (const std::exception& e) {
      res.per_sample[i].id = samples[i].id;
      res.per_sample[i].n_gt = static_cast<int>(samples[i].gt.size());
      res.per_sample[i].error = e.what();
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) one(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < samples.size(); i += workers) one(i);
      });
    for (auto& t : pool) t.join();
  }
  const auto lists = res.iou_lists();
  if (!lists.empty()) {
    res.miou = compute_miou(lists, per_sample_first);
    res.auc = compute_auc(lists, per_sample_first);
  }
  return res;
}

struct StratumMetrics {
  double miou = 0.0;
  double auc = 0.0;
  long count = 0;  // samples, or ground-truth masks for the mask-size strata
};

// Strata "duration:<bin>" and "n_gt:<n>" group samples; "mask_size:<bin>" groups ground-truth
// masks by their area in percent of the image. Records are looked up by sample id.
inline std::map<std::string, StratumMetrics> stratified_report(const EvalResult& res,
                                                               const std::vector<data::SampleRecord>& manifest) {
  std::map<std::string, const data::SampleRecord*> by_id;
  for (const auto& r : manifest) by_id[r.id] = &r;
  std::map<std::string, std::vector<std::vector<double>>> groups;
  std::map<std::string, long> counts;
  for (const auto& s : res.per_sample) {
    if (!s.error.empty()) continue;
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw InvalidArgument("stratified_report: no record for sample " + s.id);
    const auto& rec = *it->second;
    const std::string dur = "duration:" + data::bin_label(rec.duration(), data::duration_edges(), "s");
    const std::string ngt = "n_gt:" + std::to_string(s.n_gt);
    for (const auto& key : {dur, ngt}) {
      groups[key].push_back(s.ious);
      ++counts[key];
    }
    if (rec.gt_masks && rec.gt_masks->size() == s.ious.size()) {
      const double pixels = static_cast<double>(rec.mask_height) * rec.mask_width;
      for (std::size_t k = 0; k < s.ious.size(); ++k) {
        const double pct =
            100.0 * static_cast<double>(rle_to_mask((*rec.gt_masks)[k], rec.mask_height, rec.mask_width).area()) / pixels;
        const std::string key = "mask_size:" + data::bin_label(pct, data::mask_area_edges(), "%");
        groups[key].push_back({s.ious[k]});
        ++counts[key];
      }
    }
  }
  std::map<std::string, StratumMetrics> out;
  for (const auto& [key, lists] : groups)
    out[key] = {compute_miou(lists, res.per_sample_first), compute_auc(lists, res.per_sample_first), counts[key]};
  return out;
}

inline std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// sample_id,n_gt,n_pred,iou_1,iou_2,...(up to the largest n_gt),provenance,error
inline void write_per_sample_csv(const std::filesystem::path& path, const EvalResult& res) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  int max_gt = 1;
  for (const auto& s : res.per_sample) max_gt = std::max(max_gt, s.n_gt);
  os << "sample_id,n_gt,n_pred";
  for (int k = 1; k <= max_gt; ++k) os << ",iou_" << k;
  os << ",provenance,error\n";
  for (const auto& s : res.per_sample) {
    os << data::csv_escape(s.id) << ',' << s.n_gt << ',' << s.n_pred;
    for (int k = 0; k < max_gt; ++k) os << ',' << (k < static_cast<int>(s.ious.size()) ? fixed6(s.ious[k]) : "");
    std::string prov;
    for (const auto& p : s.provenance) prov += (prov.empty() ? "" : ";") + p;
    os << ',' << prov << ',' << data::csv_escape(s.error) << '\n';
  }
}

inline nlohmann::ordered_json summary_json(const EvalResult& res, const std::map<std::string, StratumMetrics>& strata) {
  nlohmann::ordered_json j;
  j["samples"] = res.per_sample.size();
  j["failures"] = res.failures();
  j["per_sample_first"] = res.per_sample_first;
  j["miou"] = res.miou;
  j["auc"] = res.auc;
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& [k, v] : strata) s[k] = {{"miou", v.miou}, {"auc", v.auc}, {"count", v.count}};
  j["strata"] = s;
  return j;
}

// One SVG per stratum family (duration, n_gt, mask_size) with mIoU bars.
inline void write_strata_plots(const std::filesystem::path& dir, const std::map<std::string, StratumMetrics>& strata) {
  // Bins in numeric order: "<a" first, then "a-b" by a, then ">=a".
  auto order = [](const std::string& label) {
    if (label.rfind("<", 0) == 0) return -1.0;
    if (label.rfind(">=", 0) == 0) return 1e300;
    return std::strtod(label.c_str(), nullptr);
  };
  std::map<std::string, std::vector<std::pair<std::string, double>>> families;
  for (const auto& [key, m] : strata) {
    const auto colon = key.find(':');
    families[key.substr(0, colon)].emplace_back(key.substr(colon + 1), m.miou);
  }
  for (auto& [name, bins] : families) {
    std::stable_sort(bins.begin(), bins.end(), [&](auto& a, auto& b) { return order(a.first) < order(b.first); });
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [l, v] : bins) {
      labels.push_back(l);
      values.push_back(v);
    }
    write_bar_chart_svg(dir / ("strata_" + name + ".svg"), "mIoU by " + name, labels, values, "mIoU");
  }
}

}  // namespace colseg::eval
