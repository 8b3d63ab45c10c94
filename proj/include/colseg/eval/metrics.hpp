#pragma once

// Hungarian-matched IoU, mIoU and thresholded AUC (both reported in percent), and the Centre
// baseline.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"

namespace colseg::eval {

// Minimum-cost assignment on a square matrix (row-major, n x n); returns the column of each row.
inline std::vector<int> hungarian_min(const std::vector<double>& cost, int n) {
  if (cost.size() != static_cast<std::size_t>(n) * n) throw ShapeMismatch("hungarian: cost size");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials and matching over 1-based indices; column 0 is a virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match_col(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match_col[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (match_col[j] > 0) row_to_col[match_col[j] - 1] = j - 1;
  return row_to_col;
}

struct MatchResult {
  std::vector<double> gt_iou;  // one per ground-truth mask
  std::vector<int> gt_pred;    // matched prediction index, -1 when matched to padding
};

// Pads the shorter list with empty masks, maximises total IoU, and reports the IoU of every
// ground-truth mask (0 against padding). Predictions matched to padding do not produce entries.
inline MatchResult match_masks(std::span<const BinaryMask> pred, std::span<const BinaryMask> gt) {
  const int np = static_cast<int>(pred.size()), ng = static_cast<int>(gt.size());
  const BinaryMask* ref = ng ? &gt[0] : np ? &pred[0] : nullptr;
  for (const auto& m : pred)
    if (!m.same_shape(*ref)) throw ShapeMismatch("match_masks: mask shapes differ");
  for (const auto& m : gt)
    if (!m.same_shape(*ref)) throw ShapeMismatch("match_masks: mask shapes differ");
  MatchResult out;
  if (ng == 0) return out;
  const int n = std::max(np, ng);
  std::vector<double> score(static_cast<std::size_t>(n) * n, 0.0);
  for (int g = 0; g < ng; ++g)
    for (int p = 0; p < np; ++p) score[static_cast<std::size_t>(g) * n + p] = iou(gt[g], pred[p]);
  std::vector<double> cost(score.size());
  for (std::size_t k = 0; k < score.size(); ++k) cost[k] = -score[k];
  const auto assign = hungarian_min(cost, n);
  for (int g = 0; g < ng; ++g) {
    const int p = assign[g];
    out.gt_pred.push_back(p < np ? p : -1);
    out.gt_iou.push_back(p < np ? score[static_cast<std::size_t>(g) * n + p] : 0.0);
  }
  return out;
}

inline constexpr int kAucThresholds = 21;  // 0, 0.05, ..., 1.0

// Mean of all IoUs, in percent; per_sample_first averages within each sample first.
inline double compute_miou(const std::vector<std::vector<double>>& per_sample, bool per_sample_first = false) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : per_sample) {
    if (per_sample_first) {
      if (s.empty()) continue;
      double m = 0.0;
      for (double v : s) m += v;
      sum += m / static_cast<double>(s.size());
      ++n;
    } else {
      for (double v : s) sum += v;
      n += s.size();
    }
  }
  if (n == 0) throw InvalidArgument("compute_miou: no IoU values");
  return 100.0 * sum / static_cast<double>(n);
}

inline double success_rate(std::span<const double> ious, double t) {
  std::size_t hit = 0;
  for (double v : ious) hit += v + 1e-9 >= t;
  return static_cast<double>(hit) / static_cast<double>(ious.size());
}

// Mean over thresholds t = k/20 (k = 0..20) of the fraction of IoUs >= t, in percent.
inline double compute_auc(const std::vector<std::vector<double>>& per_sample, bool per_sample_first = false) {
  std::vector<double> pooled;
  for (const auto& s : per_sample) {
    for (double v : s)
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("compute_auc: IoU outside [0,1]");
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  if (pooled.empty()) throw InvalidArgument("compute_auc: no IoU values");
  double total = 0.0;
  for (int k = 0; k < kAucThresholds; ++k) {
    const double t = k / 20.0;
    if (!per_sample_first) {
      total += success_rate(pooled, t);
      continue;
    }
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& v : per_sample)
      if (!v.empty()) {
        s += success_rate(v, t);
        ++n;
      }
    total += s / static_cast<double>(n);
  }
  return 100.0 * total / kAucThresholds;
}

// Centred square covering 10% of the image; side = round(sqrt(0.1 H W)), clamped to the image.
inline BinaryMask baseline_centre(int height, int width) {
  int side = static_cast<int>(std::lround(std::sqrt(0.1 * height * width)));
  side = std::clamp(side, 1, std::min(height, width));
  const int x0 = (width - side) / 2, y0 = (height - side) / 2;
  return BinaryMask::filled(height, width, {x0, y0, x0 + side, y0 + side});
}

}  // namespace colseg::eval
