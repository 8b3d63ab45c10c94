#pragma once

// Independent reference implementations used as test oracles: brute-force geometry, collision
// verification, exhaustive assignment, scalar InfoNCE, and central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "colseg/core/mask.hpp"
#include "colseg/nn/tensor.hpp"

namespace oracle {

using colseg::BinaryMask;

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0, uni = 0;
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c) {
      inter += a(r, c) && b(r, c);
      uni += a(r, c) || b(r, c);
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Minimum Euclidean distance over all foreground pixel pairs; +inf when either mask is empty.
inline double distance(const BinaryMask& a, const BinaryMask& b) {
  double best = std::numeric_limits<double>::infinity();
  for (int r1 = 0; r1 < a.height(); ++r1)
    for (int c1 = 0; c1 < a.width(); ++c1) {
      if (!a(r1, c1)) continue;
      for (int r2 = 0; r2 < b.height(); ++r2)
        for (int c2 = 0; c2 < b.width(); ++c2)
          if (b(r2, c2)) best = std::min(best, std::hypot(double(r1 - r2), double(c1 - c2)));
    }
  return best;
}

inline BinaryMask unite(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out(a.height(), a.width());
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c) out(r, c) = a(r, c) || b(r, c);
  return out;
}

// One output mask: the set of candidates (bit 0 av, 1 left, 2 right) united into it.
struct VerifyOutcome {
  std::vector<unsigned> groups;
  std::vector<BinaryMask> masks;
};

// Collision verification written out case by case over candidate groups: merge by the fixed
// pair order (groups compared by their lowest member) until nothing reaches alpha, then the
// nearest pair under beta, else the group holding the highest-priority candidate (right, left, av).
inline VerifyOutcome verify(const std::vector<std::pair<unsigned, BinaryMask>>& present, double alpha, double beta) {
  struct G {
    unsigned bits;
    BinaryMask m;
  };
  std::vector<G> g;
  for (const auto& [bit, m] : present)
    if (m.area() > 0) g.push_back({bit, m});
  auto lowest = [](unsigned b) { return b & (~b + 1); };
  for (;;) {
    std::sort(g.begin(), g.end(), [&](const G& x, const G& y) { return lowest(x.bits) < lowest(y.bits); });
    bool merged = false;
    for (std::size_t i = 0; i < g.size() && !merged; ++i)
      for (std::size_t j = i + 1; j < g.size() && !merged; ++j)
        if (oracle::iou(g[i].m, g[j].m) >= alpha) {
          g[i] = {g[i].bits | g[j].bits, oracle::unite(g[i].m, g[j].m)};
          g.erase(g.begin() + static_cast<std::ptrdiff_t>(j));
          merged = true;
        }
    if (!merged) break;
  }
  VerifyOutcome out;
  if (g.size() == 1) {
    out.groups = {g[0].bits};
    out.masks = {g[0].m};
    return out;
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      const double d = oracle::distance(g[i].m, g[j].m);
      if (d < best) {
        best = d;
        bi = i;
        bj = j;
      }
    }
  if (best < beta) {
    out.groups = {g[bi].bits, g[bj].bits};
    out.masks = {g[bi].m, g[bj].m};
    return out;
  }
  for (unsigned want : {4u, 2u, 1u})
    for (const auto& x : g)
      if (x.bits & want) {
        out.groups = {x.bits};
        out.masks = {x.m};
        return out;
      }
  return out;
}

// Best total IoU over every assignment of the padded lists, and the per-ground-truth IoUs of
// the first assignment reaching it.
struct Assignment {
  double total = -1.0;
  std::vector<double> gt_iou;
  int optima = 0;  // assignments reaching the best total (within 1e-12)
};

inline Assignment best_assignment(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& gt) {
  const int np = static_cast<int>(pred.size()), ng = static_cast<int>(gt.size());
  const int n = std::max(np, ng);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  do {
    double total = 0.0;
    std::vector<double> per(ng);
    for (int g = 0; g < ng; ++g) {
      per[g] = perm[g] < np ? oracle::iou(gt[g], pred[perm[g]]) : 0.0;
      total += per[g];
    }
    if (total > best.total + 1e-12) {
      best.total = total;
      best.gt_iou = per;
      best.optima = 1;
    } else if (std::fabs(total - best.total) <= 1e-12) {
      ++best.optima;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Symmetric InfoNCE on a plain matrix: row and column cross-entropy towards the diagonal.
inline double infonce(const std::vector<std::vector<double>>& s, double tau) {
  const std::size_t b = s.size();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double zr = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      zr += std::exp(s[i][j] / tau);
      zc += std::exp(s[j][i] / tau);
    }
    rows += -std::log(std::exp(s[i][i] / tau) / zr);
    cols += -std::log(std::exp(s[i][i] / tau) / zc);
  }
  return (rows + cols) / static_cast<double>(b);
}

// AUC over thresholds 0, 0.05, ..., 1 from its definition: share of IoUs reaching each.
inline double auc(const std::vector<double>& ious) {
  double total = 0.0;
  for (int k = 0; k <= 20; ++k) {
    int hit = 0;
    for (double v : ious) hit += v >= k * 0.05 - 1e-12;
    total += static_cast<double>(hit) / static_cast<double>(ious.size());
  }
  return 100.0 * total / 21.0;
}

// Central difference of f with respect to one coordinate of a parameter tensor.
inline double central_difference(colseg::nn::Tensor& p, std::size_t k, const std::function<double()>& f,
                                 double h) {
  auto v = p.mutable_data();
  const double keep = v[k];
  v[k] = keep + h;
  const double up = f();
  v[k] = keep - h;
  const double down = f();
  v[k] = keep;
  return (up - down) / (2.0 * h);
}

// |a - n| / max(|a|, |n|, floor): relative error with an absolute floor for near-zero entries.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

// Random blob: union of up to three rectangles inside an h x w grid.
inline BinaryMask random_blob(int h, int w, std::mt19937_64& rng) {
  BinaryMask m(h, w);
  std::uniform_int_distribution<int> parts(1, 3);
  const int k = parts(rng);
  for (int i = 0; i < k; ++i) {
    const int bh = std::uniform_int_distribution<int>(1, std::max(1, h / 2))(rng);
    const int bw = std::uniform_int_distribution<int>(1, std::max(1, w / 2))(rng);
    const int y = std::uniform_int_distribution<int>(0, h - bh)(rng);
    const int x = std::uniform_int_distribution<int>(0, w - bw)(rng);
    for (int r = y; r < y + bh; ++r)
      for (int c = x; c < x + bw; ++c) m(r, c) = 1;
  }
  return m;
}

// A copy of m with a few pixels flipped, so that merges near the alpha boundary occur.
inline BinaryMask jitter(const BinaryMask& m, int flips, std::mt19937_64& rng) {
  BinaryMask out = m;
  std::uniform_int_distribution<int> rr(0, m.height() - 1), cc(0, m.width() - 1);
  for (int i = 0; i < flips; ++i) {
    const int r = rr(rng), c = cc(rng);
    out(r, c) = !out(r, c);
  }
  return out;
}

// Random verification input: up to three (bit, mask) candidates on one grid of at most 32 x 32
// (bit 0 av, 1 left, 2 right). Near-duplicates make merges common; a quarter of the inputs use
// small corner squares so that the priority fallback is reached.
inline std::vector<std::pair<unsigned, BinaryMask>> random_candidates(std::mt19937_64& rng) {
  const int h = std::uniform_int_distribution<int>(4, 32)(rng), w = std::uniform_int_distribution<int>(4, 32)(rng);
  std::uniform_real_distribution<double> u;
  const bool spread = u(rng) < 0.25;
  std::vector<std::pair<unsigned, BinaryMask>> out;
  const BinaryMask* prev = nullptr;
  for (unsigned k = 0; k < 3; ++k) {
    if (u(rng) < 0.2) continue;
    BinaryMask m(h, w);
    if (spread) {
      const int s = std::uniform_int_distribution<int>(1, 3)(rng);
      const int y = k == 0 ? h - s : 0, x = k == 2 ? w - s : 0;  // bottom-left, top-left, top-right
      for (int r = y; r < y + s; ++r)
        for (int c = x; c < x + s; ++c) m(r, c) = 1;
    } else if (prev && u(rng) < 0.35) {
      m = jitter(*prev, std::uniform_int_distribution<int>(0, 12)(rng), rng);
    } else {
      m = random_blob(h, w, rng);
    }
    out.push_back({1u << k, m});
    prev = &out.back().second;
  }
  if (out.empty()) out.push_back({1u, random_blob(h, w, rng)});
  return out;
}

}  // namespace oracle
