#pragma once

// Collision verification: merge overlapping candidates, pick the closest pair under beta, or fall
// back to a single mask in the priority order right, left, av.

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"

namespace colseg::verify {

enum class Source { Av = 0, Left = 1, Right = 2 };

inline const char* source_name(Source s) {
  switch (s) {
    case Source::Av: return "av";
    case Source::Left: return "left";
    case Source::Right: return "right";
  }
  return "?";
}

struct CandidateSet {
  std::optional<BinaryMask> m_av;
  std::optional<BinaryMask> m_left;
  std::optional<BinaryMask> m_right;

  const std::optional<BinaryMask>& get(Source s) const {
    return s == Source::Av ? m_av : s == Source::Left ? m_left : m_right;
  }
};

struct PredictedMask {
  BinaryMask mask;
  std::vector<Source> members;  // candidates united into this mask, in av, left, right order

  // "av", "left", "right" or "merged".
  std::string tag() const { return members.size() == 1 ? source_name(members[0]) : "merged"; }
  // Members joined with '+', e.g. "av+right".
  std::string provenance() const {
    std::string s;
    for (auto m : members) s += (s.empty() ? "" : "+") + std::string(source_name(m));
    return s;
  }
};

struct CollisionPrediction {
  std::vector<PredictedMask> masks;  // one or two
};

struct VerifyParams {
  double alpha = 0.6;  // merge when IoU >= alpha
  double beta = 15.0;  // pair when distance < beta, pixels at model resolution
};

namespace detail {

struct Unit {
  BinaryMask mask;
  unsigned members = 0;  // bit k set for Source k
};

inline std::vector<Source> member_list(unsigned bits) {
  std::vector<Source> out;
  for (int k = 0; k < 3; ++k)
    if (bits & (1u << k)) out.push_back(static_cast<Source>(k));
  return out;
}

// Priority rank for the single-mask fallback: right > left > av; a merged unit ranks as its best.
inline int priority(unsigned bits) {
  if (bits & (1u << static_cast<int>(Source::Right))) return 2;
  if (bits & (1u << static_cast<int>(Source::Left))) return 1;
  return 0;
}

}  // namespace detail

// Candidates that are absent or empty do not take part. Units are kept ordered by their lowest
// member, so scanning pairs (i < j) visits av-left, av-right, left-right; every merge restarts the
// scan until no pair reaches alpha.
inline CollisionPrediction verify_collision(const CandidateSet& c, const VerifyParams& p = {}) {
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
  if (!(p.beta >= 0.0)) throw InvalidArgument("beta must be non-negative");
  std::vector<detail::Unit> units;
  const BinaryMask* shape = nullptr;
  for (Source s : {Source::Av, Source::Left, Source::Right}) {
    const auto& m = c.get(s);
    if (!m) continue;
    if (shape && !shape->same_shape(*m)) throw ShapeMismatch("candidate masks differ in shape");
    shape = &*m;
    if (m->is_empty()) continue;
    units.push_back({*m, 1u << static_cast<int>(s)});
  }
  if (units.empty()) throw InvalidArgument("verify_collision: no non-empty candidate");

  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t i = 0; i < units.size() && !merged; ++i)
      for (std::size_t j = i + 1; j < units.size() && !merged; ++j)
        if (iou(units[i].mask, units[j].mask) >= p.alpha) {
          units[i].mask = mask_union(units[i].mask, units[j].mask);
          units[i].members |= units[j].members;
          units.erase(units.begin() + static_cast<std::ptrdiff_t>(j));
          merged = true;
        }
  }

  auto out_mask = [](const detail::Unit& u) { return PredictedMask{u.mask, detail::member_list(u.members)}; };
  CollisionPrediction pred;
  if (units.size() == 1) {
    pred.masks.push_back(out_mask(units[0]));
    return pred;
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < units.size(); ++i)
    for (std::size_t j = i + 1; j < units.size(); ++j) {
      const double d = mask_distance(units[i].mask, units[j].mask).value_or(std::numeric_limits<double>::infinity());
      if (d < best) {
        best = d;
        bi = i;
        bj = j;
      }
    }
  if (best < p.beta) {
    pred.masks.push_back(out_mask(units[bi]));
    pred.masks.push_back(out_mask(units[bj]));
    return pred;
  }
  std::size_t top = 0;
  for (std::size_t i = 1; i < units.size(); ++i)
    if (detail::priority(units[i].members) > detail::priority(units[top].members)) top = i;
  pred.masks.push_back(out_mask(units[top]));
  return pred;
}

}  // namespace colseg::verify
