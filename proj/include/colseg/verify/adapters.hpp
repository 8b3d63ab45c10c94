#pragma once

// Pluggable hand-object detector and box-promptable segmenter, their oracle implementations, and
// the helpers that turn their outputs into candidate masks.

#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/log.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/media.hpp"

namespace colseg::verify {

struct Capabilities {
  bool batch = false;       // accepts several images per call
  bool concurrent = false;  // safe to call from several threads at once
  bool touch = false;       // implements contact prediction
};

// In-hand object boxes, at most one per hand.
struct HOIResult {
  std::optional<BBox> left;
  std::optional<BBox> right;
};

struct TouchResult {
  bool left = false;
  bool right = false;
};

// Adapters receive the sample id so that oracles can look up ground truth; model-backed adapters
// ignore it. Calls to adapters without the concurrent capability are serialised through lock().
class HandObjectDetector {
 public:
  virtual ~HandObjectDetector() = default;
  virtual Capabilities capabilities() const { return {}; }
  virtual HOIResult detect(const Image& image, std::string_view sample_id) const = 0;
  // Whether each hand's object is in contact with another object; empty when unsupported.
  virtual std::optional<TouchResult> touching(const Image&, std::string_view) const { return std::nullopt; }

  std::unique_lock<std::mutex> lock() const {
    return capabilities().concurrent ? std::unique_lock<std::mutex>() : std::unique_lock<std::mutex>(mutex_);
  }

 private:
  mutable std::mutex mutex_;
};

class PromptableSegmenter {
 public:
  virtual ~PromptableSegmenter() = default;
  virtual Capabilities capabilities() const { return {}; }
  virtual BinaryMask segment(const Image& image, const BBox& prompt, std::string_view sample_id) const = 0;

  std::unique_lock<std::mutex> lock() const {
    return capabilities().concurrent ? std::unique_lock<std::mutex>() : std::unique_lock<std::mutex>(mutex_);
  }

 private:
  mutable std::mutex mutex_;
};

// Drops boxes that are empty or leave the image, with a warning.
inline HOIResult validate_hoi(const HOIResult& r, int height, int width) {
  HOIResult out;
  auto check = [&](const std::optional<BBox>& b, const char* side) -> std::optional<BBox> {
    if (!b) return std::nullopt;
    if (!b->valid_within(height, width)) {
      log::warn(std::string("dropping malformed ") + side + "-hand box [" + std::to_string(b->x_min) + "," +
                std::to_string(b->y_min) + "," + std::to_string(b->x_max) + "," + std::to_string(b->y_max) +
                "]");
      return std::nullopt;
    }
    return b;
  };
  out.left = check(r.left, "left");
  out.right = check(r.right, "right");
  return out;
}

// Validated detector output; a throwing detector yields an empty result (audio-only fallback).
inline HOIResult detect_hands(const Image& image, const HandObjectDetector& detector,
                              std::string_view sample_id = {}) {
  HOIResult raw;
  try {
    auto guard = detector.lock();
    raw = detector.detect(image, sample_id);
  } catch (const std::exception& e) {
    log::warn("hand-object detector failed on '" + std::string(sample_id) + "': " + e.what());
    return {};
  }
  return validate_hoi(raw, image.height(), image.width());
}

// Segmenter mask for a box prompt; an empty (or wrongly shaped) result falls back to the filled box.
inline BinaryMask refine_with_segmenter(const Image& image, const BBox& prompt, const PromptableSegmenter& seg,
                                        std::string_view sample_id = {}) {
  if (!prompt.valid_within(image.height(), image.width()))
    throw InvalidArgument("segmenter prompt box outside the image");
  BinaryMask m;
  {
    auto guard = seg.lock();
    m = seg.segment(image, prompt, sample_id);
  }
  if (m.height() != image.height() || m.width() != image.width() || m.is_empty())
    return BinaryMask::filled(image.height(), image.width(), prompt);
  return m;
}

// Tight box of the 8-connected component of {v >= 0.5 max} that contains the (first) argmax.
inline BBox bbox_of_peak_region(const SoftMask& m) {
  const int h = m.height(), w = m.width();
  if (h <= 0 || w <= 0) throw InvalidArgument("bbox_of_peak_region: empty mask");
  const std::size_t start = m.argmax();
  const float cut = 0.5f * m.max_value();
  const auto vals = m.values();
  std::vector<std::uint8_t> seen(vals.size(), 0);
  std::deque<std::size_t> queue{start};
  seen[start] = 1;
  BBox box{w, h, 0, 0};
  while (!queue.empty()) {
    const auto idx = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(idx / w), c = static_cast<int>(idx % w);
    box.x_min = std::min(box.x_min, c);
    box.y_min = std::min(box.y_min, r);
    box.x_max = std::max(box.x_max, c + 1);
    box.y_max = std::max(box.y_max, r + 1);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
        const auto j = static_cast<std::size_t>(rr) * w + cc;
        if (!seen[j] && vals[j] >= cut) {
          seen[j] = 1;
          queue.push_back(j);
        }
      }
  }
  return box;
}

// Ground-truth annotations the oracle adapters serve, keyed by sample id.
struct OracleAnnotation {
  HOIResult hands;
  std::optional<TouchResult> touch;
  std::vector<BinaryMask> instances;  // every visible object the segmenter may return
};

using OracleTable = std::map<std::string, OracleAnnotation, std::less<>>;

// Returns the planted in-hand boxes.
class OracleDetector : public HandObjectDetector {
 public:
  explicit OracleDetector(std::shared_ptr<const OracleTable> table) : table_(std::move(table)) {}
  Capabilities capabilities() const override { return {true, true, true}; }
  HOIResult detect(const Image&, std::string_view id) const override {
    auto it = table_->find(id);
    return it == table_->end() ? HOIResult{} : it->second.hands;
  }
  std::optional<TouchResult> touching(const Image&, std::string_view id) const override {
    auto it = table_->find(id);
    return it == table_->end() ? std::nullopt : it->second.touch;
  }

 private:
  std::shared_ptr<const OracleTable> table_;
};

// Returns the annotated instance mask with the largest overlap with the prompt box (ties: higher
// IoU with the filled box, then lower index); empty when nothing intersects.
class OracleSegmenter : public PromptableSegmenter {
 public:
  explicit OracleSegmenter(std::shared_ptr<const OracleTable> table) : table_(std::move(table)) {}
  Capabilities capabilities() const override { return {true, true, false}; }
  BinaryMask segment(const Image& image, const BBox& prompt, std::string_view id) const override {
    BinaryMask empty(image.height(), image.width());
    auto it = table_->find(id);
    if (it == table_->end()) return empty;
    const BinaryMask filled = BinaryMask::filled(image.height(), image.width(), prompt);
    const BinaryMask* best = nullptr;
    long best_overlap = 0;
    double best_iou = -1.0;
    for (const auto& inst : it->second.instances) {
      if (!inst.same_shape(filled)) continue;
      const long overlap = mask_intersection(inst, filled).area();
      if (overlap == 0) continue;
      const double j = iou(inst, filled);
      if (overlap > best_overlap || (overlap == best_overlap && j > best_iou)) {
        best = &inst;
        best_overlap = overlap;
        best_iou = j;
      }
    }
    return best ? *best : empty;
  }

 private:
  std::shared_ptr<const OracleTable> table_;
};

}  // namespace colseg::verify
