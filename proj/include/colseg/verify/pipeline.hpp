#pragma once

// End-to-end prediction for one (frame, audio) sample: audio-conditioned mask, optional crop
// refinement and segmenter refinement, hand-object candidates, and collision verification.

#include <string>
#include <string_view>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/model/bundle.hpp"
#include "colseg/verify/adapters.hpp"
#include "colseg/verify/collision.hpp"

namespace colseg::verify {

enum class HandsMode {
  Verify,     // hand candidates enter collision verification
  RightLeft,  // the in-hand objects are the prediction; audio mask only when no hand holds one
};

struct PipelineOptions {
  bool use_hoi = true;
  bool refine_av = true;  // segmenter on the peak region of the audio mask
  bool use_crop = true;
  HandsMode hands = HandsMode::Verify;
  double crop_frac = 0.5;
  double mask_threshold = 0.5;
  VerifyParams verify;

  void validate() const {
    if (!(crop_frac > 0.0 && crop_frac <= 1.0)) throw InvalidArgument("crop_frac must lie in (0,1]");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw InvalidArgument("mask_threshold must lie in (0,1)");
  }
};

// Named variants: the full method, the cumulative ablations, and audio-only "Ours (AV)".
inline PipelineOptions pipeline_variant(std::string_view name, PipelineOptions base = {}) {
  if (name == "full") return base;
  if (name == "no-segmenter") {
    base.refine_av = false;
  } else if (name == "no-crop") {
    base.refine_av = false;
    base.use_crop = false;
  } else if (name == "no-hoi") {
    base.refine_av = false;
    base.use_crop = false;
    base.use_hoi = false;
  } else if (name == "av") {
    base.use_hoi = false;
  } else if (name == "right-left") {
    base.hands = HandsMode::RightLeft;
  } else {
    throw InvalidArgument("unknown pipeline variant '" + std::string(name) + "'");
  }
  return base;
}

struct PipelineResult {
  SoftMask av_soft;
  CandidateSet candidates;
  CollisionPrediction prediction;
};

// Audio-mask candidate: segmenter on the peak region, or the binarised mask; an empty binarised
// mask falls back to the filled peak-region box so the candidate is never empty.
inline BinaryMask av_candidate(const Image& image, const SoftMask& soft, const PipelineOptions& o,
                               const PromptableSegmenter* segmenter, std::string_view id) {
  const BBox peak = bbox_of_peak_region(soft);
  if (o.refine_av) {
    if (!segmenter) throw InvalidArgument("segmenter refinement requested without a segmenter");
    return refine_with_segmenter(image, peak, *segmenter, id);
  }
  BinaryMask m = binarize(soft, o.mask_threshold);
  if (m.is_empty()) m = BinaryMask::filled(soft.height(), soft.width(), peak);
  return m;
}

// image must be at model resolution; embedding is one row [1, D].
inline PipelineResult run_pipeline(const model::EncoderBundle& bundle, const Image& image,
                                   const nn::Tensor& embedding, const PipelineOptions& o,
                                   const HandObjectDetector* detector, const PromptableSegmenter* segmenter,
                                   std::string_view sample_id = {}) {
  o.validate();
  const int s = bundle.config().image_size;
  if (image.height() != s || image.width() != s)
    throw ShapeMismatch("pipeline expects images at model resolution " + std::to_string(s));
  PipelineResult r;
  r.av_soft = o.use_crop ? bundle.infer_refined(image, embedding, o.crop_frac) : bundle.infer(image, embedding);
  r.candidates.m_av = av_candidate(image, r.av_soft, o, segmenter, sample_id);
  if (o.use_hoi) {
    if (!detector || !segmenter) throw InvalidArgument("hand-object candidates need a detector and a segmenter");
    const HOIResult hoi = detect_hands(image, *detector, sample_id);
    if (hoi.left) r.candidates.m_left = refine_with_segmenter(image, *hoi.left, *segmenter, sample_id);
    if (hoi.right) r.candidates.m_right = refine_with_segmenter(image, *hoi.right, *segmenter, sample_id);
  }
  if (o.use_hoi && o.hands == HandsMode::RightLeft && (r.candidates.m_left || r.candidates.m_right)) {
    for (Source src : {Source::Right, Source::Left})
      if (const auto& m = r.candidates.get(src); m && !m->is_empty())
        r.prediction.masks.push_back({*m, {src}});
    if (!r.prediction.masks.empty()) return r;
  }
  r.prediction = verify_collision(r.candidates, o.verify);
  return r;
}

}  // namespace colseg::verify
