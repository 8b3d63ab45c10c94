#pragma once

// Predictors for evaluation (trained model variants, Centre, Random, ground-truth oracle) and
// loaders that turn a manifest or a soundboard into evaluation samples.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "colseg/core/media.hpp"
#include "colseg/data/media_store.hpp"
#include "colseg/data/records.hpp"
#include "colseg/data/soundboard.hpp"
#include "colseg/data/soundboard_io.hpp"
#include "colseg/eval/metrics.hpp"
#include "colseg/eval/runner.hpp"
#include "colseg/model/bundle.hpp"
#include "colseg/verify/adapters.hpp"
#include "colseg/verify/pipeline.hpp"

namespace colseg::eval {

// Test-time audio: resampled to the model rate and zero-padded (centred) to at least the
// training length; longer clips are used whole.
inline nn::Tensor embed_test_audio(const model::EncoderBundle& bundle, const AudioClip& clip, double min_seconds) {
  const double rate = bundle.config().spectrogram.sample_rate;
  AudioClip a = resample_linear(clip, rate);
  const auto n = static_cast<std::size_t>(std::lround(min_seconds * rate));
  if (a.size() < n) a = fit_length_centered(a, n);
  return bundle.encode_audio(bundle.spectrogram(a));
}

// Nearest-neighbour resize (pixel centres); identity when the size already matches.
inline BinaryMask resize_nearest(const BinaryMask& m, int h, int w) {
  if (m.height() == h && m.width() == w) return m;
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      out(r, c) = m(std::min(m.height() - 1, static_cast<int>((r + 0.5) * m.height() / h)),
                    std::min(m.width() - 1, static_cast<int>((c + 0.5) * m.width() / w)));
  return out;
}

inline Prediction to_prediction(const verify::CollisionPrediction& p) {
  Prediction out;
  for (const auto& m : p.masks) {
    out.masks.push_back(m.mask);
    out.provenance.push_back(m.provenance());
  }
  return out;
}

inline Predictor model_predictor(const model::EncoderBundle& bundle, verify::PipelineOptions opts,
                                 std::shared_ptr<const verify::HandObjectDetector> detector,
                                 std::shared_ptr<const verify::PromptableSegmenter> segmenter,
                                 double min_audio_seconds = 2.0) {
  return [&bundle, opts, detector, segmenter, min_audio_seconds](const EvalSample& s) {
    const auto a = embed_test_audio(bundle, s.audio, min_audio_seconds);
    const Image img = bundle.to_model_size(s.image);
    auto p = to_prediction(verify::run_pipeline(bundle, img, a, opts, detector.get(), segmenter.get(), s.id).prediction);
    for (auto& m : p.masks) m = resize_nearest(m, s.image.height(), s.image.width());
    return p;
  };
}

inline Predictor centre_predictor() {
  return [](const EvalSample& s) {
    Prediction p;
    p.masks.push_back(baseline_centre(s.image.height(), s.image.width()));
    p.provenance.push_back("centre");
    return p;
  };
}

// Ground truth as prediction; scores 100 by construction.
inline Predictor oracle_predictor() {
  return [](const EvalSample& s) {
    Prediction p;
    p.masks = s.gt;
    p.provenance.assign(s.gt.size(), "oracle");
    return p;
  };
}

// Random baseline: the model with its initial (not fine-tuned) audio branch and a freshly seeded
// projection, single pass, binarised audio mask only (no crop, no segmenter, no hand candidates).
inline Predictor random_predictor(const model::EncoderBundle& randomized, double mask_threshold = 0.5,
                                  double min_audio_seconds = 2.0) {
  verify::PipelineOptions o = verify::pipeline_variant("no-hoi");
  o.mask_threshold = mask_threshold;
  return model_predictor(randomized, o, nullptr, nullptr, min_audio_seconds);
}

struct TestSet {
  std::vector<EvalSample> samples;
  std::vector<data::SampleRecord> records;
  std::shared_ptr<verify::OracleTable> oracle = std::make_shared<verify::OracleTable>();
};

inline TestSet soundboard_test_set(const data::Soundboard& board) {
  TestSet t;
  for (const auto& s : board.test()) {
    const auto r = board.render(s);
    t.records.push_back(data::scene_record(board, s, &r));
    (*t.oracle)[s.id] = data::oracle_annotation(board, s, r);
    t.samples.push_back({s.id, r.image, board.render_audio(s), board.colliding_masks(s, r)});
  }
  return t;
}

// Test records of a manifest with their annotated frame and clip audio. Frames must have the
// resolution of the record's masks; predictions are resized to it.
inline TestSet manifest_test_set(const std::vector<data::SampleRecord>& records, const data::MediaStore& media) {
  TestSet t;
  for (const auto& r : records) {
    if (r.split != "test") continue;
    EvalSample s;
    s.id = r.id;
    s.image = media.frame(r.video_id, *r.eval_frame_index);
    if (s.image.height() != r.mask_height || s.image.width() != r.mask_width)
      throw FormatError("record " + r.id + ": frame size differs from mask size");
    s.audio = media.audio(r.video_id).slice(r.clip_start, r.clip_end);
    s.gt = r.decode_gt();
    t.samples.push_back(std::move(s));
    t.records.push_back(r);
    (*t.oracle)[r.id] = data::oracle_annotation(r);
  }
  return t;
}

}  // namespace colseg::eval
