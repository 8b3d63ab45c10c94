#pragma once

// Training-time sampling of (frame, audio) pairs from curated clips.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/log.hpp"
#include "colseg/core/media.hpp"
#include "colseg/data/curation.hpp"
#include "colseg/data/media_store.hpp"
#include "colseg/data/records.hpp"
#include "colseg/model/trainer.hpp"

namespace colseg::data {

enum class SampleMode {
  Default,  // random frame in the clip, fixed-length audio centred in the clip
  Peak,     // window of random length around the amplitude peak; frame drawn from the window
};

struct Window {
  double start = 0.0;
  double end = 0.0;
};

// Index of the largest |amplitude| (first occurrence).
inline std::size_t peak_index(const AudioClip& clip) {
  const auto s = clip.samples();
  if (s.empty()) throw InvalidArgument("peak of an empty clip");
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (std::fabs(s[i]) > std::fabs(s[best])) best = i;
  return best;
}

// Window of length u ~ U[lo, hi] placed uniformly among positions that contain the peak time,
// then translated to lie inside [clip_start, clip_end] (cut to the clip when longer). The peak
// stays inside because the window is only ever shifted towards it.
inline Window peak_window(double peak_time, double clip_start, double clip_end, double lo, double hi,
                          std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(lo, hi)(rng);
  const double len = std::min(u, clip_end - clip_start);
  const double offset = std::uniform_real_distribution<double>(0.0, len)(rng);
  double start = std::clamp(peak_time - offset, clip_start, clip_end - len);
  return {start, start + len};
}

// Frame and audio for one train record. Audio is cut from the video track, then centred and
// zero-padded (or centre-cropped) to cfg.train_audio_len seconds.
inline model::TrainingPair sample_training_pair(const SampleRecord& record, const MediaStore& media,
                                                const CurationConfig& cfg, std::mt19937_64& rng,
                                                SampleMode mode = SampleMode::Default) {
  if (record.split != "train") throw InvalidArgument("sample_training_pair needs a train record");
  const AudioClip track = media.audio(record.video_id);
  Window w{record.clip_start, record.clip_end};
  if (mode == SampleMode::Peak) {
    const AudioClip clip = track.slice(record.clip_start, record.clip_end);
    const double peak_t = record.clip_start + static_cast<double>(peak_index(clip)) / clip.sample_rate();
    w = peak_window(peak_t, record.clip_start, record.clip_end, cfg.peak_window_min, cfg.peak_window_max, rng);
  }
  const double t = std::uniform_real_distribution<double>(w.start, w.end)(rng);
  const int frame = media.frame_at(t);
  const auto n = static_cast<std::size_t>(std::lround(cfg.train_audio_len * track.sample_rate()));
  return {media.frame(record.video_id, frame), fit_length_centered(track.slice(w.start, w.end), n)};
}

// Train records of a manifest as a training source. Unreadable media is skipped with a warning:
// the next record (cyclically) is used instead.
class ManifestSource : public model::TrainingSource {
 public:
  ManifestSource(std::vector<SampleRecord> records, const MediaStore& media, CurationConfig cfg, SampleMode mode)
      : media_(media), cfg_(std::move(cfg)), mode_(mode) {
    for (auto& r : records)
      if (r.split == "train") records_.push_back(std::move(r));
  }
  std::size_t size() const override { return records_.size(); }
  bool deterministic() const override { return false; }
  model::TrainingPair sample(std::size_t index, std::mt19937_64& rng) const override {
    for (std::size_t k = 0; k < records_.size(); ++k) {
      const auto& r = records_[(index + k) % records_.size()];
      try {
        return sample_training_pair(r, media_, cfg_, rng, mode_);
      } catch (const std::exception& e) {
        log::warn("skipping record " + r.id + ": " + e.what());
      }
    }
    throw Error("no readable training record");
  }

 private:
  std::vector<SampleRecord> records_;
  const MediaStore& media_;
  CurationConfig cfg_;
  SampleMode mode_;
};

}  // namespace colseg::data
