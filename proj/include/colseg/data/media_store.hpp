#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <string>

#include "colseg/core/error.hpp"
#include "colseg/core/io.hpp"
#include "colseg/core/media.hpp"

namespace colseg::data {

// Frames and audio tracks by video id.
class MediaStore {
 public:
  virtual ~MediaStore() = default;
  virtual Image frame(const std::string& video_id, int frame_index) const = 0;
  virtual AudioClip audio(const std::string& video_id) const = 0;
  virtual double fps() const = 0;
  int frame_at(double seconds) const { return static_cast<int>(std::floor(seconds * fps() + 1e-9)); }
};

// Directory layout: <root>/<video>.wav, and frames <root>/<video>/frame_<NNNNNN>.png; a video
// with a single still image may instead provide <root>/<video>.png, used for every frame.
class DirectoryMediaStore : public MediaStore {
 public:
  explicit DirectoryMediaStore(std::filesystem::path root, double fps = 30.0) : root_(std::move(root)), fps_(fps) {
    if (!(fps_ > 0)) throw InvalidArgument("fps must be positive");
  }

  Image frame(const std::string& video_id, int frame_index) const override {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.png", frame_index);
    const auto framed = root_ / video_id / name;
    if (std::filesystem::exists(framed)) return io::read_image_png(framed);
    const auto still = root_ / (video_id + ".png");
    if (std::filesystem::exists(still)) return io::read_image_png(still);
    throw Error("no frame " + std::to_string(frame_index) + " for video " + video_id);
  }

  AudioClip audio(const std::string& video_id) const override {
    {
      std::lock_guard lock(mutex_);
      if (cached_id_ == video_id) return cached_;
    }
    const auto path = root_ / (video_id + ".wav");
    if (!std::filesystem::exists(path)) throw Error("no audio for video " + video_id);
    AudioClip clip = io::read_wav(path);
    std::lock_guard lock(mutex_);
    cached_id_ = video_id;
    cached_ = clip;
    return clip;
  }

  double fps() const override { return fps_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  double fps_;
  mutable std::mutex mutex_;
  // Records are grouped by video, so caching the last track avoids most re-reads.
  mutable std::string cached_id_;
  mutable AudioClip cached_;
};

}  // namespace colseg::data
