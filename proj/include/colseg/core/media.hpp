#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"

namespace colseg {

// Planar RGB image with channel values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("image dimensions must be positive");
    pixels_.assign(3 * static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  float& at(int channel, int row, int col) {
    return pixels_[channel * plane_size() + static_cast<std::size_t>(row) * width_ + col];
  }
  float at(int channel, int row, int col) const {
    return pixels_[channel * plane_size() + static_cast<std::size_t>(row) * width_ + col];
  }
  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

class AudioClip {
 public:
  AudioClip() = default;
  AudioClip(std::vector<float> samples, double sample_rate)
      : samples_(std::move(samples)), sample_rate_(sample_rate) {
    if (!(sample_rate > 0.0)) throw InvalidArgument("sample_rate must be positive");
  }

  std::span<const float> samples() const { return samples_; }
  std::vector<float>& mutable_samples() { return samples_; }
  double sample_rate() const { return sample_rate_; }
  double duration() const { return static_cast<double>(samples_.size()) / sample_rate_; }
  std::size_t size() const { return samples_.size(); }

  double mean_abs_amplitude() const {
    if (samples_.empty()) return 0.0;
    double s = 0.0;
    for (float v : samples_) s += std::fabs(v);
    return s / static_cast<double>(samples_.size());
  }

  // Samples in [start, end) seconds, clamped to the clip.
  AudioClip slice(double start, double end) const {
    const auto n = static_cast<long>(samples_.size());
    const long i0 = std::clamp(static_cast<long>(std::lround(start * sample_rate_)), 0L, n);
    const long i1 = std::clamp(static_cast<long>(std::lround(end * sample_rate_)), i0, n);
    return AudioClip({samples_.begin() + i0, samples_.begin() + i1}, sample_rate_);
  }

  friend bool operator==(const AudioClip&, const AudioClip&) = default;

 private:
  std::vector<float> samples_;
  double sample_rate_ = 16000.0;
};

// Linear-interpolation resampler.
inline AudioClip resample_linear(const AudioClip& clip, double target_rate) {
  if (!(target_rate > 0.0)) throw InvalidArgument("target_rate must be positive");
  if (clip.sample_rate() == target_rate) return clip;
  const auto in = clip.samples();
  const auto n_out = static_cast<std::size_t>(std::lround(clip.duration() * target_rate));
  std::vector<float> out(n_out, 0.0f);
  const double ratio = clip.sample_rate() / target_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= in.size()) {
      out[i] = in.empty() ? 0.0f : in.back();
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out[i] = static_cast<float>((1.0 - frac) * in[i0] + frac * in[i0 + 1]);
  }
  return AudioClip(std::move(out), target_rate);
}

// Zero-pads symmetrically (extra sample at the end) or centre-trims to exactly n samples.
inline AudioClip fit_length_centered(const AudioClip& clip, std::size_t n) {
  const auto in = clip.samples();
  std::vector<float> out(n, 0.0f);
  if (in.size() <= n) {
    const std::size_t offset = (n - in.size()) / 2;
    std::copy(in.begin(), in.end(), out.begin() + static_cast<long>(offset));
  } else {
    const std::size_t offset = (in.size() - n) / 2;
    std::copy_n(in.begin() + static_cast<long>(offset), n, out.begin());
  }
  return AudioClip(std::move(out), clip.sample_rate());
}

// Bilinear resize with pixel-centre alignment (half-pixel convention).
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height()) / out_h;
  const double sx = static_cast<double>(img.width()) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1 - wx) * img.at(ch, y0, x0) + wx * img.at(ch, y0, x1);
        const double bot = (1 - wx) * img.at(ch, y1, x0) + wx * img.at(ch, y1, x1);
        out.at(ch, r, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

inline SoftMask resize_bilinear(const SoftMask& m, int out_h, int out_w) {
  SoftMask out(out_h, out_w);
  const double sy = static_cast<double>(m.height()) / out_h;
  const double sx = static_cast<double>(m.width()) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, m.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, m.height() - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, m.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, m.width() - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * m(y0, x0) + wx * m(y0, x1);
      const double bot = (1 - wx) * m(y1, x0) + wx * m(y1, x1);
      out(r, c) = static_cast<float>((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

inline Image crop(const Image& img, const BBox& box) {
  if (!box.valid_within(img.height(), img.width())) throw InvalidArgument("crop box out of bounds");
  Image out(box.height(), box.width());
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < box.height(); ++r)
      for (int c = 0; c < box.width(); ++c)
        out.at(ch, r, c) = img.at(ch, r + box.y_min, c + box.x_min);
  return out;
}

// Image multiplied by a per-pixel weight (used for masking).
inline Image apply_mask(const Image& img, const BinaryMask& m) {
  detail::check_same_shape(img, m, "apply_mask");
  Image out = img;
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < img.height(); ++r)
      for (int c = 0; c < img.width(); ++c)
        if (!m(r, c)) out.at(ch, r, c) = 0.0f;
  return out;
}

}  // namespace colseg
