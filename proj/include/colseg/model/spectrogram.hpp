#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <vector>

#include "colseg/core/media.hpp"

namespace colseg::model {

struct SpectrogramConfig {
  double sample_rate = 16000.0;
  int n_fft = 512;
  int win_length = 400;  // 25 ms
  int hop_length = 160;  // 10 ms
  int n_mels = 64;
  double f_min = 20.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;
};

// Frames x mel-bins matrix of natural-log mel power.
struct Spectrogram {
  int frames = 0;
  int mels = 0;
  std::vector<double> values;  // row-major [frames, mels]

  double at(int frame, int mel) const {
    return values[static_cast<std::size_t>(frame) * mels + mel];
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters, [n_mels, n_fft/2 + 1]. Filter m peaks at the m+1-th of n_mels+2 points
// equally spaced on the mel scale between f_min and f_max.
inline std::vector<double> mel_filterbank(const SpectrogramConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  std::vector<double> fb(static_cast<std::size_t>(cfg.n_mels) * bins, 0.0);
  const double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb[static_cast<std::size_t>(m) * bins + k] = w;
    }
  }
  return fb;
}

// Mel bin whose triangle peaks closest to the given frequency.
inline int mel_bin_for(double hz, const SpectrogramConfig& cfg) {
  const double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(cfg.f_max);
  const double pos = (hz_to_mel(hz) - m_lo) / (m_hi - m_lo) * (cfg.n_mels + 1) - 1.0;
  return std::clamp(static_cast<int>(std::lround(pos)), 0, cfg.n_mels - 1);
}

class SpectrogramExtractor {
 public:
  explicit SpectrogramExtractor(SpectrogramConfig cfg = {})
      : cfg_(cfg), filters_(mel_filterbank(cfg)), window_(cfg.win_length) {
    for (int i = 0; i < cfg_.win_length; ++i)
      window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg_.win_length);
  }

  const SpectrogramConfig& config() const { return cfg_; }

  // Frames = 1 + (N - win) / hop; clips shorter than one window are zero-padded to it.
  int frame_count(std::size_t n_samples) const {
    const auto n = std::max<std::size_t>(n_samples, static_cast<std::size_t>(cfg_.win_length));
    return 1 + static_cast<int>((n - cfg_.win_length) / cfg_.hop_length);
  }

  Spectrogram compute(const AudioClip& raw) const {
    const AudioClip clip = resample_linear(raw, cfg_.sample_rate);
    std::vector<float> samples(clip.samples().begin(), clip.samples().end());
    if (samples.size() < static_cast<std::size_t>(cfg_.win_length))
      samples.resize(cfg_.win_length, 0.0f);
    const int frames = frame_count(samples.size());
    const int bins = cfg_.n_fft / 2 + 1;

    Spectrogram out{frames, cfg_.n_mels,
                    std::vector<double>(static_cast<std::size_t>(frames) * cfg_.n_mels)};
    std::unique_ptr<double, decltype(&fftw_free)> in(
        static_cast<double*>(fftw_malloc(sizeof(double) * cfg_.n_fft)), &fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> spec(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)), &fftw_free);
    fftw_plan plan;
    {
      // The FFTW planner is not re-entrant.
      std::lock_guard lock(planner_mutex());
      plan = fftw_plan_dft_r2c_1d(cfg_.n_fft, in.get(), spec.get(), FFTW_ESTIMATE);
    }
    std::vector<double> power(bins);
    for (int f = 0; f < frames; ++f) {
      std::fill_n(in.get(), cfg_.n_fft, 0.0);
      const std::size_t start = static_cast<std::size_t>(f) * cfg_.hop_length;
      for (int i = 0; i < cfg_.win_length; ++i) in.get()[i] = samples[start + i] * window_[i];
      fftw_execute(plan);
      for (int k = 0; k < bins; ++k)
        power[k] = spec.get()[k][0] * spec.get()[k][0] + spec.get()[k][1] * spec.get()[k][1];
      for (int m = 0; m < cfg_.n_mels; ++m) {
        double e = 0.0;
        const double* w = filters_.data() + static_cast<std::size_t>(m) * bins;
        for (int k = 0; k < bins; ++k) e += w[k] * power[k];
        out.values[static_cast<std::size_t>(f) * cfg_.n_mels + m] =
            std::log(std::max(e, cfg_.log_floor));
      }
    }
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
    return out;
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  SpectrogramConfig cfg_;
  std::vector<double> filters_;
  std::vector<double> window_;
};

}  // namespace colseg::model
