#pragma once

// Small deterministic inputs shared by the unit tests and the acceptance run.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "colseg/model/trainer.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace colseg;

inline std::filesystem::path source_dir() { return COLSEG_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "tests" / "data"; }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("colseg-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Tiny encoders: 64 px input, 4 x 4 feature grid, 16-wide embeddings, 16 mel bins.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.image_size = 64;
  c.patch = 16;
  c.pixel_pool = 8;
  c.colour_centres = 16;
  c.embed_dim = 16;
  c.text_width = 16;
  c.audio_width = 16;
  c.spectrogram.n_mels = 16;
  return c;
}

inline Image random_image(int size, std::mt19937_64& rng) {
  Image img(size, size);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.pixels()) v = u(rng);
  return img;
}

// Decaying tone with noise, so different seeds give clearly different spectrograms.
inline AudioClip random_clip(double seconds, double rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f(200.0, 4000.0), a(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double hz = f(rng), amp = a(rng);
  std::vector<float> s(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    s[i] = static_cast<float>(amp * std::exp(-4.0 * t) * std::sin(2 * M_PI * hz * t) + noise(rng));
  }
  return AudioClip(std::move(s), rate);
}

inline model::Batch tiny_batch(const model::EncoderBundle& bundle, int n, std::uint64_t seed,
                               double seconds = 0.3) {
  std::mt19937_64 rng(seed);
  model::Batch b;
  b.grid_h = b.grid_w = bundle.config().grid();
  for (int i = 0; i < n; ++i) {
    const Image img = random_image(bundle.config().image_size, rng);
    b.images.push_back(model::image_to_tensor(img));
    {
      nn::NoGradGuard guard;
      b.visual_grids.push_back(bundle.visual().encode(b.images.back()).grid.detach());
    }
    b.spectrograms.push_back(bundle.spectrogram(random_clip(seconds, bundle.config().spectrogram.sample_rate, rng)));
  }
  return b;
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
};

// Analytic gradient of the total loss (relaxed Gumbel sample, fixed noise) against central
// differences on `per_tensor` coordinates of every trainable tensor and the temperature.
inline GradCheck check_total_loss_gradient(model::EncoderBundle& bundle, const model::Batch& batch,
                                           const losses::LossWeights& w, int per_tensor, std::uint64_t seed,
                                           double h = 1e-5) {
  std::mt19937_64 rng(seed);
  const int s = bundle.config().image_size;
  const auto noise = model::logistic_noise(batch.images.size() * static_cast<std::size_t>(s) * s, rng);
  auto tau = nn::Tensor::from({1}, {w.tau}, true);
  auto params = bundle.trainable_parameters();
  params.push_back(tau);
  for (auto& p : params) p.zero_grad();
  model::batch_loss(bundle, batch, w, tau, noise, false).total.backward();
  auto f = [&] {
    nn::NoGradGuard guard;
    return model::batch_loss(bundle, batch, w, tau, noise, false).total.item();
  };
  GradCheck out;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(p.numel(), 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, p.numel() - 1);
    for (int k = 0; k < per_tensor; ++k) {
      const std::size_t i = p.numel() == 1 ? 0 : pick(rng);
      const double num = oracle::central_difference(p, i, f, h);
      out.max_rel_error = std::max(out.max_rel_error, oracle::rel_error(analytic[i], num));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace fixtures
