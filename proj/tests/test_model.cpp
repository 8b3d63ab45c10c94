#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "colseg/model/trainer.hpp"
#include "fixtures.hpp"

using namespace colseg;
using model::EncoderBundle;

namespace {

AudioClip tone(double hz, double seconds, double rate = 16000.0) {
  std::vector<float> s(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<float>(0.5 * std::sin(2 * M_PI * hz * i / rate));
  return AudioClip(std::move(s), rate);
}

// Random images and clips, fixed per index.
class RandomSource : public model::TrainingSource {
 public:
  RandomSource(int n, int image_size) : n_(n), size_(image_size) {}
  std::size_t size() const override { return static_cast<std::size_t>(n_); }
  model::TrainingPair sample(std::size_t i, std::mt19937_64&) const override {
    std::mt19937_64 rng(1000 + i);
    return {fixtures::random_image(size_, rng), fixtures::random_clip(0.3, 16000.0, rng)};
  }
  bool deterministic() const override { return true; }

 private:
  int n_, size_;
};

model::TrainConfig tiny_train(int steps) {
  model::TrainConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.learning_rate = 1e-2;
  c.audio_seconds = 0.3;
  c.seed = 2;
  return c;
}

double max_abs_diff(const SoftMask& a, const SoftMask& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) d = std::max(d, std::fabs(double(a.values()[i]) - b.values()[i]));
  return d;
}

}  // namespace

TEST(Spectrogram, SilenceGivesLogFloor) {
  model::SpectrogramExtractor ex;
  const auto s = ex.compute(AudioClip(std::vector<float>(16000, 0.0f), 16000.0));
  for (double v : s.values) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
}

TEST(Spectrogram, TwoSecondsGiveAboutTwoHundredFrames) {
  model::SpectrogramExtractor ex;
  const auto s = ex.compute(AudioClip(std::vector<float>(32000, 0.1f), 16000.0));
  EXPECT_EQ(s.frames, 1 + (32000 - 400) / 160);
  EXPECT_EQ(s.mels, 64);
  EXPECT_NEAR(s.frames, 200, 3);
}

TEST(Spectrogram, ShortClipIsPaddedToOneFrame) {
  model::SpectrogramExtractor ex;
  EXPECT_EQ(ex.compute(AudioClip(std::vector<float>(100, 0.1f), 16000.0)).frames, 1);
}

TEST(Spectrogram, ToneLandsOnPredictedMelBin) {
  model::SpectrogramExtractor ex;
  for (double hz : {500.0, 1000.0, 3000.0}) {
    const auto s = ex.compute(tone(hz, 0.5));
    std::vector<double> avg(s.mels, 0.0);
    for (int f = 0; f < s.frames; ++f)
      for (int m = 0; m < s.mels; ++m) avg[m] += s.at(f, m);
    const int got = static_cast<int>(std::max_element(avg.begin(), avg.end()) - avg.begin());
    // Filter centres sit at n_mels + 2 equally spaced points on 2595 log10(1 + f / 700).
    auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    const double want = (mel(hz) - mel(20.0)) / (mel(8000.0) - mel(20.0)) * 65.0 - 1.0;
    EXPECT_LE(std::fabs(got - want), 1.0) << hz << " Hz";
  }
}

TEST(Spectrogram, MelScaleReferencePoints) {
  EXPECT_NEAR(model::hz_to_mel(1000.0), 1000.0, 0.1);
  EXPECT_NEAR(model::mel_to_hz(model::hz_to_mel(440.0)), 440.0, 1e-9);
}

TEST(Encoders, FullSizeGridIs22By22) {
  EncoderBundle bundle;
  const auto v = bundle.encode_image(Image(352, 352, 0.5f));
  EXPECT_EQ(v.grid_h, 22);
  EXPECT_EQ(v.grid_w, 22);
  EXPECT_EQ(v.grid.dim(0), 22 * 22);
}

TEST(Encoders, AudioEmbeddingIsDeterministicAndUnitNorm) {
  EncoderBundle a(fixtures::tiny_config()), b(fixtures::tiny_config());
  std::mt19937_64 rng(1);
  const auto spec = a.spectrogram(fixtures::random_clip(0.5, 16000.0, rng));
  const auto ea = a.encode_audio(spec), eb = b.encode_audio(spec);
  double norm = 0.0;
  for (std::size_t i = 0; i < ea.numel(); ++i) {
    EXPECT_EQ(ea[i], eb[i]);
    norm += ea[i] * ea[i];
  }
  EXPECT_NEAR(norm, 1.0, 1e-9);
}

TEST(Encoders, BlackImageIsFinite) {
  EncoderBundle bundle(fixtures::tiny_config());
  const auto v = bundle.encode_image(Image(64, 64, 0.0f));
  for (double x : v.grid.data()) EXPECT_TRUE(std::isfinite(x));
  for (double x : v.global.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(Encoders, ImagesOfOtherSizesAreResized) {
  EncoderBundle bundle(fixtures::tiny_config());
  EXPECT_EQ(bundle.encode_image(Image(100, 80, 0.3f)).grid_h, 4);
}

TEST(Decode, ShapeRangeAndAudioDependence) {
  EncoderBundle bundle(fixtures::tiny_config());
  std::mt19937_64 rng(2);
  const Image img = fixtures::random_image(64, rng);
  const auto e1 = bundle.encode_audio(bundle.spectrogram(tone(300.0, 0.5)));
  const auto e2 = bundle.encode_audio(bundle.spectrogram(tone(3500.0, 0.5)));
  const auto m1 = bundle.infer(img, e1), m2 = bundle.infer(img, e2);
  EXPECT_EQ(m1.height(), 64);
  EXPECT_EQ(m1.width(), 64);
  for (float v : m1.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_GT(max_abs_diff(m1, m2), 1e-3);
}

TEST(Decode, RejectsBatchedEmbedding) {
  EncoderBundle bundle(fixtures::tiny_config());
  std::mt19937_64 rng(3);
  const auto specs = std::vector{bundle.spectrogram(fixtures::random_clip(0.3, 16000.0, rng)),
                                 bundle.spectrogram(fixtures::random_clip(0.3, 16000.0, rng))};
  EXPECT_THROW(bundle.infer(Image(64, 64), bundle.encode_audio(specs)), ShapeMismatch);
}

TEST(InferRefined, FullCropMatchesSinglePass) {
  EncoderBundle bundle(fixtures::tiny_config());
  std::mt19937_64 rng(4);
  const Image img = fixtures::random_image(64, rng);
  const auto e = bundle.encode_audio(bundle.spectrogram(fixtures::random_clip(0.5, 16000.0, rng)));
  EXPECT_LT(max_abs_diff(bundle.infer_refined(img, e, 1.0), bundle.infer(img, e)), 1e-5);
}

TEST(InferRefined, SecondPassLivesInsideTheFirstPassCrop) {
  EncoderBundle bundle(fixtures::tiny_config());
  std::mt19937_64 rng(5);
  for (int t = 0; t < 5; ++t) {
    const Image img = fixtures::random_image(64, rng);
    const auto e = bundle.encode_audio(bundle.spectrogram(fixtures::random_clip(0.5, 16000.0, rng)));
    const auto first = bundle.infer(img, e);
    const BBox box = peak_crop_box(first, 0.5);
    const auto idx = first.argmax();
    EXPECT_TRUE(box.contains(static_cast<int>(idx / 64), static_cast<int>(idx % 64)));
    const auto refined = bundle.infer_refined(img, e, 0.5);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        if (!box.contains(r, c)) EXPECT_EQ(refined(r, c), 0.0f);
  }
}

TEST(Training, FrozenHashesSurviveTraining) {
  EncoderBundle bundle(fixtures::tiny_config());
  const auto before = bundle.frozen_hashes();
  const auto audio_before = bundle.audio_weights();
  RandomSource src(8, 64);
  model::Trainer trainer(bundle, tiny_train(3), src);
  trainer.run();
  EXPECT_EQ(bundle.frozen_hashes(), before);
  EXPECT_NE(bundle.audio_weights(), audio_before);
}

TEST(Training, GradientReachesProjectionButNotFrozenEncoders) {
  EncoderBundle bundle(fixtures::tiny_config());
  const auto batch = fixtures::tiny_batch(bundle, 3, 6);
  std::mt19937_64 rng(7);
  const auto noise = model::logistic_noise(3 * 64 * 64, rng);
  auto tau = nn::Tensor::from({1}, {0.07}, true);
  model::batch_loss(bundle, batch, {}, tau, noise).total.backward();
  bool projection_moved = false;
  for (const auto& p : bundle.audio().projection().params())
    for (double g : p.tensor.grad()) projection_moved |= g != 0.0;
  EXPECT_TRUE(projection_moved);
  for (const auto* store : {&bundle.text().params(), &bundle.visual().params(), &bundle.decoder().params()})
    for (const auto& p : store->params()) {
      EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
      for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0) << p.name;
    }
}

TEST(Training, FreezeFlagsLimitTrainableParameters) {
  EncoderBundle bundle(fixtures::tiny_config());
  const auto all = bundle.trainable_parameters().size();
  bundle.set_freeze({.backbone = true, .projection = false, .pool = true});
  EXPECT_LT(bundle.trainable_parameters().size(), all);
  EXPECT_EQ(bundle.trainable_parameters().size(), bundle.audio().projection().params().size());
}

TEST(Checkpoint, RoundTripRestoresAudioWeights) {
  const auto dir = fixtures::temp_dir("model-ckpt");
  EncoderBundle bundle(fixtures::tiny_config());
  RandomSource src(8, 64);
  model::Trainer trainer(bundle, tiny_train(2), src);
  trainer.run({}, dir / "ck.json");
  EncoderBundle fresh(fixtures::tiny_config());
  model::Checkpoint::load(dir / "ck.json").apply(fresh);
  EXPECT_EQ(fresh.audio_weights(), bundle.audio_weights());
  EXPECT_EQ(model::Checkpoint::load(dir / "ck.json").step, 2);
}

TEST(Checkpoint, RefusesOtherFrozenWeights) {
  EncoderBundle bundle(fixtures::tiny_config());
  RandomSource src(8, 64);
  model::Trainer trainer(bundle, tiny_train(1), src);
  const auto ck = trainer.checkpoint();
  auto other_cfg = fixtures::tiny_config();
  other_cfg.frozen_seed = 99;
  EncoderBundle other(other_cfg);
  EXPECT_THROW(ck.apply(other), Error);
}

TEST(Checkpoint, ResumeContinuesIdentically) {
  RandomSource src(8, 64);
  EncoderBundle straight(fixtures::tiny_config());
  model::Trainer a(straight, tiny_train(4), src);
  a.run();

  EncoderBundle first(fixtures::tiny_config());
  model::Trainer b(first, tiny_train(2), src);
  b.run();
  EncoderBundle second(fixtures::tiny_config());
  model::Trainer c(second, tiny_train(4), src);
  c.resume(model::Checkpoint::from_json(b.checkpoint().to_json()));
  c.run();
  EXPECT_EQ(second.audio_weights(), straight.audio_weights());
  EXPECT_DOUBLE_EQ(c.tau(), a.tau());
}

TEST(RandomBaseline, ProjectionReseedIsDeterministic) {
  EncoderBundle a(fixtures::tiny_config()), b(fixtures::tiny_config());
  a.randomize_projection(5);
  b.randomize_projection(5);
  EXPECT_EQ(a.audio_weights(), b.audio_weights());
  b.randomize_projection(6);
  EXPECT_NE(a.audio_weights(), b.audio_weights());
  EXPECT_EQ(a.frozen_hashes(), b.frozen_hashes());
}
