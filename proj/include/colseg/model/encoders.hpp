#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "colseg/core/media.hpp"
#include "colseg/model/spectrogram.hpp"
#include "colseg/nn/params.hpp"
#include "colseg/nn/tensor.hpp"

namespace colseg::model {

using nn::Tensor;

struct ModelConfig {
  int image_size = 352;
  int patch = 16;
  int pixel_pool = 8;        // colour averaging before the kernel features
  int colour_centres = 64;   // Gaussian colour kernels
  double colour_sigma = 0.15;
  int embed_dim = 64;   // joint image/audio embedding width
  int text_width = 64;  // text token width
  int audio_width = 64;
  double decoder_scale = 3.0;
  double decoder_threshold = 1.5;  // standardised similarity mapped to mask value 0.5
  std::uint64_t frozen_seed = 7;
  std::uint64_t audio_seed = 11;
  SpectrogramConfig spectrogram;

  int grid() const { return image_size / patch; }
};

inline Tensor image_to_tensor(const Image& img) {
  std::vector<double> v(img.pixels().begin(), img.pixels().end());
  return Tensor::from({3, img.height(), img.width()}, std::move(v));
}

inline Tensor spectrogram_to_tensor(const Spectrogram& s) {
  return Tensor::from({s.frames, s.mels}, s.values);
}

// Patch features plus the pooled global vector of one image.
struct VisualFeatures {
  Tensor grid;        // [h*w, D], rows unit-normalised
  Tensor global;      // [1, D], unit-normalised
  int grid_h = 0;
  int grid_w = 0;
};

// Frozen patch encoder. Pixels are average-pooled, mapped to Gaussian colour-kernel responses,
// averaged over each patch (a kernel mean embedding of the patch colours), randomly projected,
// centred on the mean response to uniform colour noise and unit-normalised.
class VisualEncoder {
 public:
  VisualEncoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.patch % cfg.pixel_pool || cfg.image_size % cfg.patch)
      throw InvalidArgument("image size, patch and pixel pool must nest");
    params_.set_trainable(false);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> c(static_cast<std::size_t>(cfg.colour_centres) * 3);
    for (auto& v : c) v = unit(rng);
    centres_ = params_.add("visual.colour_centres", {cfg.colour_centres, 3}, std::move(c));
    proj_ = params_.add_normal("visual.proj", {cfg.embed_dim, cfg.colour_centres},
                               1.0 / std::sqrt(cfg.colour_centres), rng);
    params_.add("visual.sigma", {1}, {cfg.colour_sigma});
    // Centre on the expected response to colours drawn uniformly from the RGB cube.
    std::vector<double> noise(3 * 4096);
    for (auto& v : noise) v = unit(rng);
    std::vector<double> planar(noise.size());
    for (int i = 0; i < 4096; ++i)
      for (int ch = 0; ch < 3; ++ch) planar[static_cast<std::size_t>(ch) * 4096 + i] = noise[i * 3 + ch];
    nn::NoGradGuard guard;
    auto r = nn::rbf_features(Tensor::from({3, 4096}, std::move(planar)), centres_, cfg.colour_sigma);
    auto mean = nn::matmul_nt(nn::mean_over_rows(nn::transpose(r)), proj_);  // [1, D]
    std::vector<double> neg(mean.data().begin(), mean.data().end());
    for (auto& v : neg) v = -v;
    offset_ = params_.add("visual.offset", {cfg.embed_dim}, std::move(neg));
  }

  // image: [3, S, S] tensor at model resolution.
  VisualFeatures encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.image_size ||
        image.dim(2) != cfg_.image_size)
      throw ShapeMismatch("visual encoder expects [3," + std::to_string(cfg_.image_size) + "," +
                          std::to_string(cfg_.image_size) + "], got " + nn::shape_str(image.shape()));
    return encode_pooled(nn::avg_pool2d(image, cfg_.pixel_pool));
  }

  // Features of image * mask (mask: S*S values) without forming the masked image.
  VisualFeatures encode_masked(const Tensor& image, const Tensor& mask) const {
    return encode_pooled(nn::masked_avg_pool2d(image, mask, cfg_.pixel_pool));
  }

  // pooled: [3, S/pool, S/pool] average colours.
  VisualFeatures encode_pooled(const Tensor& pooled) const {
    const int s = cfg_.image_size / cfg_.pixel_pool, g = cfg_.grid();
    auto px = nn::reshape(pooled, {3, s * s});
    auto k = nn::reshape(nn::rbf_features(px, centres_, cfg_.colour_sigma),
                         {cfg_.colour_centres, s, s});
    auto cells = nn::reshape(nn::avg_pool2d(k, cfg_.patch / cfg_.pixel_pool),
                             {cfg_.colour_centres, g * g});
    auto f = nn::add_row_vector(nn::matmul_nt(nn::transpose(cells), proj_), offset_);
    VisualFeatures out;
    out.grid_h = out.grid_w = g;
    out.global = nn::l2_normalize_rows(nn::mean_over_rows(f));
    out.grid = nn::l2_normalize_rows(f);
    return out;
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  Tensor centres_, proj_, offset_;
};

// Frozen single-block text transformer over the prompt "a photo of a <audio>". The output is the
// final-layer state at the end-of-sequence position, projected to the joint space and
// unit-normalised.
class TextEncoder {
 public:
  static constexpr int kSequence = 7;  // <sot> a photo of a <audio> <eot>
  static constexpr int kAudioSlot = 5;
  // The end-of-sequence query carries a fixed prior toward the content slot (pretrained text
  // encoders attend from EOT mostly to the class word), and the prompt-word embeddings are small,
  // so the output is dominated by the inserted token.
  static constexpr double kContentPrior = 3.0;
  static constexpr double kWordScale = 0.3;

  TextEncoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    const int d = cfg.text_width;
    params_.set_trainable(false);
    tokens_ = params_.add_normal("text.token_embedding", {5, d}, kWordScale, rng);  // sot a photo of eot
    pos_ = params_.add_normal("text.position_embedding", {kSequence, d}, 0.1 * kWordScale, rng);
    wq_ = params_.add_xavier("text.wq", d, d, rng);
    wk_ = params_.add_xavier("text.wk", d, d, rng);
    wv_ = params_.add_xavier("text.wv", d, d, rng);
    wo_ = params_.add_xavier("text.wo", d, d, rng);
    fc1_ = params_.add_xavier("text.fc1", 2 * d, d, rng);
    fc2_ = params_.add_xavier("text.fc2", d, 2 * d, rng);
    proj_ = params_.add_xavier("text.proj", cfg.embed_dim, d, rng);
    cache_prompt();
  }

  static std::vector<std::string> prompt_words() { return {"a", "photo", "of", "a"}; }

  // tokens: [B, text_width] audio tokens -> [B, embed_dim] unit embeddings.
  Tensor encode(const Tensor& audio_tokens) const {
    const int b = audio_tokens.dim(0), d = cfg_.text_width;
    if (audio_tokens.dim(1) != d) throw ShapeMismatch("audio token width != text width");
    // Audio row of the sequence, pre-normalised.
    auto pos_audio = Tensor::from({d}, std::vector<double>(pos_.data().begin() + kAudioSlot * d,
                                                           pos_.data().begin() + (kAudioSlot + 1) * d));
    auto x_audio = nn::layer_norm_rows(nn::add_row_vector(audio_tokens, pos_audio));
    auto k_audio = nn::matmul_nt(x_audio, wk_);  // [B, d]
    auto v_audio = nn::matmul_nt(x_audio, wv_);  // [B, d]
    // Attention logits of the <eot> query against the six constant keys and the audio key.
    auto s_audio = nn::mul_scalar(nn::matmul(k_audio, q_eot_col_), 1.0 / std::sqrt(d));  // [B,1]
    std::vector<double> const_logits(static_cast<std::size_t>(b) * kSequence);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < kSequence; ++j)
        const_logits[static_cast<std::size_t>(i) * kSequence + j] = const_scores_[j];
    auto logits = nn::add(Tensor::from({b, kSequence}, std::move(const_logits)),
                          nn::matmul(s_audio, audio_onehot_row_));
    auto att = nn::softmax_rows(logits);                       // [B, 7]
    auto attended = nn::matmul(att, const_values_);            // [B, d], audio slot zero
    auto att_audio = nn::matmul(att, audio_onehot_col_);       // [B, 1]
    attended = nn::add(attended, nn::mul(nn::matmul(att_audio, ones_row_), v_audio));
    auto h = nn::add_row_vector(nn::matmul_nt(attended, wo_), eot_row_);
    auto mlp = nn::matmul_nt(nn::gelu(nn::matmul_nt(nn::layer_norm_rows(h), fc1_)), fc2_);
    h = nn::add(h, mlp);
    auto out = nn::matmul_nt(nn::layer_norm_rows(h), proj_);
    return nn::l2_normalize_rows(out);
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Rebuilds the cached prompt after the weights change (e.g. loaded from file).
  void cache_prompt() {
    nn::NoGradGuard guard;
    const int d = cfg_.text_width;
    // Token ids per position; the audio slot is filled at encode time.
    const int ids[kSequence] = {0, 1, 2, 3, 1, -1, 4};
    std::vector<double> x(static_cast<std::size_t>(kSequence) * d, 0.0);
    for (int p = 0; p < kSequence; ++p) {
      if (ids[p] < 0) continue;
      for (int k = 0; k < d; ++k)
        x[static_cast<std::size_t>(p) * d + k] =
            tokens_[static_cast<std::size_t>(ids[p]) * d + k] + pos_[static_cast<std::size_t>(p) * d + k];
    }
    auto xt = Tensor::from({kSequence, d}, x);
    auto ln = nn::layer_norm_rows(xt);
    auto k = nn::matmul_nt(ln, wk_);
    auto v = nn::matmul_nt(ln, wv_);
    auto eot_ln = nn::slice_rows(ln, kSequence - 1, 1);
    auto q = nn::matmul_nt(eot_ln, wq_);  // [1, d]
    q_eot_col_ = nn::reshape(q, {d, 1}).detach();
    const_scores_.assign(kSequence, 0.0);
    for (int p = 0; p < kSequence; ++p) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += k[static_cast<std::size_t>(p) * d + j] * q[j];
      const_scores_[p] = p == kAudioSlot ? 0.0 : s / std::sqrt(d) - kContentPrior;
    }
    std::vector<double> cv(v.data().begin(), v.data().end());
    std::fill_n(cv.begin() + kAudioSlot * d, d, 0.0);
    const_values_ = Tensor::from({kSequence, d}, std::move(cv));
    std::vector<double> onehot(kSequence, 0.0);
    onehot[kAudioSlot] = 1.0;
    audio_onehot_row_ = Tensor::from({1, kSequence}, onehot);
    audio_onehot_col_ = Tensor::from({kSequence, 1}, onehot);
    ones_row_ = Tensor::full({1, d}, 1.0);
    eot_row_ = Tensor::from({d}, std::vector<double>(x.end() - d, x.end()));
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  Tensor tokens_, pos_, wq_, wk_, wv_, wo_, fc1_, fc2_, proj_;
  // Cached prompt state.
  Tensor q_eot_col_, const_values_, audio_onehot_row_, audio_onehot_col_, ones_row_, eot_row_;
  std::vector<double> const_scores_;
};

// Frozen decoder: per-patch cosine similarity with the conditioning embedding, mapped to
// logits by a fixed affine transform and upsampled to image resolution.
class MaskDecoder {
 public:
  explicit MaskDecoder(const ModelConfig& cfg) : cfg_(cfg) {
    params_.set_trainable(false);
    scale_ = params_.add("decoder.scale", {1}, {cfg.decoder_scale});
    threshold_ = params_.add("decoder.threshold", {1}, {cfg.decoder_threshold});
  }

  // Mean and standard deviation of one cosine map, the reference for standardising another view.
  struct MapStats {
    double mean = 0.0;
    double std = 1.0;
  };

  MapStats map_stats(const VisualFeatures& v, const Tensor& audio_embedding) const {
    check_width(v, audio_embedding);
    const Tensor map = nn::matmul_nt(audio_embedding, v.grid);
    const auto cos = map.data();
    MapStats st;
    for (double c : cos) st.mean += c;
    st.mean /= static_cast<double>(cos.size());
    double var = 0.0;
    for (double c : cos) var += (c - st.mean) * (c - st.mean);
    st.std = std::sqrt(var / static_cast<double>(cos.size()) + 1e-5);
    return st;
  }

  // Logits at the feature grid for every conditioning row: [B, h*w].
  Tensor grid_logits(const VisualFeatures& v, const Tensor& audio_embeddings) const {
    check_width(v, audio_embeddings);
    // Cosine maps are standardised per row, so the mask area follows from the contrast of the
    // map rather than its absolute level.
    auto z = nn::layer_norm_rows(nn::matmul_nt(audio_embeddings, v.grid));
    return nn::mul_scalar(nn::add_scalar(z, -threshold_.item()), scale_.item());
  }

  // One row standardised with the statistics of another view of the same image (a crop uses
  // those of the whole frame, so both passes apply the same similarity threshold).
  Tensor grid_logits(const VisualFeatures& v, const Tensor& audio_embedding, const MapStats& ref) const {
    check_width(v, audio_embedding);
    auto z = nn::mul_scalar(nn::add_scalar(nn::matmul_nt(audio_embedding, v.grid), -ref.mean), 1.0 / ref.std);
    return nn::mul_scalar(nn::add_scalar(z, -threshold_.item()), scale_.item());
  }

  // Full-resolution logits of one grid row [1, h*w] -> [S, S].
  Tensor upsample(const Tensor& grid_row, int grid_h, int grid_w) const {
    return nn::upsample_bilinear(nn::reshape(grid_row, {grid_h, grid_w}), cfg_.image_size,
                                 cfg_.image_size);
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  static void check_width(const VisualFeatures& v, const Tensor& a) {
    if (a.dim(1) != v.grid.dim(1))
      throw ShapeMismatch("decoder: audio embedding width " + std::to_string(a.dim(1)) + " != visual width " +
                          std::to_string(v.grid.dim(1)));
  }

  ModelConfig cfg_;
  nn::ParamStore params_;
  Tensor scale_, threshold_;
};

// Trainable audio branch: convolutional backbone over log-mel frames, projection MLP into the
// text-token space, and attentive pooling with one learned query.
class AudioEncoder {
 public:
  AudioEncoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    const int mels = cfg.spectrogram.n_mels, w = cfg.audio_width, d = cfg.text_width;
    conv1_ = backbone_.add_xavier("audio.backbone.conv1", w, 5 * mels, rng);
    conv1_b_ = backbone_.add_zeros("audio.backbone.conv1_bias", {w});
    conv2_ = backbone_.add_xavier("audio.backbone.conv2", w, 3 * w, rng);
    conv2_b_ = backbone_.add_zeros("audio.backbone.conv2_bias", {w});
    proj1_ = projection_.add_xavier("audio.projection.fc1", w, w, rng);
    proj1_b_ = projection_.add_zeros("audio.projection.fc1_bias", {w});
    proj2_ = projection_.add_xavier("audio.projection.fc2", d, w, rng);
    proj2_b_ = projection_.add_zeros("audio.projection.fc2_bias", {d});
    query_ = pool_.add_normal("audio.pool.query", {d, 1}, 1.0 / std::sqrt(d), rng);
  }

  // Log-mel input is standardised with fixed constants before the first convolution.
  static constexpr double kInputMean = -6.0;
  static constexpr double kInputScale = 1.0 / 6.0;

  // spec: [T, mels] -> audio token [1, text_width], zero mean and unit variance.
  Tensor token(const Tensor& spec) const {
    auto x = nn::mul_scalar(nn::add_scalar(spec, -kInputMean), kInputScale);
    x = nn::gelu(nn::add_row_vector(nn::matmul_nt(nn::unfold_time(x, 5, 2), conv1_), conv1_b_));
    x = nn::gelu(nn::add_row_vector(nn::matmul_nt(nn::unfold_time(x, 3, 2), conv2_), conv2_b_));
    auto p = nn::gelu(nn::add_row_vector(nn::matmul_nt(x, proj1_), proj1_b_));
    p = nn::add_row_vector(nn::matmul_nt(p, proj2_), proj2_b_);  // [T', d]
    const int frames = p.dim(0);
    auto scores = nn::reshape(nn::matmul(p, query_), {1, frames});
    auto att = nn::softmax_rows(nn::mul_scalar(scores, 1.0 / std::sqrt(cfg_.text_width)));
    // Normalised to the scale of the frozen word embeddings.
    return nn::layer_norm_rows(nn::matmul(att, p));
  }

  nn::ParamStore& backbone() { return backbone_; }
  nn::ParamStore& projection() { return projection_; }
  nn::ParamStore& pool() { return pool_; }
  const nn::ParamStore& backbone() const { return backbone_; }
  const nn::ParamStore& projection() const { return projection_; }
  const nn::ParamStore& pool() const { return pool_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore backbone_, projection_, pool_;
  Tensor conv1_, conv1_b_, conv2_, conv2_b_, proj1_, proj1_b_, proj2_, proj2_b_, query_;
};

}  // namespace colseg::model
