#pragma once

#include <filesystem>
#include <optional>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/hash.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/media.hpp"
#include "colseg/model/encoders.hpp"
#include "colseg/model/spectrogram.hpp"

namespace colseg::model {

// Which audio-branch components receive gradients.
struct FreezeFlags {
  bool backbone = false;
  bool projection = false;
  bool pool = false;
};

// Frozen visual/text encoders and decoder plus the trainable audio branch. The frozen part is
// either the built-in tiny encoders ("tiny") or weights loaded from a file ("pretrained").
class EncoderBundle {
 public:
  explicit EncoderBundle(ModelConfig cfg = {})
      : cfg_(cfg),
        frozen_rng_(cfg.frozen_seed),
        visual_(cfg_, frozen_rng_),
        text_(cfg_, frozen_rng_),
        decoder_(cfg_),
        audio_rng_(cfg.audio_seed),
        audio_(cfg_, audio_rng_),
        spectrogram_(cfg_.spectrogram) {
    if (cfg_.embed_dim <= 0 || cfg_.text_width <= 0) throw InvalidArgument("model widths must be positive");
    set_freeze({});
  }

  EncoderBundle(const EncoderBundle&) = delete;
  EncoderBundle& operator=(const EncoderBundle&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const VisualEncoder& visual() const { return visual_; }
  const TextEncoder& text() const { return text_; }
  const MaskDecoder& decoder() const { return decoder_; }
  AudioEncoder& audio() { return audio_; }
  const AudioEncoder& audio() const { return audio_; }
  const SpectrogramExtractor& spectrogram_extractor() const { return spectrogram_; }
  const std::string& frozen_identifier() const { return frozen_id_; }

  void set_freeze(const FreezeFlags& f) {
    freeze_ = f;
    audio_.backbone().set_trainable(!f.backbone);
    audio_.projection().set_trainable(!f.projection);
    audio_.pool().set_trainable(!f.pool);
  }
  const FreezeFlags& freeze() const { return freeze_; }

  std::vector<Tensor> trainable_parameters() const {
    std::vector<Tensor> out;
    for (const auto* store : {&audio_.backbone(), &audio_.projection(), &audio_.pool()})
      if (store->trainable())
        for (const auto& p : store->params()) out.push_back(p.tensor);
    return out;
  }

  // Content hashes of the frozen components, keyed by component name.
  nlohmann::json frozen_hashes() const {
    return {{"visual_encoder", hex64(visual_.params().content_hash())},
            {"text_encoder", hex64(text_.params().content_hash())},
            {"decoder", hex64(decoder_.params().content_hash())}};
  }

  nlohmann::json audio_weights() const {
    return {{"backbone", audio_.backbone().to_json()},
            {"projection", audio_.projection().to_json()},
            {"pool", audio_.pool().to_json()}};
  }
  void load_audio_weights(const nlohmann::json& j) {
    audio_.backbone().load_json(j.at("backbone"));
    audio_.projection().load_json(j.at("projection"));
    audio_.pool().load_json(j.at("pool"));
  }

  // Replaces the projection with freshly seeded random weights (the Random baseline).
  void randomize_projection(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : audio_.projection().params()) {
      auto v = p.tensor.mutable_data();
      const double a = p.tensor.rank() == 2 ? std::sqrt(6.0 / (p.tensor.dim(0) + p.tensor.dim(1))) : 0.0;
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& x : v) x = a > 0 ? dist(rng) : 0.0;
    }
  }

  // Loads frozen encoder weights converted from an external checkpoint. The file is JSON with
  // "visual_encoder", "text_encoder" and "decoder" objects in the parameter-store layout.
  void load_pretrained(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open pretrained weights " + path.string());
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("pretrained weights " + path.string() + ": " + e.what());
    }
    visual_.params().load_json(j.at("visual_encoder"));
    text_.params().load_json(j.at("text_encoder"));
    decoder_.params().load_json(j.at("decoder"));
    text_.cache_prompt();
    frozen_id_ = "pretrained:" + path.filename().string();
  }
  nlohmann::json frozen_weights() const {
    return {{"visual_encoder", visual_.params().to_json()},
            {"text_encoder", text_.params().to_json()},
            {"decoder", decoder_.params().to_json()}};
  }

  Spectrogram spectrogram(const AudioClip& clip) const { return spectrogram_.compute(clip); }

  // Unit audio embeddings [B, D] for a batch of spectrograms.
  Tensor encode_audio(const std::vector<Spectrogram>& specs) const {
    std::vector<Tensor> tokens;
    tokens.reserve(specs.size());
    for (const auto& s : specs) tokens.push_back(audio_.token(spectrogram_to_tensor(s)));
    auto a = text_.encode(nn::concat_rows(tokens));
    for (double v : a.data())
      if (!std::isfinite(v)) throw Error("non-finite audio embedding");
    return a;
  }
  Tensor encode_audio(const Spectrogram& s) const { return encode_audio(std::vector<Spectrogram>{s}); }

  // Images of another size are bilinearly resized to the model resolution.
  VisualFeatures encode_image(const Image& img) const {
    return visual_.encode(image_to_tensor(to_model_size(img)));
  }

  Image to_model_size(const Image& img) const {
    if (img.height() == cfg_.image_size && img.width() == cfg_.image_size) return img;
    return resize_bilinear(img, cfg_.image_size, cfg_.image_size);
  }

  // Soft mask at model resolution for one embedding row [1, D]; `ref` standardises the map with
  // the statistics of another view instead of its own.
  SoftMask decode(const VisualFeatures& v, const Tensor& audio_embedding,
                  const std::optional<MaskDecoder::MapStats>& ref = std::nullopt) const {
    if (audio_embedding.rank() != 2 || audio_embedding.dim(0) != 1)
      throw ShapeMismatch("decode expects one embedding row");
    nn::NoGradGuard guard;
    auto grid = ref ? decoder_.grid_logits(v, audio_embedding, *ref) : decoder_.grid_logits(v, audio_embedding);
    auto logits = decoder_.upsample(grid, v.grid_h, v.grid_w);
    auto probs = nn::sigmoid(logits);
    SoftMask m(cfg_.image_size, cfg_.image_size);
    auto out = m.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(probs[i]);
    return m;
  }

  SoftMask infer(const Image& img, const Tensor& audio_embedding) const {
    return decode(encode_image(img), audio_embedding);
  }

  // Two passes: whole image, then the square crop around the first-pass peak resized to model
  // resolution and decoded against the whole-image similarity statistics; the second-pass mask
  // is pasted back into a zero canvas. Output is at the resolution of the given image.
  SoftMask infer_refined(const Image& img, const Tensor& audio_embedding, double crop_frac) const {
    const Image full = to_model_size(img);
    const VisualFeatures v = encode_image(full);
    const SoftMask first = decode(v, audio_embedding);
    const BBox box = peak_crop_box(first, crop_frac);
    const SoftMask second =
        decode(encode_image(crop(full, box)), audio_embedding, decoder_.map_stats(v, audio_embedding));
    const SoftMask back = resize_bilinear(second, box.height(), box.width());
    SoftMask canvas(cfg_.image_size, cfg_.image_size, 0.0f);
    for (int r = 0; r < box.height(); ++r)
      for (int c = 0; c < box.width(); ++c) canvas(box.y_min + r, box.x_min + c) = back(r, c);
    if (img.height() == cfg_.image_size && img.width() == cfg_.image_size) return canvas;
    return resize_bilinear(canvas, img.height(), img.width());
  }

 private:
  ModelConfig cfg_;
  std::mt19937_64 frozen_rng_;
  VisualEncoder visual_;
  TextEncoder text_;
  MaskDecoder decoder_;
  std::mt19937_64 audio_rng_;
  AudioEncoder audio_;
  SpectrogramExtractor spectrogram_;
  FreezeFlags freeze_;
  std::string frozen_id_ = "tiny";
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"patch", c.patch},
          {"pixel_pool", c.pixel_pool},
          {"colour_centres", c.colour_centres},
          {"colour_sigma", c.colour_sigma},
          {"embed_dim", c.embed_dim},
          {"text_width", c.text_width},
          {"audio_width", c.audio_width},
          {"decoder_scale", c.decoder_scale},
          {"decoder_threshold", c.decoder_threshold},
          {"frozen_seed", c.frozen_seed},
          {"audio_seed", c.audio_seed}};
}

}  // namespace colseg::model
