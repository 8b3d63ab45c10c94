#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/media.hpp"
#include "colseg/losses/losses.hpp"
#include "colseg/model/bundle.hpp"
#include "colseg/nn/params.hpp"

namespace colseg::model {

struct TrainingPair {
  Image image;
  AudioClip audio;
};

// Source of weakly-labelled (frame, collision audio) pairs. Sources whose pair for an index does
// not depend on the rng may be cached by the trainer.
class TrainingSource {
 public:
  virtual ~TrainingSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingPair sample(std::size_t index, std::mt19937_64& rng) const = 0;
  virtual bool deterministic() const { return false; }
};

struct TrainConfig {
  int steps = 50000;
  int batch_size = 32;
  double learning_rate = 1e-6;
  double audio_seconds = 2.0;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  int checkpoint_every = 0;  // 0: only at the end
};

// Everything one loss evaluation needs; images at model resolution.
struct Batch {
  std::vector<Tensor> images;          // [3, S, S] each
  std::vector<Tensor> visual_grids;    // [P, D] each, frozen features of the unmasked image
  std::vector<Spectrogram> spectrograms;
  int grid_h = 0, grid_w = 0;
};

inline std::vector<double> logistic_noise(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  std::vector<double> out(n);
  for (auto& v : out) {
    const double x = u(rng);
    v = std::log(x) - std::log1p(-x);
  }
  return out;
}

// Loss over all B x B pairings of a batch. noise: logistic noise for the Gumbel binarisation,
// B * S * S values; hard = false uses the relaxed sample (for finite-difference checks).
inline losses::LossBreakdown batch_loss(const EncoderBundle& bundle, const Batch& batch,
                                        const losses::LossWeights& w, const Tensor& tau,
                                        std::span<const double> noise, bool hard = true,
                                        int* encoder_passes = nullptr) {
  const int b = static_cast<int>(batch.images.size());
  if (b < 2) throw InvalidArgument("training batch needs at least 2 samples");
  const auto audio = bundle.encode_audio(batch.spectrograms);
  const auto& dec = bundle.decoder();
  std::vector<Tensor> grid_masks;
  std::vector<Tensor> diag_rows;
  grid_masks.reserve(b);
  diag_rows.reserve(b);
  for (int i = 0; i < b; ++i) {
    VisualFeatures v;
    v.grid = batch.visual_grids[i];
    v.grid_h = batch.grid_h;
    v.grid_w = batch.grid_w;
    auto logits = dec.grid_logits(v, audio);  // [B, P]
    grid_masks.push_back(nn::sigmoid(logits));
    auto full = dec.upsample(nn::slice_rows(logits, i, 1), v.grid_h, v.grid_w);
    diag_rows.push_back(nn::reshape(full, {1, static_cast<int>(full.numel())}));
  }
  auto diag_logits = nn::concat_rows(diag_rows);
  auto diag_masks = nn::sigmoid(diag_logits);
  Tensor image_sim = Tensor::zeros({b, b});
  if (w.lambda_i != 0.0)
    image_sim = losses::image_similarity(bundle.visual(), batch.images, diag_logits, noise, audio,
                                         w.gumbel_temperature, hard, encoder_passes);
  auto feature_sim = losses::feature_similarity(grid_masks, batch.visual_grids, audio);
  return losses::total_loss(w, image_sim, feature_sim, diag_masks, tau);
}

struct Checkpoint {
  static constexpr const char* kFormat = "colseg-checkpoint/1";
  nlohmann::json run_config;
  std::string config_hash;
  std::string revision;
  nlohmann::json model_config;
  std::string frozen_identifier;
  nlohmann::json frozen_hashes;
  nlohmann::json audio_weights;
  double tau = 0.07;
  nlohmann::json optimizer;
  std::string rng_state;
  long step = 0;

  nlohmann::json to_json() const {
    return {{"format", kFormat},
            {"config_hash", config_hash},
            {"revision", revision},
            {"step", step},
            {"run_config", run_config},
            {"model_config", model_config},
            {"frozen", {{"identifier", frozen_identifier}, {"hashes", frozen_hashes}}},
            {"audio_weights", audio_weights},
            {"tau", tau},
            {"optimizer", optimizer},
            {"rng_state", rng_state}};
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kFormat) throw FormatError("not a colseg checkpoint");
    Checkpoint c;
    c.config_hash = j.at("config_hash").get<std::string>();
    c.revision = j.at("revision").get<std::string>();
    c.step = j.at("step").get<long>();
    c.run_config = j.at("run_config");
    c.model_config = j.at("model_config");
    c.frozen_identifier = j.at("frozen").at("identifier").get<std::string>();
    c.frozen_hashes = j.at("frozen").at("hashes");
    c.audio_weights = j.at("audio_weights");
    c.tau = j.at("tau").get<double>();
    c.optimizer = j.value("optimizer", nlohmann::json());
    c.rng_state = j.value("rng_state", "");
    return c;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw Error("cannot write checkpoint " + path.string());
      os << to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("checkpoint " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  // Refuses to proceed when the checkpoint was trained against other frozen weights.
  void check_frozen(const EncoderBundle& bundle) const {
    const auto actual = bundle.frozen_hashes();
    if (actual != frozen_hashes)
      throw Error("frozen-encoder hash mismatch: checkpoint " + frozen_hashes.dump() + " vs model " +
                  actual.dump());
  }

  void apply(EncoderBundle& bundle) const {
    check_frozen(bundle);
    bundle.load_audio_weights(audio_weights);
  }
};

class Trainer {
 public:
  Trainer(EncoderBundle& bundle, TrainConfig cfg, const TrainingSource& source)
      : bundle_(bundle),
        cfg_(cfg),
        source_(source),
        tau_(cfg.weights.tau, cfg.weights.tau_min, cfg.weights.tau_max),
        rng_(cfg.seed) {
    cfg_.weights.validate();
    if (cfg_.batch_size < 2) throw InvalidArgument("batch_size must be at least 2");
    if (source_.size() < static_cast<std::size_t>(cfg_.batch_size))
      throw InvalidArgument("training source smaller than one batch");
    if (!(cfg_.learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
    auto params = bundle_.trainable_parameters();
    params.push_back(tau_.tensor());
    adam_ = nn::Adam(params, {cfg_.learning_rate});
  }

  long step() const { return step_; }

  double tau() const { return tau_.value(); }

  // Identity stamped into checkpoints.
  void set_run_identity(nlohmann::json run_config, std::string config_hash, std::string revision) {
    run_config_ = std::move(run_config);
    config_hash_ = std::move(config_hash);
    revision_ = std::move(revision);
  }

  Batch make_batch(const std::vector<std::size_t>& indices, std::mt19937_64& rng) {
    Batch b;
    const int g = bundle_.config().grid();
    b.grid_h = b.grid_w = g;
    const auto n_audio = static_cast<std::size_t>(
        std::lround(cfg_.audio_seconds * bundle_.config().spectrogram.sample_rate));
    for (auto idx : indices) {
      auto pair = source_.sample(idx, rng);
      const Image img = bundle_.to_model_size(pair.image);
      b.images.push_back(image_to_tensor(img));
      if (source_.deterministic() && grid_cache_.count(idx)) {
        b.visual_grids.push_back(grid_cache_.at(idx));
        b.spectrograms.push_back(spec_cache_.at(idx));
        continue;
      }
      Tensor grid;
      {
        nn::NoGradGuard guard;
        grid = bundle_.visual().encode(b.images.back()).grid.detach();
      }
      const auto clip = fit_length_centered(
          resample_linear(pair.audio, bundle_.config().spectrogram.sample_rate), n_audio);
      auto spec = bundle_.spectrogram(clip);
      if (source_.deterministic()) {
        grid_cache_.emplace(idx, grid);
        spec_cache_.emplace(idx, spec);
      }
      b.visual_grids.push_back(grid);
      b.spectrograms.push_back(std::move(spec));
    }
    return b;
  }

  // One optimisation step; returns the loss breakdown at the pre-update weights.
  losses::LossBreakdown train_step() {
    std::vector<std::size_t> all(source_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    // Partial Fisher-Yates: B distinct indices.
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (int k = 0; k < cfg_.batch_size; ++k) {
      std::uniform_int_distribution<std::size_t> d(k, all.size() - 1);
      std::swap(all[k], all[d(rng_)]);
      idx[k] = all[k];
    }
    auto batch = make_batch(idx, rng_);
    const auto s = bundle_.config().image_size;
    const auto noise = logistic_noise(static_cast<std::size_t>(cfg_.batch_size) * s * s, rng_);
    adam_.zero_grad();
    auto loss = batch_loss(bundle_, batch, cfg_.weights, tau_.tensor(), noise, true);
    loss.total.backward();
    adam_.step();
    tau_.clamp();
    ++step_;
    return loss;
  }

  // Runs until cfg.steps, appending one JSON line per step to the log (if given).
  void run(const std::filesystem::path& log_path = {}, const std::filesystem::path& ckpt_path = {},
           const std::function<void(long, const losses::LossBreakdown&)>& on_step = {}) {
    std::ofstream log;
    if (!log_path.empty()) {
      if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
      log.open(log_path, std::ios::app);
      if (!log) throw Error("cannot open training log " + log_path.string());
    }
    while (step_ < cfg_.steps) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto loss = train_step();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (log) {
        auto j = loss.to_json();
        j["step"] = step_;
        j["seconds"] = secs;
        log << j.dump() << '\n';
        log.flush();
      }
      if (on_step) on_step(step_, loss);
      if (!ckpt_path.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)
        checkpoint().save(ckpt_path);
    }
    if (!ckpt_path.empty()) checkpoint().save(ckpt_path);
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.run_config = run_config_;
    c.config_hash = config_hash_;
    c.revision = revision_;
    c.model_config = model_config_to_json(bundle_.config());
    c.frozen_identifier = bundle_.frozen_identifier();
    c.frozen_hashes = bundle_.frozen_hashes();
    c.audio_weights = bundle_.audio_weights();
    c.tau = tau_.value();
    c.optimizer = adam_.state();
    std::ostringstream rs;
    rs << rng_;
    c.rng_state = rs.str();
    c.step = step_;
    return c;
  }

  void resume(const Checkpoint& c) {
    c.apply(bundle_);
    tau_.set(c.tau);
    if (!c.optimizer.is_null()) adam_.load_state(c.optimizer);
    if (!c.rng_state.empty()) {
      std::istringstream rs(c.rng_state);
      rs >> rng_;
    }
    step_ = c.step;
  }

 private:
  EncoderBundle& bundle_;
  TrainConfig cfg_;
  const TrainingSource& source_;
  losses::Temperature tau_;
  nn::Adam adam_;
  std::mt19937_64 rng_;
  long step_ = 0;
  std::map<std::size_t, Tensor> grid_cache_;
  std::map<std::size_t, Spectrogram> spec_cache_;
  nlohmann::json run_config_ = nlohmann::json::object();
  std::string config_hash_;
  std::string revision_;
};

}  // namespace colseg::model
