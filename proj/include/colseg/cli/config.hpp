#pragma once

// Run configuration: one JSON document whose schema is the default document itself. A file
// and then dotted "section.key=value" overrides are merged onto the defaults; unknown keys and
// type changes are rejected. The config hash covers everything that can change results.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/hash.hpp"
#include "colseg/data/curation.hpp"
#include "colseg/data/sampling.hpp"
#include "colseg/data/soundboard.hpp"
#include "colseg/model/bundle.hpp"
#include "colseg/model/trainer.hpp"
#include "colseg/verify/pipeline.hpp"

#ifndef COLSEG_REVISION
#define COLSEG_REVISION "unknown"
#endif

namespace colseg::cli {

using ojson = nlohmann::ordered_json;

// Bad configuration or command-line usage (exit code 2).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

inline const char* revision() { return COLSEG_REVISION; }

inline ojson default_config_json() {
  const model::ModelConfig m;
  const model::TrainConfig t;
  const data::SoundboardConfig s;
  const data::CurationConfig c;
  const verify::PipelineOptions p;
  return {
      {"workers", 1},
      {"model",
       {{"encoder", "tiny"},
        {"pretrained_path", ""},
        {"image_size", m.image_size},
        {"patch", m.patch},
        {"pixel_pool", m.pixel_pool},
        {"colour_centres", m.colour_centres},
        {"colour_sigma", m.colour_sigma},
        {"embed_dim", m.embed_dim},
        {"text_width", m.text_width},
        {"audio_width", m.audio_width},
        {"decoder_scale", m.decoder_scale},
        {"decoder_threshold", m.decoder_threshold},
        {"frozen_seed", m.frozen_seed},
        {"audio_seed", m.audio_seed},
        {"sample_rate", m.spectrogram.sample_rate},
        {"n_mels", m.spectrogram.n_mels},
        {"freeze_backbone", false},
        {"freeze_projection", false},
        {"freeze_pool", false}}},
      {"train",
       {{"steps", t.steps},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"audio_seconds", t.audio_seconds},
        {"seed", t.seed},
        {"checkpoint_every", t.checkpoint_every},
        {"lambda_i", t.weights.lambda_i},
        {"lambda_f", t.weights.lambda_f},
        {"lambda_r", t.weights.lambda_r},
        {"p_plus", t.weights.p_plus},
        {"tau", t.weights.tau},
        {"tau_min", t.weights.tau_min},
        {"tau_max", t.weights.tau_max},
        {"gumbel_temperature", t.weights.gumbel_temperature},
        {"sample_mode", "peak"}}},
      {"verify",
       {{"alpha", p.verify.alpha},
        {"beta", p.verify.beta},
        {"crop_frac", p.crop_frac},
        {"mask_threshold", p.mask_threshold}}},
      {"adapters", {{"detector", "oracle"}, {"segmenter", "oracle"}}},
      {"eval", {{"per_sample_first", false}, {"min_audio_seconds", 2.0}, {"random_seed", 12345}}},
      {"curation",
       {{"classes_file", "config/collision_classes.json"},
        {"clip_mode", "sound_intervals"},
        {"excluded_scenarios", c.excluded_scenarios},
        {"min_mean_amplitude", c.min_mean_amplitude},
        {"narration_clip_len", c.narration_clip_len},
        {"peak_window_min", c.peak_window_min},
        {"peak_window_max", c.peak_window_max},
        {"fps", 30.0}}},
      {"soundboard",
       {{"seed", 1},
        {"materials", s.materials},
        {"image_size", s.image_size},
        {"train_scenes", s.train_scenes},
        {"test_scenes", s.test_scenes},
        {"distractors", s.distractors},
        {"single_object_rate", s.single_object_rate},
        {"hand_hand_rate", s.hand_hand_rate},
        {"sample_rate", s.sample_rate},
        {"min_duration", s.min_duration},
        {"max_duration", s.max_duration},
        {"min_radius", s.min_radius},
        {"max_radius", s.max_radius}}},
  };
}

namespace detail {

inline bool same_kind(const ojson& a, const ojson& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

// Merges src onto dst; every key of src must exist in dst with a compatible type.
inline void merge_strict(ojson& dst, const ojson& src, const std::string& where) {
  if (!src.is_object()) throw ConfigError("config" + where + ": expected an object");
  for (const auto& [k, v] : src.items()) {
    const std::string path = where + "." + k;
    if (!dst.contains(k)) throw ConfigError("unknown config key '" + path.substr(1) + "'");
    auto& d = dst[k];
    if (d.is_object()) {
      merge_strict(d, v, path);
    } else {
      if (!same_kind(d, v))
        throw ConfigError("config key '" + path.substr(1) + "': expected " + d.type_name() + ", got " + v.type_name());
      d = d.is_number_float() ? ojson(v.get<double>()) : v;
    }
  }
}

}  // namespace detail

struct RunConfig {
  ojson doc = default_config_json();

  // Typed views.
  int workers() const { return doc["workers"].get<int>(); }
  model::ModelConfig model() const {
    const auto& j = doc["model"];
    model::ModelConfig m;
    m.image_size = j["image_size"].get<int>();
    m.patch = j["patch"].get<int>();
    m.pixel_pool = j["pixel_pool"].get<int>();
    m.colour_centres = j["colour_centres"].get<int>();
    m.colour_sigma = j["colour_sigma"].get<double>();
    m.embed_dim = j["embed_dim"].get<int>();
    m.text_width = j["text_width"].get<int>();
    m.audio_width = j["audio_width"].get<int>();
    m.decoder_scale = j["decoder_scale"].get<double>();
    m.decoder_threshold = j["decoder_threshold"].get<double>();
    m.frozen_seed = j["frozen_seed"].get<std::uint64_t>();
    m.audio_seed = j["audio_seed"].get<std::uint64_t>();
    m.spectrogram.sample_rate = j["sample_rate"].get<double>();
    m.spectrogram.n_mels = j["n_mels"].get<int>();
    m.spectrogram.f_max = m.spectrogram.sample_rate / 2;
    return m;
  }
  model::FreezeFlags freeze() const {
    const auto& j = doc["model"];
    return {j["freeze_backbone"].get<bool>(), j["freeze_projection"].get<bool>(), j["freeze_pool"].get<bool>()};
  }
  model::TrainConfig train() const {
    const auto& j = doc["train"];
    model::TrainConfig t;
    t.steps = j["steps"].get<int>();
    t.batch_size = j["batch_size"].get<int>();
    t.learning_rate = j["learning_rate"].get<double>();
    t.audio_seconds = j["audio_seconds"].get<double>();
    t.seed = j["seed"].get<std::uint64_t>();
    t.checkpoint_every = j["checkpoint_every"].get<int>();
    t.weights.lambda_i = j["lambda_i"].get<double>();
    t.weights.lambda_f = j["lambda_f"].get<double>();
    t.weights.lambda_r = j["lambda_r"].get<double>();
    t.weights.p_plus = j["p_plus"].get<double>();
    t.weights.tau = j["tau"].get<double>();
    t.weights.tau_min = j["tau_min"].get<double>();
    t.weights.tau_max = j["tau_max"].get<double>();
    t.weights.gumbel_temperature = j["gumbel_temperature"].get<double>();
    return t;
  }
  data::SampleMode sample_mode() const {
    return doc["train"]["sample_mode"] == "peak" ? data::SampleMode::Peak : data::SampleMode::Default;
  }
  verify::PipelineOptions pipeline() const {
    const auto& j = doc["verify"];
    verify::PipelineOptions p;
    p.verify.alpha = j["alpha"].get<double>();
    p.verify.beta = j["beta"].get<double>();
    p.crop_frac = j["crop_frac"].get<double>();
    p.mask_threshold = j["mask_threshold"].get<double>();
    return p;
  }
  std::string detector() const { return doc["adapters"]["detector"].get<std::string>(); }
  std::string segmenter() const { return doc["adapters"]["segmenter"].get<std::string>(); }
  bool per_sample_first() const { return doc["eval"]["per_sample_first"].get<bool>(); }
  double min_audio_seconds() const { return doc["eval"]["min_audio_seconds"].get<double>(); }
  std::uint64_t random_seed() const { return doc["eval"]["random_seed"].get<std::uint64_t>(); }
  data::CurationConfig curation(bool load_classes = true) const {
    const auto& j = doc["curation"];
    data::CurationConfig c;
    if (load_classes) c.collision_classes = data::load_collision_classes(j["classes_file"].get<std::string>());
    c.excluded_scenarios = j["excluded_scenarios"].get<std::set<std::string>>();
    c.min_mean_amplitude = j["min_mean_amplitude"].get<double>();
    c.narration_clip_len = j["narration_clip_len"].get<double>();
    c.peak_window_min = j["peak_window_min"].get<double>();
    c.peak_window_max = j["peak_window_max"].get<double>();
    c.train_audio_len = doc["train"]["audio_seconds"].get<double>();
    return c;
  }
  data::ClipMode clip_mode() const {
    return doc["curation"]["clip_mode"] == "narration_centers" ? data::ClipMode::NarrationCenters
                                                               : data::ClipMode::SoundIntervals;
  }
  double fps() const { return doc["curation"]["fps"].get<double>(); }
  data::SoundboardConfig soundboard() const {
    const auto& j = doc["soundboard"];
    data::SoundboardConfig s;
    s.materials = j["materials"].get<int>();
    s.image_size = j["image_size"].get<int>();
    s.train_scenes = j["train_scenes"].get<int>();
    s.test_scenes = j["test_scenes"].get<int>();
    s.distractors = j["distractors"].get<int>();
    s.single_object_rate = j["single_object_rate"].get<double>();
    s.hand_hand_rate = j["hand_hand_rate"].get<double>();
    s.sample_rate = j["sample_rate"].get<double>();
    s.min_duration = j["min_duration"].get<double>();
    s.max_duration = j["max_duration"].get<double>();
    s.min_radius = j["min_radius"].get<int>();
    s.max_radius = j["max_radius"].get<int>();
    return s;
  }
  std::uint64_t soundboard_seed() const { return doc["soundboard"]["seed"].get<std::uint64_t>(); }

  // Canonical form without the worker count, which never changes results.
  std::string hash() const {
    ojson j = doc;
    j.erase("workers");
    return fnv1a_hex(j.dump());
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
    if (workers() < 1) fail("workers must be at least 1");
    const auto enc = doc["model"]["encoder"].get<std::string>();
    if (enc != "tiny" && enc != "pretrained") fail("model.encoder must be tiny or pretrained");
    if (enc == "pretrained" && doc["model"]["pretrained_path"].get<std::string>().empty())
      fail("model.pretrained_path is required for the pretrained encoder");
    const auto m = model();
    if (m.image_size <= 0 || m.patch <= 0 || m.image_size % m.patch != 0)
      fail("model.image_size must be a positive multiple of model.patch");
    if (m.embed_dim <= 0 || m.text_width <= 0 || m.audio_width <= 0) fail("model widths must be positive");
    if (!(m.spectrogram.sample_rate > 0) || m.spectrogram.n_mels <= 0) fail("audio settings must be positive");
    const auto t = train();
    if (t.steps < 0) fail("train.steps must be non-negative");
    if (t.batch_size < 2) fail("train.batch_size must be at least 2");
    if (!(t.learning_rate > 0)) fail("train.learning_rate must be positive");
    if (!(t.audio_seconds > 0)) fail("train.audio_seconds must be positive");
    if (t.checkpoint_every < 0) fail("train.checkpoint_every must be non-negative");
    const auto mode = doc["train"]["sample_mode"].get<std::string>();
    if (mode != "peak" && mode != "default") fail("train.sample_mode must be peak or default");
    for (const char* a : {"detector", "segmenter"}) {
      const auto v = doc["adapters"][a].get<std::string>();
      if (v != "oracle" && v != "none") fail(std::string("adapters.") + a + " must be oracle or none");
    }
    const auto clip = doc["curation"]["clip_mode"].get<std::string>();
    if (clip != "sound_intervals" && clip != "narration_centers")
      fail("curation.clip_mode must be sound_intervals or narration_centers");
    if (!(fps() > 0)) fail("curation.fps must be positive");
    if (!(min_audio_seconds() > 0)) fail("eval.min_audio_seconds must be positive");
    const auto s = soundboard();
    if (s.materials < 2 || s.train_scenes < 0 || s.test_scenes < 0 || s.distractors < 0)
      fail("soundboard counts out of range");
    if (!(s.single_object_rate >= 0 && s.single_object_rate <= 1 && s.hand_hand_rate >= 0 && s.hand_hand_rate <= 1))
      fail("soundboard rates must lie in [0,1]");
    try {
      t.weights.validate();
      pipeline().validate();
      if (!(pipeline().verify.alpha >= 0 && pipeline().verify.alpha <= 1)) fail("verify.alpha must lie in [0,1]");
      if (!(pipeline().verify.beta >= 0)) fail("verify.beta must be non-negative");
      curation(false).validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  }

  // "section.key=value"; the value is parsed as JSON, falling back to a plain string.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    ojson value = ojson::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    std::vector<std::string> parts;
    for (std::size_t b = 0;;) {
      const auto dot = key.find('.', b);
      parts.push_back(key.substr(b, dot - b));
      if (dot == std::string::npos) break;
      b = dot + 1;
    }
    ojson patch = value;
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = ojson{{*it, patch}};
    detail::merge_strict(doc, patch, "");
  }
};

inline RunConfig config_from_json(const ojson& file_doc) {
  RunConfig c;
  detail::merge_strict(c.doc, file_doc, "");
  return c;
}

// Defaults, then the file (if any), then overrides; validated.
inline RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open config " + file.string());
    ojson j;
    try {
      j = ojson::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + file.string() + ": " + e.what());
    }
    c = config_from_json(j);
  }
  for (const auto& o : overrides) c.apply_override(o);
  c.validate();
  return c;
}

// Model bundle for a config: tiny encoders, or pretrained frozen weights from a file.
inline std::unique_ptr<model::EncoderBundle> make_bundle(const RunConfig& c) {
  auto b = std::make_unique<model::EncoderBundle>(c.model());
  if (c.doc["model"]["encoder"] == "pretrained") b->load_pretrained(c.doc["model"]["pretrained_path"].get<std::string>());
  b->set_freeze(c.freeze());
  return b;
}

// Root for command outputs when no --out is given: $COLSEG_CACHE_DIR, else ~/.cache/colseg.
inline std::filesystem::path cache_dir() {
  if (const char* d = std::getenv("COLSEG_CACHE_DIR"); d && *d) return d;
  if (const char* h = std::getenv("HOME"); h && *h) return std::filesystem::path(h) / ".cache" / "colseg";
  return std::filesystem::temp_directory_path() / "colseg";
}

}  // namespace colseg::cli
