#pragma once

// Command implementations behind the colseg tool. Each returns the process exit code; usage and
// configuration problems throw ConfigError, which run_guarded maps to exit code 2.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/cli/config.hpp"
#include "colseg/core/io.hpp"
#include "colseg/core/log.hpp"
#include "colseg/core/rle.hpp"
#include "colseg/data/curation.hpp"
#include "colseg/data/media_store.hpp"
#include "colseg/data/records.hpp"
#include "colseg/data/sampling.hpp"
#include "colseg/data/soundboard.hpp"
#include "colseg/data/soundboard_io.hpp"
#include "colseg/data/stats.hpp"
#include "colseg/eval/methods.hpp"
#include "colseg/eval/runner.hpp"
#include "colseg/model/trainer.hpp"
#include "colseg/verify/adapters.hpp"
#include "colseg/verify/pipeline.hpp"

namespace colseg::cli {

namespace fs = std::filesystem;

inline void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is required");
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
}

inline fs::path output_dir(const fs::path& out, const std::string& command, const RunConfig& cfg) {
  return out.empty() ? cache_dir() / (command + "-" + cfg.hash()) : out;
}

// Identity block embedded in results files.
inline ojson stamp(const RunConfig& cfg) {
  return {{"config_hash", cfg.hash()}, {"revision", revision()}, {"config", cfg.doc}};
}

inline void write_json(const fs::path& path, const ojson& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline verify::PipelineOptions variant_options(const std::string& name, const verify::PipelineOptions& base) {
  try {
    return verify::pipeline_variant(name, base);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------- soundboard

struct SoundboardOptions {
  fs::path out;
  bool include_train = true;
};

inline int cmd_soundboard(const RunConfig& cfg, const SoundboardOptions& o) {
  const data::Soundboard board(cfg.soundboard(), cfg.soundboard_seed());
  const auto dir = output_dir(o.out, "soundboard", cfg);
  const auto m = data::export_soundboard(board, dir, {cfg.hash(), revision(), "soundboard"}, o.include_train);
  std::printf("wrote %zu records to %s\n", m.records.size(), (dir / "manifest.jsonl").string().c_str());
  return 0;
}

// ---------------------------------------------------------------- curate

struct CurateOptions {
  fs::path events;  // NDJSON annotation events
  fs::path media;
  fs::path labels;  // oracle classifier labels {"<record id>": "<class>"}
  fs::path out;
};

inline int cmd_curate(const RunConfig& cfg, const CurateOptions& o) {
  require_file(o.events, "--events");
  require_file(o.labels, "--labels");
  if (o.media.empty()) throw ConfigError("--media is required");
  const auto classes = cfg.doc["curation"]["classes_file"].get<std::string>();
  require_file(classes, "curation.classes_file");
  const auto ccfg = cfg.curation();
  const auto events = data::read_events(o.events);
  const auto extracted = data::extract_clips(events, ccfg, cfg.clip_mode());
  const data::DirectoryMediaStore media(o.media, cfg.fps());
  const auto classifier = data::OracleClassifier::from_file(o.labels);
  auto filtered = data::filter_collisions(extracted.records, classifier, media, ccfg, cfg.workers());
  for (auto& r : filtered.kept) r.split = "train";
  std::vector<data::DropEntry> dropped = extracted.dropped;
  dropped.insert(dropped.end(), filtered.dropped.begin(), filtered.dropped.end());
  const auto dir = output_dir(o.out, "curate", cfg);
  data::write_manifest(dir / "manifest.jsonl", {{cfg.hash(), revision(), "curate"}, filtered.kept});
  data::write_drop_report(dir / "drops.csv", dropped);
  std::printf("events %zu, kept %zu, dropped %zu -> %s\n", events.size(), filtered.kept.size(), dropped.size(),
              dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  fs::path manifest;  // train records; empty with use_soundboard
  fs::path media;
  bool use_soundboard = false;  // train on the in-memory soundboard of the config
  fs::path resume;
  fs::path out;
  bool quiet = false;
};

inline int cmd_train(const RunConfig& cfg, const TrainOptions& o) {
  if (o.use_soundboard == !o.manifest.empty()) throw ConfigError("give exactly one of --manifest or --soundboard");
  auto bundle = make_bundle(cfg);
  std::unique_ptr<data::Soundboard> board;
  std::unique_ptr<data::DirectoryMediaStore> media;
  std::unique_ptr<model::TrainingSource> source;
  if (o.use_soundboard) {
    board = std::make_unique<data::Soundboard>(cfg.soundboard(), cfg.soundboard_seed());
    source = std::make_unique<data::SoundboardSource>(*board);
  } else {
    require_file(o.manifest, "--manifest");
    if (o.media.empty()) throw ConfigError("--media is required with --manifest");
    auto m = data::read_manifest(o.manifest);
    if (!m.meta.config_hash.empty() && m.meta.config_hash != cfg.hash())
      log::warn("manifest config hash " + m.meta.config_hash + " differs from the run config " + cfg.hash());
    media = std::make_unique<data::DirectoryMediaStore>(o.media, cfg.fps());
    source = std::make_unique<data::ManifestSource>(std::move(m.records), *media, cfg.curation(false), cfg.sample_mode());
  }
  if (source->size() == 0) throw ConfigError("no train records");
  model::Trainer trainer(*bundle, cfg.train(), *source);
  trainer.set_run_identity(cfg.doc, cfg.hash(), revision());
  if (!o.resume.empty()) {
    require_file(o.resume, "--resume");
    trainer.resume(model::Checkpoint::load(o.resume));
  }
  const auto dir = output_dir(o.out, "train", cfg);
  fs::create_directories(dir);
  if (o.resume.empty()) fs::remove(dir / "train_log.jsonl");  // a resumed run appends
  const auto ckpt = dir / "checkpoint.json";
  trainer.run(dir / "train_log.jsonl", ckpt, [&](long step, const losses::LossBreakdown& l) {
    if (!o.quiet && (step % 50 == 0 || step == cfg.train().steps))
      std::printf("step %ld loss %.4f (image %.4f feature %.4f area %.4f) tau %.4f\n", step, l.total.item(), l.image,
                  l.feature, l.area, l.tau);
  });
  std::printf("checkpoint %s (step %ld)\n", ckpt.string().c_str(), trainer.step());
  return 0;
}

// Bundle with the audio weights of a checkpoint; the frozen parts must match.
inline std::unique_ptr<model::EncoderBundle> load_model(const RunConfig& cfg, const fs::path& checkpoint,
                                                        model::Checkpoint* out = nullptr) {
  require_file(checkpoint, "--checkpoint");
  auto bundle = make_bundle(cfg);
  const auto c = model::Checkpoint::load(checkpoint);
  c.apply(*bundle);
  if (out) *out = c;
  return bundle;
}

// Adapters selected by the config over an oracle table; "none" disables the stage.
struct Adapters {
  std::shared_ptr<const verify::HandObjectDetector> detector;
  std::shared_ptr<const verify::PromptableSegmenter> segmenter;
};

inline Adapters make_adapters(const RunConfig& cfg, std::shared_ptr<const verify::OracleTable> table) {
  Adapters a;
  if (cfg.detector() == "oracle" && table) a.detector = std::make_shared<verify::OracleDetector>(table);
  if (cfg.segmenter() == "oracle" && table) a.segmenter = std::make_shared<verify::OracleSegmenter>(table);
  return a;
}

// Drops the stages whose adapter is unavailable, with a warning.
inline verify::PipelineOptions fit_to_adapters(verify::PipelineOptions p, const Adapters& a) {
  if (p.use_hoi && (!a.detector || !a.segmenter)) {
    log::warn("no hand-object detector or segmenter: running without hand candidates");
    p.use_hoi = false;
  }
  if (p.refine_av && !a.segmenter) {
    log::warn("no segmenter: audio mask is not refined");
    p.refine_av = false;
  }
  return p;
}

// ---------------------------------------------------------------- infer

struct InferOptions {
  fs::path checkpoint;
  fs::path image;
  fs::path audio;
  std::string variant = "full";  // full | av | no-segmenter | no-crop | no-hoi | right-left
  fs::path manifest;             // oracle adapters: annotations of --sample
  std::string sample;
  fs::path out;
};

inline void write_overlay(const fs::path& path, const Image& img, const std::vector<BinaryMask>& masks) {
  static const float tint[2][3] = {{1.0f, 0.2f, 0.2f}, {0.2f, 1.0f, 0.2f}};
  Image vis = img;
  for (std::size_t k = 0; k < masks.size(); ++k)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (masks[k](y, x))
          for (int ch = 0; ch < 3; ++ch) vis.at(ch, y, x) = 0.5f * vis.at(ch, y, x) + 0.5f * tint[k % 2][ch];
  io::write_image_png(path, vis);
}

inline int cmd_infer(const RunConfig& cfg, const InferOptions& o) {
  require_file(o.image, "--image");
  require_file(o.audio, "--audio");
  auto opts = variant_options(o.variant, cfg.pipeline());
  std::shared_ptr<verify::OracleTable> table;
  if (!o.manifest.empty()) {
    require_file(o.manifest, "--manifest");
    if (o.sample.empty()) throw ConfigError("--sample is required with --manifest");
    for (const auto& r : data::read_manifest(o.manifest).records)
      if (r.id == o.sample) table = std::make_shared<verify::OracleTable>(verify::OracleTable{{r.id, data::oracle_annotation(r)}});
    if (!table) throw ConfigError("sample " + o.sample + " not in manifest");
  }
  const auto adapters = make_adapters(cfg, table);
  opts = fit_to_adapters(opts, adapters);
  auto bundle = load_model(cfg, o.checkpoint);
  const eval::EvalSample s{o.sample, io::read_image_png(o.image), io::read_wav(o.audio), {}};
  nn::NoGradGuard guard;
  const auto pred = eval::model_predictor(*bundle, opts, adapters.detector, adapters.segmenter,
                                          cfg.min_audio_seconds())(s);
  const auto dir = output_dir(o.out, "infer", cfg);
  fs::create_directories(dir);
  ojson masks = ojson::array();
  for (std::size_t k = 0; k < pred.masks.size(); ++k) {
    io::write_mask_png(dir / ("mask_" + std::to_string(k) + ".png"), pred.masks[k]);
    masks.push_back({{"provenance", pred.provenance[k]},
                     {"area", pred.masks[k].area()},
                     {"rle", mask_to_rle(pred.masks[k])}});
  }
  write_overlay(dir / "overlay.png", s.image, pred.masks);
  ojson j = stamp(cfg);
  j["variant"] = o.variant;
  j["height"] = s.image.height();
  j["width"] = s.image.width();
  j["masks"] = masks;
  write_json(dir / "prediction.json", j);
  std::printf("%zu mask(s):", pred.masks.size());
  for (const auto& p : pred.provenance) std::printf(" %s", p.c_str());
  std::printf(" -> %s\n", dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string method = "model";  // model | centre | random | oracle
  fs::path checkpoint;  // required for model
  fs::path manifest;  // test records; empty with use_soundboard
  fs::path media;
  bool use_soundboard = false;
  std::string variant = "full";
  bool ablation = false;  // full, no-segmenter, no-crop, no-hoi in one run
  bool force = false;     // accept inputs stamped with different config hashes
  fs::path out;
};

// The four cumulative ablation variants.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "no-segmenter", "no-crop", "no-hoi"};
  return v;
}

inline int cmd_eval(const RunConfig& cfg, const EvalOptions& o) {
  if (o.use_soundboard == !o.manifest.empty()) throw ConfigError("give exactly one of --manifest or --soundboard");
  const bool needs_model = o.method == "model" || o.method == "random";
  if (!needs_model && o.method != "centre" && o.method != "oracle")
    throw ConfigError("unknown method '" + o.method + "'");
  if (o.ablation && o.method != "model") throw ConfigError("--ablation needs --method model");
  const auto variants = o.ablation ? ablation_variants() : std::vector<std::string>{o.variant};
  for (const auto& v : variants) variant_options(v, cfg.pipeline());  // rejects unknown names early

  // Inputs and their identities.
  ojson inputs = ojson::object();
  std::optional<data::Soundboard> board;
  eval::TestSet test;
  if (o.use_soundboard) {
    board.emplace(cfg.soundboard(), cfg.soundboard_seed());
    test = eval::soundboard_test_set(*board);
    inputs["soundboard"] = cfg.hash();
  } else {
    require_file(o.manifest, "--manifest");
    if (o.media.empty()) throw ConfigError("--media is required with --manifest");
    const auto m = data::read_manifest(o.manifest);
    const data::DirectoryMediaStore media(o.media, cfg.fps());
    test = eval::manifest_test_set(m.records, media);
    inputs["manifest"] = m.meta.config_hash;
  }
  if (test.samples.empty()) throw ConfigError("no test records to evaluate");
  // Random uses the initial audio branch; a given checkpoint only has to match its frozen parts.
  model::Checkpoint ck;
  std::unique_ptr<model::EncoderBundle> bundle;
  if (o.method == "model") {
    bundle = load_model(cfg, o.checkpoint, &ck);
    inputs["checkpoint"] = ck.config_hash;
  } else if (o.method == "random") {
    bundle = make_bundle(cfg);
    if (!o.checkpoint.empty()) {
      require_file(o.checkpoint, "--checkpoint");
      model::Checkpoint::load(o.checkpoint).check_frozen(*bundle);
    }
  }
  std::string first;
  for (const auto& [k, h] : inputs.items()) {
    const auto hash = h.get<std::string>();
    if (first.empty()) first = hash;
    if (hash != first && !o.force)
      throw ConfigError("inputs were produced under different config hashes " + inputs.dump() +
                        "; rerun with --force to evaluate anyway");
  }
  if (o.method == "random") bundle->randomize_projection(cfg.random_seed());

  const auto adapters = make_adapters(cfg, test.oracle);
  const auto dir = output_dir(o.out, "eval", cfg);
  ojson summary_all = ojson::object();
  bool failed = false;
  for (const auto& v : variants) {
    eval::Predictor predict;
    if (o.method == "centre") {
      predict = eval::centre_predictor();
    } else if (o.method == "oracle") {
      predict = eval::oracle_predictor();
    } else if (o.method == "random") {
      predict = eval::random_predictor(*bundle, cfg.pipeline().mask_threshold, cfg.min_audio_seconds());
    } else {
      predict = eval::model_predictor(*bundle, fit_to_adapters(verify::pipeline_variant(v, cfg.pipeline()), adapters),
                                      adapters.detector, adapters.segmenter, cfg.min_audio_seconds());
    }
    const auto res = eval::run_eval(test.samples, predict, cfg.workers(), cfg.per_sample_first());
    const auto vdir = o.ablation ? dir / v : dir;
    eval::write_per_sample_csv(vdir / "per_sample.csv", res);
    const auto strata = res.iou_lists().empty() ? std::map<std::string, eval::StratumMetrics>{}
                                                : eval::stratified_report(res, test.records);
    eval::write_strata_plots(vdir, strata);
    ojson j = stamp(cfg);
    j["method"] = o.method;
    if (needs_model) j["variant"] = o.method == "random" ? "no-hoi" : v;
    j["inputs"] = inputs;
    const auto summary = eval::summary_json(res, strata);
    for (const auto& [k, val] : summary.items()) j[k] = val;
    write_json(vdir / "summary.json", j);
    std::printf("%-8s %-13s mIoU %7.3f  AUC %7.3f  samples %zu  failures %zu\n", o.method.c_str(),
                (needs_model ? j["variant"].get<std::string>() : std::string("-")).c_str(), res.miou, res.auc,
                res.per_sample.size(), res.failures());
    summary_all[v] = {{"miou", res.miou}, {"auc", res.auc}, {"failures", res.failures()}};
    if (res.failures() > 0) failed = true;
  }
  if (o.ablation) {
    ojson j = stamp(cfg);
    j["inputs"] = inputs;
    j["variants"] = summary_all;
    write_json(dir / "ablation.json", j);
  }
  std::printf("results in %s\n", dir.string().c_str());
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------- stats

struct StatsOptions {
  fs::path manifest;
  fs::path out;
};

inline int cmd_stats(const RunConfig& cfg, const StatsOptions& o) {
  require_file(o.manifest, "--manifest");
  const auto m = data::read_manifest(o.manifest);
  const auto rep = data::dataset_stats(m.records);
  const auto dir = output_dir(o.out, "stats", cfg);
  data::write_stats_report(dir, rep);
  std::printf("records %ld, test %ld", rep.records, rep.test_records);
  if (rep.two_object_pct)
    std::printf(", two-object %s%%, single-object %s%%", data::format_pct(*rep.two_object_pct).c_str(),
                data::format_pct(*rep.single_object_pct).c_str());
  std::printf(" -> %s\n", dir.string().c_str());
  return 0;
}

// Runs a command, mapping configuration/usage errors to 2 and other failures to 1.
inline int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace colseg::cli
