// colseg: curate, train, infer, eval, stats and soundboard commands.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "colseg/cli/commands.hpp"

using namespace colseg::cli;

int main(int argc, char** argv) {
  CLI::App app{"Audio-conditioned segmentation of collision sound sources"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  std::string config_file;
  std::vector<std::string> overrides;
  int workers = 0;
  app.add_option("-c,--config", config_file, "JSON run configuration");
  app.add_option("--set", overrides, "override a config value, e.g. --set train.steps=100")->take_all();
  app.add_option("--workers", workers, "worker threads (overrides config)");
  app.set_version_flag("--version", std::string("colseg ") + revision());

  SoundboardOptions sb;
  auto* c_sb = app.add_subcommand("soundboard", "generate the synthetic benchmark as media + manifest");
  c_sb->add_option("-o,--out", sb.out, "output directory");
  c_sb->add_flag("!--no-train", sb.include_train, "write the test split only");

  CurateOptions cu;
  auto* c_cu = app.add_subcommand("curate", "extract and filter collision clips into a manifest");
  c_cu->add_option("--events", cu.events, "NDJSON annotation events")->required();
  c_cu->add_option("--media", cu.media, "media directory")->required();
  c_cu->add_option("--labels", cu.labels, "oracle classifier labels (JSON id -> class)")->required();
  c_cu->add_option("-o,--out", cu.out, "output directory");

  TrainOptions tr;
  int steps = -1, batch = -1;
  double lr = -1;
  long long seed = -1;
  auto* c_tr = app.add_subcommand("train", "train the audio branch");
  c_tr->add_option("--manifest", tr.manifest, "manifest with train records");
  c_tr->add_option("--media", tr.media, "media directory of the manifest");
  c_tr->add_flag("--soundboard", tr.use_soundboard, "train on the configured soundboard");
  c_tr->add_option("--resume", tr.resume, "checkpoint to resume from");
  c_tr->add_option("-o,--out", tr.out, "output directory");
  c_tr->add_option("--steps", steps, "training steps");
  c_tr->add_option("--batch-size", batch, "batch size");
  c_tr->add_option("--lr", lr, "learning rate");
  c_tr->add_option("--seed", seed, "training seed");
  c_tr->add_flag("-q,--quiet", tr.quiet, "no progress lines");

  InferOptions in;
  bool no_hoi = false;
  std::string hands = "verify";
  auto* c_in = app.add_subcommand("infer", "predict collision masks for one frame and clip");
  c_in->add_option("--checkpoint", in.checkpoint, "trained checkpoint")->required();
  c_in->add_option("--image", in.image, "frame (PNG)")->required();
  c_in->add_option("--audio", in.audio, "clip (WAV)")->required();
  c_in->add_option("--variant", in.variant, "full | av | no-segmenter | no-crop | no-hoi | right-left");
  c_in->add_flag("--no-hoi", no_hoi, "audio-only mode (same as --variant av)");
  c_in->add_option("--hands", hands, "verify | right-left")->check(CLI::IsMember({"verify", "right-left"}));
  c_in->add_option("--manifest", in.manifest, "manifest holding oracle annotations for --sample");
  c_in->add_option("--sample", in.sample, "sample id within --manifest");
  c_in->add_option("-o,--out", in.out, "output directory");

  EvalOptions ev;
  bool per_sample_first = false;
  auto* c_ev = app.add_subcommand("eval", "evaluate a method on the test split");
  c_ev->add_option("--method", ev.method, "model | centre | random | oracle")
      ->check(CLI::IsMember({"model", "centre", "random", "oracle"}));
  c_ev->add_option("--checkpoint", ev.checkpoint, "trained checkpoint (method model)");
  c_ev->add_option("--manifest", ev.manifest, "manifest with test records");
  c_ev->add_option("--media", ev.media, "media directory of the manifest");
  c_ev->add_flag("--soundboard", ev.use_soundboard, "evaluate on the configured soundboard test split");
  c_ev->add_option("--variant", ev.variant, "pipeline variant for --method model");
  c_ev->add_flag("--ablation", ev.ablation, "run full, no-segmenter, no-crop and no-hoi");
  c_ev->add_flag("--per-sample-first", per_sample_first, "average IoUs within each sample first");
  c_ev->add_flag("--force", ev.force, "accept inputs with different config hashes");
  c_ev->add_option("-o,--out", ev.out, "output directory");

  StatsOptions st;
  auto* c_st = app.add_subcommand("stats", "dataset statistics of a manifest");
  c_st->add_option("--manifest", st.manifest, "manifest")->required();
  c_st->add_option("-o,--out", st.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return run_guarded([&] {
    if (workers > 0) overrides.push_back("workers=" + std::to_string(workers));
    if (steps >= 0) overrides.push_back("train.steps=" + std::to_string(steps));
    if (batch >= 0) overrides.push_back("train.batch_size=" + std::to_string(batch));
    if (lr > 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", lr);
      overrides.push_back(std::string("train.learning_rate=") + buf);
    }
    if (seed >= 0) overrides.push_back("train.seed=" + std::to_string(seed));
    if (per_sample_first) overrides.push_back("eval.per_sample_first=true");
    const RunConfig cfg = load_config(config_file, overrides);
    if (*c_sb) return cmd_soundboard(cfg, sb);
    if (*c_cu) return cmd_curate(cfg, cu);
    if (*c_tr) return cmd_train(cfg, tr);
    if (*c_in) {
      if (no_hoi) in.variant = "av";
      if (hands == "right-left") in.variant = "right-left";
      return cmd_infer(cfg, in);
    }
    if (*c_ev) return cmd_eval(cfg, ev);
    return cmd_stats(cfg, st);
  });
}
