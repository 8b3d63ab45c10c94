#pragma once

// Soundboard scenes as a training source, as manifest records, as oracle annotations, and as an
// on-disk dataset (PNG stills, float WAV tracks, NDJSON manifest).

#include <filesystem>
#include <string>
#include <vector>

#include "colseg/core/io.hpp"
#include "colseg/core/rle.hpp"
#include "colseg/data/records.hpp"
#include "colseg/data/soundboard.hpp"
#include "colseg/model/trainer.hpp"
#include "colseg/verify/adapters.hpp"

namespace colseg::data {

// Train scenes in generation order; a scene's pair is fixed, so the trainer may cache features.
class SoundboardSource : public model::TrainingSource {
 public:
  explicit SoundboardSource(const Soundboard& board) : board_(board) {}
  std::size_t size() const override { return board_.train().size(); }
  bool deterministic() const override { return true; }
  model::TrainingPair sample(std::size_t index, std::mt19937_64&) const override {
    const auto& s = board_.train().at(index);
    return {board_.render_image(s), board_.render_audio(s)};
  }

 private:
  const Soundboard& board_;
};

inline verify::OracleAnnotation oracle_annotation(const Soundboard& board, const Scene& s, const RenderedScene& r) {
  verify::OracleAnnotation a;
  const auto hands = board.in_hand_boxes(s, r);
  a.hands.left = hands.left;
  a.hands.right = hands.right;
  verify::TouchResult touch;
  for (const auto& o : s.objects) {
    if (o.role != Role::Colliding) continue;
    if (o.held_by == Holder::Left) touch.left = true;
    if (o.held_by == Holder::Right) touch.right = true;
  }
  a.touch = touch;
  const auto all = board.instance_masks(s, r);
  for (std::size_t k = 0; k < s.objects.size(); ++k)
    if (s.objects[k].role != Role::Hand && !all[k].is_empty()) a.instances.push_back(all[k]);
  return a;
}

inline verify::OracleAnnotation oracle_annotation(const SampleRecord& r) {
  verify::OracleAnnotation a;
  if (r.hand_boxes) {
    a.hands.left = r.hand_boxes->left;
    a.hands.right = r.hand_boxes->right;
  }
  if (r.touch) a.touch = verify::TouchResult{r.touch->first, r.touch->second};
  if (r.instance_masks)
    for (const auto& rle : *r.instance_masks) a.instances.push_back(rle_to_mask(rle, r.mask_height, r.mask_width));
  return a;
}

// Record of one scene: the scene is a "video" of one still frame whose track is the clip.
inline SampleRecord scene_record(const Soundboard& board, const Scene& s, const RenderedScene* r) {
  SampleRecord rec;
  rec.id = s.id;
  rec.video_id = s.id;
  rec.clip_start = 0.0;
  rec.clip_end = static_cast<double>(std::lround(s.duration * board.config().sample_rate)) / board.config().sample_rate;
  rec.split = s.test ? "test" : "train";
  rec.scenario = s.scenario;
  rec.sound_class = "m" + std::to_string(std::min(s.material_a, s.material_b)) + "/m" +
                    std::to_string(std::max(s.material_a, s.material_b));
  if (!s.test || !r) return rec;
  const int n = board.config().image_size;
  rec.eval_frame_index = 0;
  rec.mask_height = rec.mask_width = n;
  rec.gt_masks.emplace();
  rec.gt_boxes.emplace();
  for (const auto& m : board.colliding_masks(s, *r)) {
    rec.gt_masks->push_back(mask_to_rle(m));
    rec.gt_boxes->push_back(m.bounding_box().value_or(BBox{0, 0, 1, 1}));
  }
  const auto oracle = oracle_annotation(board, s, *r);
  rec.hand_boxes = HandBoxRecord{oracle.hands.left, oracle.hands.right};
  rec.touch = std::make_pair(oracle.touch->left, oracle.touch->right);
  rec.instance_masks.emplace();
  for (const auto& m : oracle.instances) rec.instance_masks->push_back(mask_to_rle(m));
  return rec;
}

// Writes <dir>/media/<id>.png and <id>.wav for every scene and <dir>/manifest.jsonl.
inline Manifest export_soundboard(const Soundboard& board, const std::filesystem::path& dir, ManifestMeta meta,
                                  bool include_train = true) {
  const auto media = dir / "media";
  std::filesystem::create_directories(media);
  Manifest m;
  m.meta = std::move(meta);
  auto emit = [&](const Scene& s) {
    const RenderedScene r = board.render(s);
    io::write_image_png(media / (s.id + ".png"), r.image);
    io::write_wav(media / (s.id + ".wav"), board.render_audio(s));
    m.records.push_back(scene_record(board, s, &r));
  };
  if (include_train)
    for (const auto& s : board.train()) emit(s);
  for (const auto& s : board.test()) emit(s);
  write_manifest(dir / "manifest.jsonl", m);
  return m;
}

}  // namespace colseg::data
