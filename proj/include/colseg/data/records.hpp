#pragma once

// Sample records and the NDJSON manifest. The first manifest line is a meta object carrying the
// config hash and source revision; every further line is one record with a fixed field order.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/rle.hpp"

namespace colseg::data {

using ojson = nlohmann::ordered_json;

struct HandBoxRecord {
  std::optional<BBox> left;
  std::optional<BBox> right;
};

struct SampleRecord {
  std::string id;  // unique within a manifest
  std::string video_id;
  double clip_start = 0.0;
  double clip_end = 0.0;
  std::string split = "train";  // train | test
  std::optional<int> eval_frame_index;
  int mask_height = 0;  // resolution of every RLE field
  int mask_width = 0;
  std::optional<std::vector<std::string>> gt_masks;  // RLE, one or two
  std::optional<std::vector<BBox>> gt_boxes;         // boxes of gt_masks
  std::optional<std::string> sound_class;
  std::optional<std::string> scenario;
  // Oracle-adapter annotations (synthetic data): in-hand boxes, contact flags, and every visible
  // object instance a box-promptable segmenter could return.
  std::optional<HandBoxRecord> hand_boxes;
  std::optional<std::pair<bool, bool>> touch;  // left, right
  std::optional<std::vector<std::string>> instance_masks;

  double duration() const { return clip_end - clip_start; }
  int n_gt() const { return gt_masks ? static_cast<int>(gt_masks->size()) : 0; }

  std::vector<BinaryMask> decode_gt() const {
    std::vector<BinaryMask> out;
    if (gt_masks)
      for (const auto& r : *gt_masks) out.push_back(rle_to_mask(r, mask_height, mask_width));
    return out;
  }

  void validate() const {
    if (id.empty()) throw FormatError("record without id");
    if (!(clip_start < clip_end)) throw FormatError("record " + id + ": clip_start must precede clip_end");
    if (split != "train" && split != "test") throw FormatError("record " + id + ": split must be train or test");
    if (split == "test") {
      if (!eval_frame_index || !gt_masks) throw FormatError("test record " + id + " needs eval_frame_index and gt_masks");
      if (gt_masks->empty() || gt_masks->size() > 2) throw FormatError("test record " + id + " needs 1 or 2 gt masks");
    } else if (eval_frame_index || gt_masks) {
      throw FormatError("train record " + id + " must not carry eval_frame_index or gt_masks");
    }
    if ((gt_masks || instance_masks) && (mask_height <= 0 || mask_width <= 0))
      throw FormatError("record " + id + ": masks need mask_height and mask_width");
  }
};

inline ojson box_to_json(const BBox& b) { return ojson::array({b.x_min, b.y_min, b.x_max, b.y_max}); }
inline BBox box_from_json(const ojson& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be [x_min, y_min, x_max, y_max]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline ojson record_to_json(const SampleRecord& r) {
  ojson j;
  j["id"] = r.id;
  j["video_id"] = r.video_id;
  j["clip_start"] = r.clip_start;
  j["clip_end"] = r.clip_end;
  j["split"] = r.split;
  if (r.eval_frame_index) j["eval_frame_index"] = *r.eval_frame_index;
  if (r.gt_masks || r.instance_masks) {
    j["mask_height"] = r.mask_height;
    j["mask_width"] = r.mask_width;
  }
  if (r.gt_masks) j["gt_masks"] = *r.gt_masks;
  if (r.gt_boxes) {
    ojson a = ojson::array();
    for (const auto& b : *r.gt_boxes) a.push_back(box_to_json(b));
    j["gt_boxes"] = a;
  }
  if (r.sound_class) j["sound_class"] = *r.sound_class;
  if (r.scenario) j["scenario"] = *r.scenario;
  if (r.hand_boxes) {
    ojson h = ojson::object();
    h["left"] = r.hand_boxes->left ? box_to_json(*r.hand_boxes->left) : ojson();
    h["right"] = r.hand_boxes->right ? box_to_json(*r.hand_boxes->right) : ojson();
    j["hand_boxes"] = h;
  }
  if (r.touch) j["touch"] = {{"left", r.touch->first}, {"right", r.touch->second}};
  if (r.instance_masks) j["instance_masks"] = *r.instance_masks;
  return j;
}

inline SampleRecord record_from_json(const ojson& j) {
  static const std::set<std::string> known{"id",         "video_id",    "clip_start",  "clip_end",
                                           "split",      "eval_frame_index", "mask_height", "mask_width",
                                           "gt_masks",   "gt_boxes",    "sound_class", "scenario",
                                           "hand_boxes", "touch",       "instance_masks"};
  if (!j.is_object()) throw FormatError("manifest record must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw FormatError("unknown manifest field '" + k + "'");
  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.video_id = j.at("video_id").get<std::string>();
    r.clip_start = j.at("clip_start").get<double>();
    r.clip_end = j.at("clip_end").get<double>();
    r.split = j.at("split").get<std::string>();
    if (j.contains("eval_frame_index")) r.eval_frame_index = j["eval_frame_index"].get<int>();
    r.mask_height = j.value("mask_height", 0);
    r.mask_width = j.value("mask_width", 0);
    if (j.contains("gt_masks")) r.gt_masks = j["gt_masks"].get<std::vector<std::string>>();
    if (j.contains("gt_boxes")) {
      r.gt_boxes.emplace();
      for (const auto& b : j["gt_boxes"]) r.gt_boxes->push_back(box_from_json(b));
    }
    if (j.contains("sound_class")) r.sound_class = j["sound_class"].get<std::string>();
    if (j.contains("scenario")) r.scenario = j["scenario"].get<std::string>();
    if (j.contains("hand_boxes")) {
      HandBoxRecord h;
      const auto& hb = j["hand_boxes"];
      if (hb.contains("left") && !hb["left"].is_null()) h.left = box_from_json(hb["left"]);
      if (hb.contains("right") && !hb["right"].is_null()) h.right = box_from_json(hb["right"]);
      r.hand_boxes = h;
    }
    if (j.contains("touch")) r.touch = std::make_pair(j["touch"].at("left").get<bool>(), j["touch"].at("right").get<bool>());
    if (j.contains("instance_masks")) r.instance_masks = j["instance_masks"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest record: ") + e.what());
  }
  r.validate();
  return r;
}

struct ManifestMeta {
  std::string config_hash;
  std::string revision;
  std::string source;  // what produced the manifest, e.g. "curate" or "soundboard"
};

struct Manifest {
  ManifestMeta meta;
  std::vector<SampleRecord> records;
};

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write manifest " + path.string());
  ojson meta;
  meta["format"] = "colseg-manifest/1";
  meta["config_hash"] = m.meta.config_hash;
  meta["revision"] = m.meta.revision;
  meta["source"] = m.meta.source;
  meta["count"] = m.records.size();
  os << ojson{{"meta", meta}}.dump() << '\n';
  std::set<std::string> ids;
  for (const auto& r : m.records) {
    if (!ids.insert(r.id).second) throw FormatError("duplicate record id " + r.id);
    os << record_to_json(r).dump() << '\n';
  }
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  bool first = true;
  long lineno = 0;
  std::set<std::string> ids;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first && j.contains("meta")) {
      const auto& meta = j["meta"];
      if (meta.value("format", "") != "colseg-manifest/1") throw FormatError("unsupported manifest format");
      m.meta.config_hash = meta.value("config_hash", "");
      m.meta.revision = meta.value("revision", "");
      m.meta.source = meta.value("source", "");
      first = false;
      continue;
    }
    first = false;
    try {
      m.records.push_back(record_from_json(j));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(m.records.back().id).second) throw FormatError("duplicate record id " + m.records.back().id);
  }
  return m;
}

}  // namespace colseg::data
