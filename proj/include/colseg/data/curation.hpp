#pragma once

// Dataset curation: clip extraction from timestamp annotations, collision filtering through a
// pluggable audio classifier, and the drop report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/core/media.hpp"
#include "colseg/data/media_store.hpp"
#include "colseg/data/records.hpp"

namespace colseg::data {

struct CurationConfig {
  std::set<std::string> collision_classes;
  std::set<std::string> excluded_scenarios{"social"};
  double min_mean_amplitude = 1e-3;  // of full scale
  double narration_clip_len = 3.0;
  double peak_window_min = 0.5;
  double peak_window_max = 1.5;
  double train_audio_len = 2.0;

  void validate() const {
    if (!(narration_clip_len > 0 && train_audio_len > 0)) throw InvalidArgument("durations must be positive");
    if (!(peak_window_min > 0 && peak_window_min <= peak_window_max))
      throw InvalidArgument("peak window range must satisfy 0 < low <= high");
    if (!(min_mean_amplitude >= 0)) throw InvalidArgument("min_mean_amplitude must be non-negative");
  }
};

// Collision class list: {"collision_classes": [...]}.
inline std::set<std::string> load_collision_classes(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open collision class file " + path.string());
  nlohmann::json j;
  try {
    is >> j;
    return j.at("collision_classes").get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("collision class file " + path.string() + ": " + e.what());
  }
}

enum class ClipMode { SoundIntervals, NarrationCenters };

// One timestamp annotation. Sound-interval events carry start/end, narration events a time.
struct AnnotationEvent {
  std::string video_id;
  double video_duration = 0.0;
  double start = 0.0;
  double end = 0.0;
  double time = 0.0;
  std::optional<std::string> scenario;
  std::optional<std::string> label;  // annotated class, when the source provides one
};

// NDJSON, one event per line: {"video_id", "video_duration", "start", "end"} or
// {"video_id", "video_duration", "time"}, optionally "scenario" and "label".
inline std::vector<AnnotationEvent> read_events(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open annotations " + path.string());
  std::vector<AnnotationEvent> out;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotationEvent e;
      e.video_id = j.at("video_id").get<std::string>();
      e.video_duration = j.at("video_duration").get<double>();
      e.start = j.value("start", 0.0);
      e.end = j.value("end", 0.0);
      e.time = j.value("time", 0.0);
      if (j.contains("scenario")) e.scenario = j["scenario"].get<std::string>();
      if (j.contains("label")) e.label = j["label"].get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

struct DropEntry {
  std::string id;
  std::string video_id;
  std::string stage;   // extract | filter
  std::string reason;  // out_of_range | class | amplitude | scenario | media
  std::string detail;
};

struct ExtractResult {
  std::vector<SampleRecord> records;
  std::vector<DropEntry> dropped;
};

inline std::string event_id(const AnnotationEvent& e, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return e.video_id + "#" + buf;
}

// Sound intervals are copied; narration times become a fixed-length clip centred on the time,
// translated to stay inside the video (and cut to the video when shorter). Records are train
// records; ids are "<video>#<event index>".
inline ExtractResult extract_clips(const std::vector<AnnotationEvent>& events, const CurationConfig& cfg, ClipMode mode) {
  cfg.validate();
  ExtractResult out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    SampleRecord r;
    r.id = event_id(e, i);
    r.video_id = e.video_id;
    r.scenario = e.scenario;
    r.sound_class = e.label;
    auto drop = [&](const std::string& detail) { out.dropped.push_back({r.id, e.video_id, "extract", "out_of_range", detail}); };
    if (mode == ClipMode::SoundIntervals) {
      if (!(e.start >= 0 && e.start < e.end && e.end <= e.video_duration)) {
        drop("interval [" + std::to_string(e.start) + ", " + std::to_string(e.end) + "] outside video of " +
             std::to_string(e.video_duration) + " s");
        continue;
      }
      r.clip_start = e.start;
      r.clip_end = e.end;
    } else {
      if (!(e.time >= 0 && e.time <= e.video_duration && e.video_duration > 0)) {
        drop("time " + std::to_string(e.time) + " outside video of " + std::to_string(e.video_duration) + " s");
        continue;
      }
      const double len = std::min(cfg.narration_clip_len, e.video_duration);
      const double start = std::clamp(e.time - 0.5 * cfg.narration_clip_len, 0.0, e.video_duration - len);
      r.clip_start = start;
      r.clip_end = start + len;
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

// Pluggable audio-event classifier (pretrained model adapter or test oracle).
class AudioClassifier {
 public:
  virtual ~AudioClassifier() = default;
  virtual bool concurrent() const { return false; }
  virtual std::string classify(const AudioClip& clip, const SampleRecord& record) const = 0;
};

// Looks labels up by record id; unknown ids are "unknown".
class OracleClassifier : public AudioClassifier {
 public:
  explicit OracleClassifier(std::map<std::string, std::string> labels) : labels_(std::move(labels)) {}
  bool concurrent() const override { return true; }
  std::string classify(const AudioClip&, const SampleRecord& r) const override {
    auto it = labels_.find(r.id);
    return it == labels_.end() ? "unknown" : it->second;
  }

  // {"<record id>": "<class>", ...}
  static OracleClassifier from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open oracle labels " + path.string());
    try {
      nlohmann::json j;
      is >> j;
      return OracleClassifier(j.get<std::map<std::string, std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("oracle labels " + path.string() + ": " + e.what());
    }
  }

 private:
  std::map<std::string, std::string> labels_;
};

struct FilterResult {
  std::vector<SampleRecord> kept;
  std::vector<DropEntry> dropped;
};

// Keeps a record iff its predicted class is a collision class, its mean |amplitude| reaches the
// minimum, and its scenario is not excluded; the first failing test, in that order, is the drop
// reason. Records are processed on `workers` threads and merged back in input order.
inline FilterResult filter_collisions(const std::vector<SampleRecord>& records, const AudioClassifier& classifier,
                                      const MediaStore& media, const CurationConfig& cfg, int workers = 1) {
  cfg.validate();
  struct Decision {
    std::optional<DropEntry> drop;
    std::string label;
  };
  std::vector<Decision> decisions(records.size());
  std::mutex classifier_mutex;
  auto decide = [&](std::size_t i) {
    const auto& r = records[i];
    Decision d;
    AudioClip clip;
    try {
      clip = media.audio(r.video_id).slice(r.clip_start, r.clip_end);
    } catch (const std::exception& e) {
      d.drop = DropEntry{r.id, r.video_id, "filter", "media", e.what()};
      decisions[i] = std::move(d);
      return;
    }
    {
      std::unique_lock<std::mutex> lock;
      if (!classifier.concurrent()) lock = std::unique_lock<std::mutex>(classifier_mutex);
      d.label = classifier.classify(clip, r);
    }
    const double amp = clip.mean_abs_amplitude();
    if (!cfg.collision_classes.count(d.label)) {
      d.drop = DropEntry{r.id, r.video_id, "filter", "class", d.label};
    } else if (amp < cfg.min_mean_amplitude) {
      d.drop = DropEntry{r.id, r.video_id, "filter", "amplitude", std::to_string(amp)};
    } else if (r.scenario && cfg.excluded_scenarios.count(*r.scenario)) {
      d.drop = DropEntry{r.id, r.video_id, "filter", "scenario", *r.scenario};
    }
    decisions[i] = std::move(d);
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) decide(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < records.size(); i += workers) decide(i);
      });
    for (auto& t : pool) t.join();
  }
  FilterResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (decisions[i].drop) {
      out.dropped.push_back(*decisions[i].drop);
    } else {
      SampleRecord r = records[i];
      r.sound_class = decisions[i].label;
      out.kept.push_back(std::move(r));
    }
  }
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline void write_drop_report(const std::filesystem::path& path, const std::vector<DropEntry>& dropped) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write drop report " + path.string());
  os << "id,video_id,stage,reason,detail\n";
  for (const auto& d : dropped)
    os << csv_escape(d.id) << ',' << csv_escape(d.video_id) << ',' << d.stage << ',' << d.reason << ','
       << csv_escape(d.detail) << '\n';
}

}  // namespace colseg::data
