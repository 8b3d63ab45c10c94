#pragma once

// Synthetic collision "soundboard": procedurally rendered egocentric tabletop scenes with hands,
// a colliding object pair (or a single object) and distractors, paired with collision audio
// that is a nonlinear (multiplicative) function of the two materials.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "colseg/core/error.hpp"
#include "colseg/core/mask.hpp"
#include "colseg/core/media.hpp"
#include "colseg/model/spectrogram.hpp"

namespace colseg::data {

struct SoundboardConfig {
  int materials = 6;
  int image_size = 352;
  int train_scenes = 2000;
  int test_scenes = 200;
  int distractors = 3;
  double single_object_rate = 0.2;
  double hand_hand_rate = 0.4;  // share of two-object scenes where both objects are held
  double sample_rate = 16000.0;
  double min_duration = 0.4;
  double max_duration = 1.6;
  int min_radius = 28;
  int max_radius = 64;
  double max_signature_correlation = 0.9;
};

enum class Texture { Plain, Stripes, Checker, Dots };

struct Material {
  std::array<float, 3> color{};
  Texture texture = Texture::Plain;
  double texture_period = 8.0;
  double texture_angle = 0.0;
  double cos_angle = 1.0, sin_angle = 0.0;  // of texture_angle
  std::array<double, 3> bands{};  // Hz
};

enum class ShapeKind { Ellipse, Rect };
enum class Role { Colliding, Distractor, Hand };
enum class Holder { None, Left, Right };

struct SceneObject {
  int material = 0;  // unused for hands
  ShapeKind shape = ShapeKind::Ellipse;
  double cx = 0, cy = 0, rx = 10, ry = 10, angle = 0;
  float shade = 1.0f;
  Role role = Role::Distractor;
  Holder held_by = Holder::None;
  std::string label;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    if (shape == ShapeKind::Ellipse) return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
    return std::fabs(u) <= rx && std::fabs(v) <= ry;
  }
  double extent() const { return std::max(rx, ry); }
};

struct Scene {
  std::string id;
  bool test = false;
  std::uint64_t seed = 0;
  int material_a = 0;
  int material_b = 0;
  int colliding_count = 2;
  std::string scenario;  // hand-hand | hand-table | single
  std::vector<SceneObject> objects;  // z-order, hands last
  double duration = 1.0;
};

struct RenderedScene {
  Image image;
  std::vector<int> instance;  // per pixel index into Scene::objects, -1 background
};

struct HandBoxes {
  std::optional<BBox> left;
  std::optional<BBox> right;
};

class Soundboard {
 public:
  Soundboard(SoundboardConfig cfg, std::uint64_t seed);

  const SoundboardConfig& config() const { return cfg_; }
  const std::vector<Material>& materials() const { return materials_; }
  const std::vector<Scene>& train() const { return train_; }
  const std::vector<Scene>& test() const { return test_; }
  std::uint64_t seed() const { return seed_; }

  RenderedScene render(const Scene& s) const;
  Image render_image(const Scene& s) const { return render(s).image; }
  AudioClip render_audio(const Scene& s) const;

  // Clean (noise-free, fixed-length) signature of an unordered material pair.
  AudioClip signature(int a, int b, double duration = 1.0) const;
  int pair_index(int a, int b) const;
  int pair_count() const { return cfg_.materials * (cfg_.materials + 1) / 2; }

  // Visible masks of every object (same order as Scene::objects).
  std::vector<BinaryMask> instance_masks(const Scene& s, const RenderedScene& r) const;
  std::vector<BinaryMask> colliding_masks(const Scene& s, const RenderedScene& r) const;
  HandBoxes in_hand_boxes(const Scene& s, const RenderedScene& r) const;

  // Mean mel power of each pair signature; used for separability and pair recovery.
  const std::vector<std::vector<double>>& signature_spectra() const { return spectra_; }
  std::vector<double> mean_mel_power(const AudioClip& clip) const;
  double max_pairwise_signature_correlation() const;
  // Nearest signature by Pearson correlation of mean mel power.
  int recover_pair(const AudioClip& clip) const;

 private:
  void make_materials(std::mt19937_64& rng);
  Scene make_scene(std::uint64_t scene_seed, bool test, int index) const;
  bool place_touching(SceneObject& b, const SceneObject& a, std::mt19937_64& rng) const;
  float texture_value(const Material& m, double x, double y) const;

  SoundboardConfig cfg_;
  std::uint64_t seed_;
  std::vector<Material> materials_;
  std::vector<Scene> train_;
  std::vector<Scene> test_;
  model::SpectrogramExtractor spec_;
  std::vector<std::vector<double>> spectra_;
  std::vector<float> grain_;  // table wood grain, shared by all scenes
};

// ---------------------------------------------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(std::max(saa * sbb, 1e-300));
}

// Fixed palette of well separated hues.
inline constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {0.85f, 0.20f, 0.15f},
    {0.20f, 0.65f, 0.25f},
    {0.20f, 0.30f, 0.85f},
    {0.90f, 0.80f, 0.15f},
    {0.75f, 0.25f, 0.75f},
    {0.15f, 0.75f, 0.80f},
    {0.95f, 0.55f, 0.10f},
    {0.35f, 0.35f, 0.35f},
}};

inline constexpr std::array<float, 3> kSkin{0.87f, 0.68f, 0.56f};
inline constexpr std::array<float, 3> kTable{0.55f, 0.47f, 0.40f};

}  // namespace detail

inline Soundboard::Soundboard(SoundboardConfig cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  if (cfg_.materials < 2 || cfg_.materials > static_cast<int>(detail::kPalette.size()))
    throw InvalidArgument("soundboard supports 2.." + std::to_string(detail::kPalette.size()) +
                          " materials");
  if (cfg_.image_size < 64) throw InvalidArgument("soundboard image_size must be >= 64");
  if (cfg_.train_scenes < 0 || cfg_.test_scenes < 0 || cfg_.distractors < 0)
    throw InvalidArgument("soundboard sizes must be non-negative");
  if (!(cfg_.single_object_rate >= 0 && cfg_.single_object_rate <= 1))
    throw InvalidArgument("single_object_rate must lie in [0,1]");
  const int n = cfg_.image_size;
  grain_.resize(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      grain_[static_cast<std::size_t>(y) * n + x] =
          0.04f * static_cast<float>(std::sin(0.11 * x + 0.05 * y) * std::sin(0.07 * y - 0.02 * x));
  std::mt19937_64 rng(detail::splitmix64(seed));
  make_materials(rng);
  for (int i = 0; i < cfg_.train_scenes; ++i)
    train_.push_back(make_scene(detail::splitmix64(seed ^ (0x1000000ULL + i)), false, i));
  for (int i = 0; i < cfg_.test_scenes; ++i)
    test_.push_back(make_scene(detail::splitmix64(seed ^ (0x2000000000ULL + i)), true, i));
}

inline int Soundboard::pair_index(int a, int b) const {
  if (a > b) std::swap(a, b);
  // Row-major upper triangle including the diagonal.
  return a * cfg_.materials - a * (a - 1) / 2 + (b - a);
}

inline void Soundboard::make_materials(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> band(300.0, 3200.0);
  std::uniform_real_distribution<double> period(5.0, 12.0);
  std::uniform_real_distribution<double> angle(0.0, M_PI);
  // Regenerate band patterns until all pair signatures are separable.
  for (int attempt = 0; attempt < 100; ++attempt) {
    materials_.clear();
    for (int m = 0; m < cfg_.materials; ++m) {
      Material mat;
      mat.color = detail::kPalette[static_cast<std::size_t>(m)];
      mat.texture = static_cast<Texture>(m % 4);
      mat.texture_period = period(rng);
      mat.texture_angle = angle(rng);
      mat.cos_angle = std::cos(mat.texture_angle);
      mat.sin_angle = std::sin(mat.texture_angle);
      for (auto& b : mat.bands) b = band(rng);
      std::sort(mat.bands.begin(), mat.bands.end());
      materials_.push_back(mat);
    }
    spectra_.assign(static_cast<std::size_t>(pair_count()), {});
    for (int a = 0; a < cfg_.materials; ++a)
      for (int b = a; b < cfg_.materials; ++b)
        spectra_[static_cast<std::size_t>(pair_index(a, b))] = mean_mel_power(signature(a, b));
    if (max_pairwise_signature_correlation() < cfg_.max_signature_correlation) return;
  }
  throw Error("could not generate separable material signatures");
}

inline double Soundboard::max_pairwise_signature_correlation() const {
  double worst = -1.0;
  for (std::size_t i = 0; i < spectra_.size(); ++i)
    for (std::size_t j = i + 1; j < spectra_.size(); ++j)
      worst = std::max(worst, detail::pearson(spectra_[i], spectra_[j]));
  return worst;
}

inline std::vector<double> Soundboard::mean_mel_power(const AudioClip& clip) const {
  const auto spec = spec_.compute(clip);
  std::vector<double> out(static_cast<std::size_t>(spec.mels), 0.0);
  for (int f = 0; f < spec.frames; ++f)
    for (int m = 0; m < spec.mels; ++m) out[m] += std::exp(spec.at(f, m));
  double total = 0.0;
  for (double v : out) total += v;
  for (auto& v : out) v /= std::max(total, 1e-300);
  return out;
}

inline int Soundboard::recover_pair(const AudioClip& clip) const {
  const auto s = mean_mel_power(clip);
  int best = -1;
  double best_corr = -2.0;
  for (std::size_t i = 0; i < spectra_.size(); ++i) {
    const double c = detail::pearson(s, spectra_[i]);
    if (c > best_corr) {
      best_corr = c;
      best = static_cast<int>(i);
    }
  }
  return best;
}

inline AudioClip Soundboard::signature(int a, int b, double duration) const {
  if (a > b) std::swap(a, b);
  const auto n = static_cast<std::size_t>(std::lround(duration * cfg_.sample_rate));
  std::vector<float> out(n);
  const auto& ma = materials_[static_cast<std::size_t>(a)];
  const auto& mb = materials_[static_cast<std::size_t>(b)];
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg_.sample_rate;
    double pa = 0.0, pb = 0.0;
    for (double f : ma.bands) pa += std::sin(2.0 * M_PI * f * t);
    for (double f : mb.bands) pb += std::sin(2.0 * M_PI * f * t);
    // Product of the two band patterns: energy lands at sum and difference frequencies.
    out[i] = static_cast<float>(0.08 * pa * pb);
  }
  return AudioClip(std::move(out), cfg_.sample_rate);
}

inline AudioClip Soundboard::render_audio(const Scene& s) const {
  std::mt19937_64 rng(detail::splitmix64(s.seed ^ 0xa0d10ULL));
  std::uniform_real_distribution<double> jitter(0.985, 1.015);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double amp = 0.4 + 0.5 * unit(rng);
  const double decay = 0.08 + 0.25 * unit(rng);
  const double pitch = jitter(rng);
  const auto n = static_cast<std::size_t>(std::lround(s.duration * cfg_.sample_rate));
  const auto& ma = materials_[static_cast<std::size_t>(s.material_a)];
  const auto& mb = materials_[static_cast<std::size_t>(s.material_b)];
  std::array<double, 6> phase{};
  for (auto& p : phase) p = 2.0 * M_PI * unit(rng);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg_.sample_rate;
    double pa = 0.0, pb = 0.0;
    for (int k = 0; k < 3; ++k) {
      pa += std::sin(2.0 * M_PI * ma.bands[k] * pitch * t + phase[k]);
      pb += std::sin(2.0 * M_PI * mb.bands[k] * pitch * t + phase[3 + k]);
    }
    const double env = std::exp(-t / decay);
    // Impact transient: a short burst of broadband noise at onset.
    const double transient = t < 0.01 ? 0.3 * (1.0 - t / 0.01) * noise(rng) : 0.0;
    out[i] = static_cast<float>(amp * (0.08 * env * pa * pb + transient) + 0.003 * noise(rng));
  }
  return AudioClip(std::move(out), cfg_.sample_rate);
}

inline bool Soundboard::place_touching(SceneObject& b, const SceneObject& a,
                                       std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  const double size = cfg_.image_size;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double theta = ang(rng);
    const double dx = std::cos(theta), dy = std::sin(theta);
    // March b's centre outwards until the shapes stop overlapping; the last overlapping step
    // leaves them in contact.
    double dist = 0.0;
    for (; dist < a.extent() + b.extent() + 4; dist += 1.0) {
      b.cx = a.cx + dx * dist;
      b.cy = a.cy + dy * dist;
      bool overlap = false;
      const int x0 = static_cast<int>(std::max(0.0, b.cx - b.extent()));
      const int x1 = static_cast<int>(std::min(size - 1, b.cx + b.extent()));
      const int y0 = static_cast<int>(std::max(0.0, b.cy - b.extent()));
      const int y1 = static_cast<int>(std::min(size - 1, b.cy + b.extent()));
      for (int y = y0; y <= y1 && !overlap; y += 2)
        for (int x = x0; x <= x1 && !overlap; x += 2)
          overlap = b.contains(x + 0.5, y + 0.5) && a.contains(x + 0.5, y + 0.5);
      if (!overlap) break;
    }
    dist = std::max(0.0, dist - 3.0);
    b.cx = a.cx + dx * dist;
    b.cy = a.cy + dy * dist;
    const double m = b.extent() + 2;
    if (b.cx - m >= 0 && b.cx + m < size && b.cy - m >= 0 && b.cy + m < size * 0.9) return true;
  }
  return false;
}

inline Scene Soundboard::make_scene(std::uint64_t scene_seed, bool test, int index) const {
  std::mt19937_64 rng(scene_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> material(0, cfg_.materials - 1);
  std::uniform_int_distribution<int> radius(cfg_.min_radius, cfg_.max_radius);
  const double size = cfg_.image_size;

  Scene s;
  s.id = std::string(test ? "test_" : "train_") + std::to_string(index);
  s.test = test;
  s.seed = scene_seed;
  s.duration = cfg_.min_duration + (cfg_.max_duration - cfg_.min_duration) * unit(rng);

  auto make_object = [&](int mat, Role role) {
    SceneObject o;
    o.material = mat;
    o.shape = unit(rng) < 0.5 ? ShapeKind::Ellipse : ShapeKind::Rect;
    const double r = radius(rng);
    const double aspect = 0.6 + 0.4 * unit(rng);
    o.rx = o.shape == ShapeKind::Rect ? r * 0.85 : r;
    o.ry = o.rx * aspect;
    o.angle = unit(rng) * M_PI;
    o.shade = static_cast<float>(0.85 + 0.3 * unit(rng));
    o.role = role;
    return o;
  };
  auto make_hand = [&](Holder side, const SceneObject& held) {
    SceneObject h;
    h.role = Role::Hand;
    h.shape = ShapeKind::Ellipse;
    h.held_by = side;
    h.label = side == Holder::Left ? "hand_left" : "hand_right";
    h.rx = 20 + 6 * unit(rng);
    h.ry = 15 + 4 * unit(rng);
    // Grip below the object, pointing up from the bottom edge.
    h.cx = held.cx + (side == Holder::Left ? -0.3 : 0.3) * held.extent();
    h.cy = held.cy + held.extent() * 0.8;
    h.angle = 0.3 * (unit(rng) - 0.5);
    h.shade = 1.0f;
    return h;
  };

  const double scenario_draw = unit(rng);
  const bool single = scenario_draw < cfg_.single_object_rate;
  std::vector<SceneObject> held_and_colliding;
  std::vector<SceneObject> hands;

  if (single) {
    s.scenario = "single";
    s.colliding_count = 1;
    s.material_a = s.material_b = material(rng);
    SceneObject a = make_object(s.material_a, Role::Colliding);
    const Holder side = unit(rng) < 0.75 ? Holder::Right : Holder::Left;
    a.held_by = side;
    a.cx = size * (side == Holder::Right ? 0.55 + 0.2 * unit(rng) : 0.25 + 0.2 * unit(rng));
    a.cy = size * (0.45 + 0.2 * unit(rng));
    a.label = "colliding_0";
    held_and_colliding.push_back(a);
    hands.push_back(make_hand(side, a));
  } else {
    s.colliding_count = 2;
    s.material_a = material(rng);
    do {
      s.material_b = material(rng);
    } while (s.material_b == s.material_a);
    const bool hand_hand = unit(rng) < cfg_.hand_hand_rate;
    s.scenario = hand_hand ? "hand-hand" : "hand-table";
    SceneObject a = make_object(s.material_a, Role::Colliding);
    SceneObject b = make_object(s.material_b, Role::Colliding);
    const Holder holder = hand_hand || unit(rng) < 0.7 ? Holder::Right : Holder::Left;
    a.held_by = holder;
    a.cx = size * (0.35 + 0.3 * unit(rng));
    a.cy = size * (0.4 + 0.2 * unit(rng));
    a.label = "colliding_0";
    b.label = "colliding_1";
    for (int attempt = 0; attempt < 8 && !place_touching(b, a, rng); ++attempt) {
      a.cx = size * (0.35 + 0.3 * unit(rng));
      a.cy = size * (0.4 + 0.2 * unit(rng));
    }
    if (hand_hand) {
      // Left hand takes the leftmost object. Swapping centres is a point reflection of the
      // pair, so contact is preserved.
      if (b.cx < a.cx) {
        std::swap(a.cx, b.cx);
        std::swap(a.cy, b.cy);
      }
      a.held_by = Holder::Left;
      b.held_by = Holder::Right;
    }
    held_and_colliding.push_back(a);
    held_and_colliding.push_back(b);
    for (const auto& o : held_and_colliding)
      if (o.held_by != Holder::None) hands.push_back(make_hand(o.held_by, o));
  }

  auto too_close = [&](const SceneObject& o, const std::vector<SceneObject>& others, double gap) {
    for (const auto& p : others) {
      const double d = std::hypot(o.cx - p.cx, o.cy - p.cy);
      if (d < o.extent() + p.extent() + gap) return true;
    }
    return false;
  };

  std::vector<SceneObject> placed = held_and_colliding;
  for (const auto& h : hands) placed.push_back(h);
  std::vector<SceneObject> distractors;

  // The free hand sometimes holds a distractor, well away from the collision.
  const bool left_free =
      std::none_of(hands.begin(), hands.end(), [](auto& h) { return h.held_by == Holder::Left; });
  const bool right_free =
      std::none_of(hands.begin(), hands.end(), [](auto& h) { return h.held_by == Holder::Right; });
  if ((left_free || right_free) && unit(rng) < 0.5) {
    const Holder side = left_free ? Holder::Left : Holder::Right;
    SceneObject d = make_object(material(rng), Role::Distractor);
    d.held_by = side;
    d.label = "distractor_held";
    for (int attempt = 0; attempt < 64; ++attempt) {
      d.cx = size * (side == Holder::Left ? 0.08 + 0.22 * unit(rng) : 0.7 + 0.22 * unit(rng));
      d.cy = size * (0.45 + 0.25 * unit(rng));
      SceneObject h = make_hand(side, d);
      if (!too_close(d, placed, 30.0) && !too_close(h, held_and_colliding, 30.0) &&
          d.cx - d.extent() >= 0 && d.cx + d.extent() < size) {
        distractors.push_back(d);
        placed.push_back(d);
        placed.push_back(h);
        hands.push_back(h);
        break;
      }
    }
  }
  for (int k = 0; k < cfg_.distractors; ++k) {
    SceneObject d = make_object(material(rng), Role::Distractor);
    d.label = "distractor_" + std::to_string(k);
    for (int attempt = 0; attempt < 200; ++attempt) {
      d.cx = d.extent() + 2 + (size - 2 * d.extent() - 4) * unit(rng);
      d.cy = d.extent() + 2 + (size * 0.75 - 2 * d.extent() - 4) * unit(rng);
      if (!too_close(d, placed, 30.0)) {
        distractors.push_back(d);
        placed.push_back(d);
        break;
      }
    }
  }

  // z-order: table distractors, then colliding/held objects, then hands on top.
  for (const auto& d : distractors)
    if (d.held_by == Holder::None) s.objects.push_back(d);
  for (const auto& d : distractors)
    if (d.held_by != Holder::None) s.objects.push_back(d);
  for (const auto& o : held_and_colliding) s.objects.push_back(o);
  for (const auto& h : hands) s.objects.push_back(h);
  return s;
}

inline float Soundboard::texture_value(const Material& m, double x, double y) const {
  const double u = x * m.cos_angle + y * m.sin_angle;
  const double v = -x * m.sin_angle + y * m.cos_angle;
  const double p = m.texture_period;
  switch (m.texture) {
    case Texture::Plain:
      return 1.0f;
    case Texture::Stripes:
      return std::sin(2.0 * M_PI * u / p) > 0 ? 1.15f : 0.8f;
    case Texture::Checker:
      return ((static_cast<long>(std::floor(u / p)) + static_cast<long>(std::floor(v / p))) & 1)
                 ? 1.15f
                 : 0.8f;
    case Texture::Dots: {
      const double fu = u / p - std::floor(u / p) - 0.5, fv = v / p - std::floor(v / p) - 0.5;
      return fu * fu + fv * fv < 0.08 ? 0.7f : 1.05f;
    }
  }
  return 1.0f;
}

inline RenderedScene Soundboard::render(const Scene& s) const {
  const int n = cfg_.image_size;
  RenderedScene out{Image(n, n), std::vector<int>(static_cast<std::size_t>(n) * n, -1)};
  // Rasterise in z-order; later objects overwrite earlier ones.
  for (std::size_t k = 0; k < s.objects.size(); ++k) {
    const auto& o = s.objects[k];
    const double e = std::hypot(o.rx, o.ry);
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - e)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil(o.cx + e)));
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - e)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil(o.cy + e)));
    const double c = std::cos(o.angle), sn = std::sin(o.angle);
    const double irx2 = 1.0 / (o.rx * o.rx), iry2 = 1.0 / (o.ry * o.ry);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        // Same test as SceneObject::contains with the rotation hoisted.
        const double dx = x + 0.5 - o.cx, dy = y + 0.5 - o.cy;
        const double u = c * dx + sn * dy, v = -sn * dx + c * dy;
        const bool in = o.shape == ShapeKind::Ellipse ? u * u * irx2 + v * v * iry2 <= 1.0
                                                      : std::fabs(u) <= o.rx && std::fabs(v) <= o.ry;
        if (in) out.instance[static_cast<std::size_t>(y) * n + x] = static_cast<int>(k);
      }
  }
  // Triangular pixel noise (sum of two uniforms) with standard deviation 0.015.
  std::mt19937_64 rng(detail::splitmix64(s.seed ^ 0x1a6eULL));
  constexpr float kNoiseScale = 0.015f * 2.449490f / 4294967296.0f;
  auto noise = [&rng]() {
    const std::uint64_t r = rng();
    return (static_cast<float>(r & 0xffffffffULL) + static_cast<float>(r >> 32) - 4294967296.0f) * kNoiseScale;
  };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int top = out.instance[static_cast<std::size_t>(y) * n + x];
      std::array<float, 3> c{};
      if (top < 0) {
        const float grain = grain_[static_cast<std::size_t>(y) * n + x];
        for (int ch = 0; ch < 3; ++ch) c[ch] = detail::kTable[ch] + grain;
      } else {
        const auto& o = s.objects[static_cast<std::size_t>(top)];
        if (o.role == Role::Hand) {
          c = detail::kSkin;
        } else {
          const auto& m = materials_[static_cast<std::size_t>(o.material)];
          const float t = texture_value(m, x - o.cx, y - o.cy) * o.shade;
          for (int ch = 0; ch < 3; ++ch) c[ch] = m.color[ch] * t;
        }
      }
      // Quantised to 8 bits so that a PNG export reproduces the image exactly.
      for (int ch = 0; ch < 3; ++ch)
        out.image.at(ch, y, x) = static_cast<float>(std::lround(std::clamp(c[ch] + noise(), 0.0f, 1.0f) * 255.0f)) / 255.0f;
    }
  return out;
}

inline std::vector<BinaryMask> Soundboard::instance_masks(const Scene& s,
                                                          const RenderedScene& r) const {
  const int n = cfg_.image_size;
  std::vector<BinaryMask> out(s.objects.size(), BinaryMask(n, n));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const int k = r.instance[static_cast<std::size_t>(y) * n + x];
      if (k >= 0) out[static_cast<std::size_t>(k)](y, x) = 1;
    }
  return out;
}

inline std::vector<BinaryMask> Soundboard::colliding_masks(const Scene& s,
                                                           const RenderedScene& r) const {
  const auto all = instance_masks(s, r);
  std::vector<BinaryMask> out;
  for (std::size_t k = 0; k < s.objects.size(); ++k)
    if (s.objects[k].role == Role::Colliding) out.push_back(all[k]);
  return out;
}

inline HandBoxes Soundboard::in_hand_boxes(const Scene& s, const RenderedScene& r) const {
  const auto all = instance_masks(s, r);
  HandBoxes boxes;
  for (std::size_t k = 0; k < s.objects.size(); ++k) {
    const auto& o = s.objects[k];
    if (o.role == Role::Hand || o.held_by == Holder::None) continue;
    auto box = all[k].bounding_box();
    if (!box) continue;
    if (o.held_by == Holder::Left) boxes.left = box;
    else boxes.right = box;
  }
  return boxes;
}

}  // namespace colseg::data
