#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colseg/core/error.hpp"

namespace colseg {

// Row-major 2-D grid. Base for both mask kinds.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height <= 0 || width <= 0)
      throw InvalidArgument("grid dimensions must be positive, got " + std::to_string(height) +
                            "x" + std::to_string(width));
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty_shape() const { return data_.empty(); }

  T& operator()(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
  const T& operator()(int row, int col) const {
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool same_shape(const Grid& o) const { return height_ == o.height_ && width_ == o.width_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 protected:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool valid_within(int img_h, int img_w) const {
    return 0 <= x_min && x_min < x_max && x_max <= img_w && 0 <= y_min && y_min < y_max &&
           y_max <= img_h;
  }
  bool contains(int row, int col) const {
    return col >= x_min && col < x_max && row >= y_min && row < y_max;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

class BinaryMask : public Grid<std::uint8_t> {
 public:
  using Grid::Grid;
  BinaryMask(int height, int width) : Grid(height, width, 0) {}

  static BinaryMask filled(int height, int width, const BBox& box) {
    BinaryMask m(height, width);
    for (int r = std::max(0, box.y_min); r < std::min(height, box.y_max); ++r)
      for (int c = std::max(0, box.x_min); c < std::min(width, box.x_max); ++c) m(r, c) = 1;
    return m;
  }

  long area() const {
    long n = 0;
    for (auto v : data_) n += v;
    return n;
  }
  bool is_empty() const { return area() == 0; }

  // Tight box around the foreground; nullopt for an empty mask.
  std::optional<BBox> bounding_box() const {
    int x0 = width_, y0 = height_, x1 = -1, y1 = -1;
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        if ((*this)(r, c)) {
          x0 = std::min(x0, c);
          x1 = std::max(x1, c);
          y0 = std::min(y0, r);
          y1 = std::max(y1, r);
        }
    if (x1 < 0) return std::nullopt;
    return BBox{x0, y0, x1 + 1, y1 + 1};
  }
};

class SoftMask : public Grid<float> {
 public:
  using Grid::Grid;
  SoftMask(int height, int width) : Grid(height, width, 0.0f) {}

  // Row-major index of the first maximum.
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(data_.begin(), data_.end()) - data_.begin());
  }
  float max_value() const { return *std::max_element(data_.begin(), data_.end()); }
  bool is_constant() const {
    auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
    return *lo == *hi;
  }
  double mean() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return s / static_cast<double>(data_.size());
  }
};

namespace detail {

template <typename A, typename B>
void check_same_shape(const A& a, const B& b, const char* op) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeMismatch(std::string(op) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()));
}

// 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(std::span<const double> f, std::span<double> d, std::vector<int>& v,
                   std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  // Skip leading infinite samples, they never form part of the envelope.
  int first = 0;
  while (first < n && std::isinf(f[first])) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (int q = first + 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest foreground pixel.
// All entries are +inf for an empty mask.
inline std::vector<double> squared_distance_transform(const BinaryMask& m) {
  const int h = m.height(), w = m.width();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) grid[static_cast<std::size_t>(r) * w + c] = m(r, c) ? 0.0 : inf;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col_in(h), col_out(h);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) col_in[r] = grid[static_cast<std::size_t>(r) * w + c];
    detail::edt_1d(col_in, col_out, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = col_out[r];
  }
  std::vector<double> row_out(w);
  for (int r = 0; r < h; ++r) {
    std::span<double> row(grid.data() + static_cast<std::size_t>(r) * w, w);
    detail::edt_1d(row, row_out, v, z);
    std::copy(row_out.begin(), row_out.end(), row.begin());
  }
  return grid;
}

// |a & b| / |a | b|. Two empty masks score 0.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_shape(a, b, "iou");
  long inter = 0, uni = 0;
  auto va = a.values();
  auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    inter += va[i] & vb[i];
    uni += va[i] | vb[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Minimum pixel-centre distance between the two foregrounds; nullopt when either is empty.
inline std::optional<double> mask_distance(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_shape(a, b, "mask_distance");
  if (a.is_empty() || b.is_empty()) return std::nullopt;
  const auto dt = squared_distance_transform(a);
  double best = std::numeric_limits<double>::infinity();
  auto vb = b.values();
  for (std::size_t i = 0; i < vb.size(); ++i)
    if (vb[i]) best = std::min(best, dt[i]);
  return std::sqrt(best);
}

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_shape(a, b, "union");
  BinaryMask out = a;
  auto vo = out.values();
  auto vb = b.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] |= vb[i];
  return out;
}

inline BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  detail::check_same_shape(a, b, "intersection");
  BinaryMask out = a;
  auto vo = out.values();
  auto vb = b.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] &= vb[i];
  return out;
}

// Inclusive threshold: value >= threshold maps to 1.
inline BinaryMask binarize(const SoftMask& m, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidArgument("binarize threshold must lie in (0,1)");
  BinaryMask out(m.height(), m.width());
  auto vi = m.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vi.size(); ++i) vo[i] = vi[i] >= threshold ? 1 : 0;
  return out;
}

// Square box of side crop_frac * min(H, W) centred on the first argmax, shifted to stay inside
// the image. A constant map is centred on the image centre.
inline BBox peak_crop_box(const SoftMask& m, double crop_frac) {
  if (!(crop_frac > 0.0 && crop_frac <= 1.0)) throw InvalidArgument("crop_frac must lie in (0,1]");
  const int h = m.height(), w = m.width();
  const int side = std::clamp(static_cast<int>(std::lround(crop_frac * std::min(h, w))), 1,
                              std::min(h, w));
  int row = h / 2, col = w / 2;
  if (!m.is_constant()) {
    const auto idx = m.argmax();
    row = static_cast<int>(idx / w);
    col = static_cast<int>(idx % w);
  }
  const int x0 = std::clamp(col - side / 2, 0, w - side);
  const int y0 = std::clamp(row - side / 2, 0, h - side);
  return BBox{x0, y0, x0 + side, y0 + side};
}

}  // namespace colseg
