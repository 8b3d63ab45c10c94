#pragma once

// Weakly-supervised training objective over all B x B image/audio pairings: image-level and
// feature-level InfoNCE plus an area prior on the positive-pair masks.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/error.hpp"
#include "colseg/model/encoders.hpp"
#include "colseg/nn/tensor.hpp"

namespace colseg::losses {

using nn::Tensor;

struct LossWeights {
  double lambda_i = 1.0;
  double lambda_f = 1.0;
  double lambda_r = 1.0;
  double p_plus = 0.1;  // expected mask area fraction
  double tau = 0.07;    // initial InfoNCE temperature
  double tau_min = 0.01;
  double tau_max = 0.5;
  double gumbel_temperature = 0.5;

  void validate() const {
    if (lambda_i < 0 || lambda_f < 0 || lambda_r < 0)
      throw InvalidArgument("loss weights must be non-negative");
    if (!(p_plus > 0 && p_plus < 1)) throw InvalidArgument("p_plus must lie in (0,1)");
    if (!(tau_min > 0 && tau_min <= tau && tau <= tau_max))
      throw InvalidArgument("tau must satisfy 0 < tau_min <= tau <= tau_max");
    if (!(gumbel_temperature > 0)) throw InvalidArgument("gumbel_temperature must be positive");
  }
};

// Learnable InfoNCE temperature, kept inside [lo, hi] by projection after every update.
class Temperature {
 public:
  Temperature(double init = 0.07, double lo = 0.01, double hi = 0.5)
      : value_(Tensor::from({1}, {init}, true)), lo_(lo), hi_(hi) {
    clamp();
  }
  const Tensor& tensor() const { return value_; }
  double value() const { return value_.item(); }
  void set(double v) {
    value_.mutable_data()[0] = v;
    clamp();
  }
  void clamp() {
    auto v = value_.mutable_data();
    v[0] = std::clamp(v[0], lo_, hi_);
  }

 private:
  Tensor value_;
  double lo_, hi_;
};

// Symmetric InfoNCE: mean_i -log softmax_row(S/tau)[i,i] + mean_i -log softmax_col(S/tau)[i,i].
inline Tensor infonce(const Tensor& s, const Tensor& tau) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1))
    throw ShapeMismatch("infonce needs a square similarity matrix, got " + nn::shape_str(s.shape()));
  if (!(tau.item() > 0)) throw InvalidArgument("infonce temperature must be positive");
  for (double v : s.data())
    if (!std::isfinite(v)) throw InvalidArgument("infonce: non-finite similarity");
  auto logits = nn::div_by_scalar(s, tau);
  auto rows = nn::mean(nn::diag(nn::log_softmax_rows(logits)));
  auto cols = nn::mean(nn::diag(nn::log_softmax_rows(nn::transpose(logits))));
  return nn::mul_scalar(nn::add(rows, cols), -1.0);
}

inline Tensor infonce(const Tensor& s, double tau) { return infonce(s, Tensor::from({1}, {tau})); }

// Mask-weighted average of feature rows: out[b] = sum_p m[b,p] f[p] / sum_p m[b,p]. A mask row
// summing to exactly zero falls back to the unweighted mean of the features.
inline Tensor masked_average(const Tensor& masks, const Tensor& features) {
  if (masks.rank() != 2 || features.rank() != 2 || masks.dim(1) != features.dim(0))
    throw ShapeMismatch("masked_average: masks " + nn::shape_str(masks.shape()) + " vs features " +
                        nn::shape_str(features.shape()));
  const int b = masks.dim(0), p = masks.dim(1);
  std::vector<double> fill(masks.numel(), 0.0);
  bool any_empty = false;
  for (int r = 0; r < b; ++r) {
    double s = 0.0;
    for (int c = 0; c < p; ++c) s += masks[static_cast<std::size_t>(r) * p + c];
    if (s == 0.0) {
      any_empty = true;
      std::fill_n(fill.begin() + static_cast<std::ptrdiff_t>(r) * p, p, 1.0);
    }
  }
  const Tensor m = any_empty ? nn::add(masks, Tensor::from({b, p}, std::move(fill))) : masks;
  return nn::div_rows(nn::matmul(m, features), nn::sum_rows(m));
}

// Area-weighted downsampling of a full-resolution mask [H,W] to a grid [gh,gw]: each cell is the
// mean of the pixels it covers. Used when masks arrive at image resolution.
inline std::vector<double> downsample_area(std::span<const double> mask, int h, int w, int gh, int gw) {
  if (mask.size() != static_cast<std::size_t>(h) * w) throw ShapeMismatch("downsample_area size");
  if (h % gh || w % gw) throw ShapeMismatch("downsample_area: grid must divide the mask");
  const int ky = h / gh, kx = w / gw;
  std::vector<double> out(static_cast<std::size_t>(gh) * gw, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      out[static_cast<std::size_t>(r / ky) * gw + c / kx] += mask[static_cast<std::size_t>(r) * w + c];
  for (auto& v : out) v /= ky * kx;
  return out;
}

// Feature-level similarity matrix S^F[i,j] = <normalize(pool(V_i; M_ij)), A_j>.
// grid_masks[i]: [B, P] masks of image i conditioned on every audio j, at feature-grid resolution.
inline Tensor feature_similarity(const std::vector<Tensor>& grid_masks,
                                 const std::vector<Tensor>& visual_grids, const Tensor& audio) {
  const int b = audio.dim(0);
  if (static_cast<int>(grid_masks.size()) != b || static_cast<int>(visual_grids.size()) != b)
    throw ShapeMismatch("feature_similarity: batch size mismatch");
  std::vector<Tensor> rows;
  rows.reserve(b);
  for (int i = 0; i < b; ++i) {
    if (grid_masks[i].dim(0) != b) throw ShapeMismatch("feature_similarity: mask rows != batch");
    auto pooled = nn::l2_normalize_rows(masked_average(grid_masks[i], visual_grids[i]));  // [B, D]
    rows.push_back(nn::reshape(nn::sum_rows(nn::mul(pooled, audio)), {1, b}));
  }
  return nn::concat_rows(rows);
}

inline Tensor feature_level_loss(const std::vector<Tensor>& grid_masks,
                                 const std::vector<Tensor>& visual_grids, const Tensor& audio,
                                 const Tensor& tau) {
  return infonce(feature_similarity(grid_masks, visual_grids, audio), tau);
}

// sum_i | mean(M_ii) - p_plus |; diag_masks: [B, N] soft masks, one row per sample.
inline Tensor area_loss(const Tensor& diag_masks, double p_plus) {
  if (diag_masks.rank() != 2) throw ShapeMismatch("area_loss expects [B, N]");
  const double n = diag_masks.dim(1);
  auto means = nn::mul_scalar(nn::sum_rows(diag_masks), 1.0 / n);
  return nn::sum(nn::abs(nn::add_scalar(means, -p_plus)));
}

// Image-level similarity: every positive-pair mask is binarised (straight-through Gumbel), applied
// to its image and the masked image re-encoded once by the frozen visual encoder, so there are
// exactly B encoder passes. diag_logits: [B, S*S] full-resolution logits of M_ii; noise: [B, S*S]
// logistic noise. With hard = false the relaxed sample is used (for gradient checks).
inline Tensor image_similarity(const model::VisualEncoder& encoder, const std::vector<Tensor>& images,
                               const Tensor& diag_logits, std::span<const double> noise,
                               const Tensor& audio, double gumbel_temperature, bool hard = true,
                               int* encoder_passes = nullptr) {
  const int b = audio.dim(0);
  if (static_cast<int>(images.size()) != b || diag_logits.dim(0) != b)
    throw ShapeMismatch("image_similarity: batch size mismatch");
  if (b < 2) throw InvalidArgument("image-level loss needs a batch of at least 2");
  const int n = diag_logits.dim(1);
  if (noise.size() != static_cast<std::size_t>(b) * n) throw ShapeMismatch("image_similarity: noise size");
  std::vector<Tensor> rows;
  rows.reserve(b);
  for (int i = 0; i < b; ++i) {
    auto logits = nn::slice_rows(diag_logits, i, 1);
    auto m = nn::gumbel_sigmoid(logits, noise.subspan(static_cast<std::size_t>(i) * n, n),
                                gumbel_temperature, hard);
    const auto& img = images[i];
    if (img.numel() != 3 * static_cast<std::size_t>(n)) throw ShapeMismatch("image_similarity: image size");
    auto v = encoder.encode_masked(img, m);
    if (encoder_passes) ++*encoder_passes;
    rows.push_back(nn::matmul_nt(v.global, audio));  // [1, B]
  }
  return nn::concat_rows(rows);
}

struct LossBreakdown {
  Tensor total;
  double image = 0.0;
  double feature = 0.0;
  double area = 0.0;
  double tau = 0.0;

  nlohmann::json to_json() const {
    return {{"total", total.item()}, {"image", image}, {"feature", feature}, {"area", area}, {"tau", tau}};
  }
};

// L = lambda_i L_i + lambda_f L_f + lambda_r L_r. A term with zero weight is not evaluated.
inline LossBreakdown total_loss(const LossWeights& w, const Tensor& image_sim, const Tensor& feature_sim,
                                const Tensor& diag_masks, const Tensor& tau) {
  LossBreakdown out;
  Tensor total = Tensor::scalar(0.0);
  if (w.lambda_i != 0.0) {
    auto li = infonce(image_sim, tau);
    out.image = li.item();
    total = nn::add(total, nn::mul_scalar(li, w.lambda_i));
  }
  if (w.lambda_f != 0.0) {
    auto lf = infonce(feature_sim, tau);
    out.feature = lf.item();
    total = nn::add(total, nn::mul_scalar(lf, w.lambda_f));
  }
  if (w.lambda_r != 0.0) {
    auto lr = area_loss(diag_masks, w.p_plus);
    out.area = lr.item();
    total = nn::add(total, nn::mul_scalar(lr, w.lambda_r));
  }
  out.total = total;
  out.tau = tau.item();
  return out;
}

}  // namespace colseg::losses
