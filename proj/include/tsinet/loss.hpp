#pragma once

#include <optional>

#include "tsinet/morphology.hpp"
#include "tsinet/tape.hpp"

namespace tsinet {

struct LossConfig {
  double lambda1 = 1.0;     // dice weight
  double lambda2 = 1.0;     // SDB weight
  double clamp_eps = 1e-7;  // probability clamp for the logarithms
  double dice_eps = 1e-5;   // dice smoothing
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double ce = 0, dice = 0, sdb = 0, total = 0;
};

/// Pixel-mean binary cross-entropy on probabilities, p clamped to
/// [clamp_eps, 1-clamp_eps]. The gradient is evaluated at the clamped p so it
/// never vanishes on saturated pixels.
template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& gt, double clamp_eps = 1e-7);

/// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), soft.
template <typename T>
Var<T> dice_loss(const Var<T>& pred, const Tensor<T>& gt, double dice_eps = 1e-5);

/// Pixel-mean squared error against a precomputed centerline target.
template <typename T>
Var<T> sdb_loss(const Var<T>& pred_centerline, const Tensor<T>& skeleton);

/// Skeletonizes `gt_mask` and applies the tensor overload.
template <typename T>
Var<T> sdb_loss(const Var<T>& pred_centerline, const BinaryMask& gt_mask);

template <typename T>
struct TotalLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

/// ce + lambda1 * dice + lambda2 * sdb. Without `sdb_pred` (or skeleton) the SDB term is 0.
template <typename T>
TotalLoss<T> total_loss(const Var<T>& main_pred, const std::optional<Var<T>>& sdb_pred, const Tensor<T>& gt,
                        const Tensor<T>* skeleton, const LossConfig& cfg);

/// Mask as a [1,H,W] tensor of 0/1.
template <typename T>
Tensor<T> mask_tensor(const BinaryMask& m) {
  Tensor<T> t({1, m.height(), m.width()});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i] ? T{1} : T{0};
  return t;
}

}  // namespace tsinet
