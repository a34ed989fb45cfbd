#include "tsinet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tsinet/ops.hpp"

namespace tsinet {

void LossConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("loss weights lambda1/lambda2 must be >= 0");
  if (!(clamp_eps > 0 && clamp_eps <= 1e-3)) throw ConfigError("clamp_eps must be in (0, 1e-3]");
  if (!(dice_eps > 0)) throw ConfigError("dice_eps must be > 0");
}

template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& gt, double clamp_eps) {
  require_same_shape(pred.shape(), gt.shape(), "bce_loss");
  const Tensor<T>& p = pred.value();
  const std::size_t n = p.size();
  if (n == 0) throw ShapeError("bce_loss: empty input");
  auto clampp = [clamp_eps](double v) { return std::clamp(v, clamp_eps, 1.0 - clamp_eps); };
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = clampp(double(p[i]));
    const double g = double(gt[i]);
    acc -= g * std::log(pc) + (1.0 - g) * std::log(1.0 - pc);
  }
  const std::size_t pid = pred.id();
  Tensor<T> target = gt;
  return pred.tape().record(
      Tensor<T>(Shape{}, static_cast<T>(acc / double(n))),
      [pid, target, clampp, n](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const Tensor<T>& pv = tape.value(pid);
        Tensor<T>& gp = tape.grad(pid);
        const double scale = double(g[0]) / double(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double pc = clampp(double(pv[i]));
          const double y = double(target[i]);
          gp[i] += static_cast<T>(scale * (-y / pc + (1.0 - y) / (1.0 - pc)));
        }
      },
      pred);
}

template <typename T>
Var<T> dice_loss(const Var<T>& pred, const Tensor<T>& gt, double dice_eps) {
  require_same_shape(pred.shape(), gt.shape(), "dice_loss");
  const Tensor<T>& p = pred.value();
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += double(p[i]) * double(gt[i]);
    sp += double(p[i]);
    sg += double(gt[i]);
  }
  const double num = 2.0 * inter + dice_eps;
  const double den = sp + sg + dice_eps;
  const std::size_t pid = pred.id();
  Tensor<T> target = gt;
  return pred.tape().record(
      Tensor<T>(Shape{}, static_cast<T>(1.0 - num / den)),
      [pid, target, num, den](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& gp = tape.grad(pid);
        const double scale = double(g[0]) / (den * den);
        for (std::size_t i = 0; i < gp.size(); ++i) {
          // d/dp_i of -(num/den) = -(2 g_i den - num) / den^2
          gp[i] += static_cast<T>(-scale * (2.0 * double(target[i]) * den - num));
        }
      },
      pred);
}

template <typename T>
Var<T> sdb_loss(const Var<T>& pred_centerline, const Tensor<T>& skeleton) {
  require_same_shape(pred_centerline.shape(), skeleton.shape(), "sdb_loss");
  const Tensor<T>& p = pred_centerline.value();
  const std::size_t n = p.size();
  if (n == 0) throw ShapeError("sdb_loss: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(p[i]) - double(skeleton[i]);
    acc += d * d;
  }
  const std::size_t pid = pred_centerline.id();
  Tensor<T> target = skeleton;
  return pred_centerline.tape().record(
      Tensor<T>(Shape{}, static_cast<T>(acc / double(n))),
      [pid, target, n](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const Tensor<T>& pv = tape.value(pid);
        Tensor<T>& gp = tape.grad(pid);
        const double scale = 2.0 * double(g[0]) / double(n);
        for (std::size_t i = 0; i < n; ++i) gp[i] += static_cast<T>(scale * (double(pv[i]) - double(target[i])));
      },
      pred_centerline);
}

template <typename T>
Var<T> sdb_loss(const Var<T>& pred_centerline, const BinaryMask& gt_mask) {
  Tensor<T> skel = mask_tensor<T>(skeletonize(gt_mask));
  return sdb_loss(pred_centerline, skel.reshaped(pred_centerline.shape()));
}

template <typename T>
TotalLoss<T> total_loss(const Var<T>& main_pred, const std::optional<Var<T>>& sdb_pred, const Tensor<T>& gt,
                        const Tensor<T>* skeleton, const LossConfig& cfg) {
  cfg.validate();
  TotalLoss<T> out;
  const Var<T> ce = bce_loss(main_pred, gt, cfg.clamp_eps);
  const Var<T> dice = dice_loss(main_pred, gt, cfg.dice_eps);
  out.breakdown.ce = double(ce.value()[0]);
  out.breakdown.dice = double(dice.value()[0]);
  Var<T> total = add(ce, scale(dice, static_cast<T>(cfg.lambda1)));
  if (sdb_pred && skeleton) {
    const Var<T> sdb = sdb_loss(*sdb_pred, *skeleton);
    out.breakdown.sdb = double(sdb.value()[0]);
    total = add(total, scale(sdb, static_cast<T>(cfg.lambda2)));
  }
  out.breakdown.total = out.breakdown.ce + cfg.lambda1 * out.breakdown.dice + cfg.lambda2 * out.breakdown.sdb;
  out.total = total;
  return out;
}

#define TSINET_INSTANTIATE_LOSS(T)                                                                     \
  template Var<T> bce_loss<T>(const Var<T>&, const Tensor<T>&, double);                                \
  template Var<T> dice_loss<T>(const Var<T>&, const Tensor<T>&, double);                               \
  template Var<T> sdb_loss<T>(const Var<T>&, const Tensor<T>&);                                        \
  template Var<T> sdb_loss<T>(const Var<T>&, const BinaryMask&);                                       \
  template TotalLoss<T> total_loss<T>(const Var<T>&, const std::optional<Var<T>>&, const Tensor<T>&,   \
                                      const Tensor<T>*, const LossConfig&);

TSINET_INSTANTIATE_LOSS(float)
TSINET_INSTANTIATE_LOSS(double)

}  // namespace tsinet
