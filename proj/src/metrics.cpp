#include "tsinet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace tsinet {

namespace {

double ratio(double num, double den) { return den == 0 ? 1.0 : num / den; }

nlohmann::json record(const SampleMetrics& s, const MetricsReport& r, const char* kind) {
  nlohmann::json j{{"kind", kind},
                   {"sample", s.id},
                   {"threshold", r.threshold},
                   {"connectivity", r.connectivity},
                   {"dice", s.scores.dice},
                   {"acc", s.scores.acc},
                   {"sen", s.scores.sen},
                   {"spe", s.scores.spe},
                   {"iou", s.scores.iou},
                   {"vc_scale", "raw_ratio"}};
  j["vc"] = s.vc ? nlohmann::json(*s.vc) : nlohmann::json(nullptr);
  if (std::string(kind) == "sample") {
    j["tp"] = s.counts.tp;
    j["fp"] = s.counts.fp;
    j["fn"] = s.counts.fn;
    j["tn"] = s.counts.tn;
  }
  return j;
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw ShapeError("confusion: prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                     " vs ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
  }
  ConfusionCounts c;
  const auto& p = pred.bits();
  const auto& g = gt.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]) (g[i] ? c.tp : c.fp)++;
    else (g[i] ? c.fn : c.tn)++;
  }
  return c;
}

ScalarMetrics scalar_metrics(const ConfusionCounts& c) {
  const double tp = double(c.tp), fp = double(c.fp), fn = double(c.fn), tn = double(c.tn);
  ScalarMetrics m;
  m.dice = ratio(2 * tp, 2 * tp + fp + fn);
  m.acc = ratio(tp + tn, tp + tn + fp + fn);
  m.sen = ratio(tp, tp + fn);
  m.spe = ratio(tn, tn + fp);
  m.iou = ratio(tp, tp + fp + fn);
  return m;
}

double vascular_connectivity(const BinaryMask& pred, const BinaryMask& gt, int connectivity) {
  const std::size_t gt_components = component_count(gt, connectivity);
  if (gt_components == 0) throw UndefinedMetricError("VC is undefined: ground truth has no components");
  return double(component_count(pred, connectivity)) / double(gt_components);
}

template <typename T>
Tensor<T> mip(const Tensor<T>& seq) {
  if (seq.rank() != 3 || seq.dim(0) == 0) throw ShapeError("mip: expected [T,H,W] with T >= 1, got " + to_string(seq.shape()));
  const std::size_t steps = seq.dim(0), plane = seq.dim(1) * seq.dim(2);
  Tensor<T> out({seq.dim(1), seq.dim(2)});
  std::copy_n(seq.raw(), plane, out.raw());
  for (std::size_t t = 1; t < steps; ++t) {
    const T* frame = seq.raw() + t * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] = std::min(out[i], frame[i]);
  }
  return out;
}

template Tensor<float> mip(const Tensor<float>&);
template Tensor<double> mip(const Tensor<double>&);

RgbImage render_overlay(const Tensor<float>& projection, const BinaryMask& pred, const BinaryMask* gt) {
  const std::size_t H = pred.height(), W = pred.width();
  if (projection.size() != H * W) throw ShapeError("render_overlay: projection does not match mask size");
  if (gt && (gt->height() != H || gt->width() != W)) throw ShapeError("render_overlay: mask sizes differ");
  float lo = projection[0], hi = projection[0];
  for (std::size_t i = 0; i < projection.size(); ++i) {
    lo = std::min(lo, projection[i]);
    hi = std::max(hi, projection[i]);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  RgbImage img{H, W, std::vector<std::uint8_t>(H * W * 3)};
  for (std::size_t i = 0; i < H * W; ++i) {
    std::uint8_t r, g, b;
    const bool p = pred[i];
    const bool t = gt ? (*gt)[i] : p;
    if (p && t) {
      r = g = b = 255;
    } else if (p) {
      r = 255, g = 0, b = 0;
    } else if (t) {
      r = 0, g = 255, b = 0;
    } else {
      // Keep the background below pure white so TP pixels stay distinguishable.
      const auto v = static_cast<std::uint8_t>(std::lround(200.0f * (projection[i] - lo) / span));
      r = g = b = v;
    }
    img.pixels[3 * i] = r;
    img.pixels[3 * i + 1] = g;
    img.pixels[3 * i + 2] = b;
  }
  return img;
}

SampleMetrics evaluate_sample(const std::string& id, const BinaryMask& pred, const BinaryMask& gt, int connectivity) {
  SampleMetrics s;
  s.id = id;
  s.counts = confusion(pred, gt);
  s.scores = scalar_metrics(s.counts);
  if (component_count(gt, connectivity) > 0) s.vc = vascular_connectivity(pred, gt, connectivity);
  return s;
}

SampleMetrics MetricsReport::aggregate() const {
  SampleMetrics agg;
  agg.id = "mean";
  if (samples.empty()) return agg;
  double vc_sum = 0;
  std::size_t vc_n = 0;
  for (const auto& s : samples) {
    agg.counts.tp += s.counts.tp;
    agg.counts.fp += s.counts.fp;
    agg.counts.fn += s.counts.fn;
    agg.counts.tn += s.counts.tn;
    agg.scores.dice += s.scores.dice;
    agg.scores.acc += s.scores.acc;
    agg.scores.sen += s.scores.sen;
    agg.scores.spe += s.scores.spe;
    agg.scores.iou += s.scores.iou;
    if (s.vc) {
      vc_sum += *s.vc;
      ++vc_n;
    }
  }
  const double n = double(samples.size());
  agg.scores.dice /= n;
  agg.scores.acc /= n;
  agg.scores.sen /= n;
  agg.scores.spe /= n;
  agg.scores.iou /= n;
  if (vc_n) agg.vc = vc_sum / double(vc_n);
  return agg;
}

std::string MetricsReport::to_jsonl() const {
  std::string out;
  for (const auto& s : samples) out += record(s, *this, "sample").dump() + "\n";
  nlohmann::json agg = record(aggregate(), *this, "aggregate");
  agg["count"] = samples.size();
  out += agg.dump() + "\n";
  return out;
}

}  // namespace tsinet
