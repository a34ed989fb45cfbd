#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsinet/morphology.hpp"
#include "tsinet/tensor.hpp"

namespace tsinet {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct ScalarMetrics {
  double dice = 0, acc = 0, sen = 0, spe = 0, iou = 0;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// Dice, accuracy, sensitivity, specificity and IoU from counts; a 0/0 ratio is 1.
ScalarMetrics scalar_metrics(const ConfusionCounts& c);

/// Component count of `pred` over that of `gt` (raw ratio, lower is better).
/// Throws UndefinedMetricError when `gt` has no components.
double vascular_connectivity(const BinaryMask& pred, const BinaryMask& gt, int connectivity = 8);

/// Per-pixel minimum over the leading (time) axis of [T,H,W].
template <typename T>
Tensor<T> mip(const Tensor<T>& seq);

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

/// Background from the min-intensity projection (rescaled to 0..200 gray);
/// TP white, FP red, FN green. Without `gt` the prediction is drawn white.
RgbImage render_overlay(const Tensor<float>& projection, const BinaryMask& pred, const BinaryMask* gt);

struct SampleMetrics {
  std::string id;
  ConfusionCounts counts;
  ScalarMetrics scores;
  std::optional<double> vc;  // empty when the ground truth has no components
};

SampleMetrics evaluate_sample(const std::string& id, const BinaryMask& pred, const BinaryMask& gt,
                              int connectivity = 8);

struct MetricsReport {
  double threshold = 0.5;
  int connectivity = 8;
  std::vector<SampleMetrics> samples;

  /// Unweighted mean over samples; vc averaged over samples where it is defined.
  SampleMetrics aggregate() const;
  /// One JSON object per sample followed by an aggregate record.
  std::string to_jsonl() const;
};

}  // namespace tsinet
