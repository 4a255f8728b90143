#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "regcd/geometry.hpp"

namespace regcd {

// Change is the positive class; only pixels with valid != 0 are counted.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const noexcept { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt, const Tensor& valid);

// Degenerate ratios (0/0) are reported as 0.
struct ChangeMetrics {
  double oa = 0, precision_change = 0, recall_change = 0;
  double f1_change = 0, f1_nochange = 0, iou_change = 0, iou_nochange = 0;
  double mf1 = 0, miou = 0;
};

ChangeMetrics change_metrics(const ConfusionCounts& c);

struct EPEStats {
  double mean = 0;
  double below1 = 0;
  double below3 = 0;
  std::int64_t count = 0;
};

// Over pixels valid in gt (and in pred.valid); throws on an empty set.
EPEStats flow_epe(const DenseFlow& pred, const DenseFlow& gt);

// HSV color wheel: hue = atan2(v, u), saturation = |w| / max_magnitude, value 1.
// max_magnitude <= 0 uses the per-image maximum, which is written back.
Tensor flow_to_color(const Tensor& uv, double& max_magnitude);

struct Panel {
  Tensor image_a, image_b;
  Tensor gt_flow, pred_flow;  // {2, H, W}
  Tensor gt_mask, pred_mask;  // {1, H, W}
};

// Single PNG strip: A | B | gt flow | predicted flow | gt mask | predicted mask | overlay.
void visualize(const Panel& panel, const std::filesystem::path& out_path);
Tensor render_panel(const Panel& panel);

}  // namespace regcd
