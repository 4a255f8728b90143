#include "regcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "regcd/error.hpp"
#include "regcd/io.hpp"

namespace regcd {

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  if (pred.shape() != gt.shape() || pred.shape() != valid.shape())
    throw ValidationError("confusion: shapes " + shape_str(pred.shape()) + ", " + shape_str(gt.shape()) + ", " +
                          shape_str(valid.shape()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0) continue;
    const bool p = pred[i] >= 0.5, g = gt[i] >= 0.5;
    if (p && g)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

namespace {
double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }
}  // namespace

ChangeMetrics change_metrics(const ConfusionCounts& c) {
  ChangeMetrics m;
  const double tp = c.tp, fp = c.fp, fn = c.fn, tn = c.tn;
  m.oa = ratio(tp + tn, tp + fp + fn + tn);
  m.precision_change = ratio(tp, tp + fp);
  m.recall_change = ratio(tp, tp + fn);
  m.f1_change = ratio(2 * tp, 2 * tp + fp + fn);
  m.f1_nochange = ratio(2 * tn, 2 * tn + fp + fn);
  m.iou_change = ratio(tp, tp + fp + fn);
  m.iou_nochange = ratio(tn, tn + fp + fn);
  m.mf1 = 0.5 * (m.f1_change + m.f1_nochange);
  m.miou = 0.5 * (m.iou_change + m.iou_nochange);
  return m;
}

EPEStats flow_epe(const DenseFlow& pred, const DenseFlow& gt) {
  if (pred.uv.shape() != gt.uv.shape()) throw ValidationError("flow_epe: grids differ");
  const std::size_t plane = gt.valid.size();
  EPEStats s;
  double sum = 0.0;
  std::int64_t b1 = 0, b3 = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (gt.valid[p] == 0.0 || pred.valid[p] == 0.0) continue;
    const double e = std::hypot(pred.uv[p] - gt.uv[p], pred.uv[plane + p] - gt.uv[plane + p]);
    sum += e;
    b1 += e < 1.0;
    b3 += e < 3.0;
    ++s.count;
  }
  if (s.count == 0) throw ValidationError("flow_epe: no valid pixels");
  s.mean = sum / s.count;
  s.below1 = static_cast<double>(b1) / s.count;
  s.below3 = static_cast<double>(b3) / s.count;
  return s;
}

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

// 3x5 glyphs for digits, '.', 'p' and 'x'.
const char* glyph(char ch) {
  switch (ch) {
    case '0': return "111101101101111";
    case '1': return "010110010010111";
    case '2': return "111001111100111";
    case '3': return "111001111001111";
    case '4': return "101101111001001";
    case '5': return "111100111001111";
    case '6': return "111100111101111";
    case '7': return "111001001001001";
    case '8': return "111101111101111";
    case '9': return "111101111001111";
    case '.': return "000000000000010";
    case 'p': return "000111101111100";
    case 'x': return "000101010101000";
    default: return "000000000000000";
  }
}

void stamp(Tensor& img, const std::string& text, int x0, int y0) {
  const int h = img.dim(1), w = img.dim(2);
  for (std::size_t n = 0; n < text.size(); ++n) {
    const char* g = glyph(text[n]);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) {
        if (g[r * 3 + c] != '1') continue;
        const int x = x0 + static_cast<int>(n) * 4 + c, y = y0 + r;
        if (x < w && y < h)
          for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = 0.0;
      }
  }
}

Tensor as_rgb(const Tensor& t) {
  if (t.dim(0) == 3) return t;
  Tensor out({3, t.dim(1), t.dim(2)});
  const std::size_t plane = t.size();
  for (int c = 0; c < 3; ++c) std::copy(t.data(), t.data() + plane, out.data() + c * plane);
  return out;
}

}  // namespace

Tensor flow_to_color(const Tensor& uv, double& max_magnitude) {
  const int h = uv.dim(1), w = uv.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (max_magnitude <= 0.0) {
    max_magnitude = 0.0;
    for (std::size_t p = 0; p < plane; ++p) max_magnitude = std::max(max_magnitude, std::hypot(uv[p], uv[plane + p]));
  }
  Tensor img({3, h, w});
  for (std::size_t p = 0; p < plane; ++p) {
    const double mag = std::hypot(uv[p], uv[plane + p]);
    double hue = std::atan2(uv[plane + p], uv[p]) / (2 * std::numbers::pi);
    if (hue < 0) hue += 1.0;
    const double sat = max_magnitude > 0 ? std::min(1.0, mag / max_magnitude) : 0.0;
    double rgb[3];
    hsv_to_rgb(hue, sat, 1.0, rgb);
    for (int c = 0; c < 3; ++c) img[c * plane + p] = rgb[c];
  }
  return img;
}

Tensor render_panel(const Panel& p) {
  const int h = p.image_a.dim(1), w = p.image_a.dim(2);
  double gmax = 0.0;
  const Tensor gt_color = flow_to_color(p.gt_flow, gmax);
  double pmax = gmax;
  const Tensor pred_color = flow_to_color(p.pred_flow, pmax);
  Tensor overlay = as_rgb(p.image_a);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t q = 0; q < plane; ++q) {
    if (p.pred_mask[q] < 0.5) continue;
    overlay[q] = 0.5 * overlay[q] + 0.5;
    overlay[plane + q] *= 0.5;
    overlay[2 * plane + q] *= 0.5;
  }
  Tensor flow_gt = gt_color;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fpx", gmax);
  stamp(flow_gt, buf, 1, 1);
  const Tensor tiles[] = {as_rgb(p.image_a), as_rgb(p.image_b), flow_gt,           pred_color,
                          as_rgb(p.gt_mask), as_rgb(p.pred_mask), overlay};
  const int n = 7, gap = 2;
  Tensor strip({3, h, n * w + (n - 1) * gap}, 1.0);
  for (int t = 0; t < n; ++t)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) strip.at(c, y, t * (w + gap) + x) = std::clamp(tiles[t].at(c, y, x), 0.0, 1.0);
  return strip;
}

void visualize(const Panel& panel, const std::filesystem::path& out_path) { write_png(out_path, render_panel(panel)); }

}  // namespace regcd
