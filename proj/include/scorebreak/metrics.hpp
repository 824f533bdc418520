#ifndef SCOREBREAK_METRICS_HPP
#define SCOREBREAK_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorebreak/target.hpp"
#include "scorebreak/tensor.hpp"

// Damage and quality metrics. Probability maps and binary ground truth are
// single-channel Images with values in [0, 1]; class maps are LabelMaps.
namespace scorebreak {

namespace detail {

inline void require_map_pair(const Image& pred, const Image& gt, const char* what) {
  if (pred.channels() != 1 || gt.channels() != 1) throw Error(std::string(what) + ": expected single-channel maps");
  require_same_shape(pred, gt, what);
  if (pred.empty()) throw Error(std::string(what) + ": empty map");
}

inline bool is_fg(double g) { return g >= 0.5; }

// Machine epsilon, the usual guard in the structure/alignment measures.
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

}  // namespace detail

inline double mae(const Image& pred, const Image& gt) {
  detail::require_map_pair(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // a constant map; value is 0 by convention
};

/// Pearson correlation over pixels (two-pass).
inline Correlation correlation(const Image& pred, const Image& gt) {
  detail::require_map_pair(pred, gt, "cc");
  const double n = static_cast<double>(pred.size());
  double mp = 0.0;
  double mg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mg += gt[i];
  }
  mp /= n;
  mg /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp;
    const double b = gt[i] - mg;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

inline double cc(const Image& pred, const Image& gt) { return correlation(pred, gt).value; }

struct MiouAcc {
  double miou = 0.0;
  double acc = 0.0;
};

/// Mean IoU over the classes present in gt or pred, and pixel accuracy.
inline MiouAcc miou_acc(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (pred.height != gt.height || pred.width != gt.width) throw Error("miou_acc: shape mismatch");
  if (gt.size() == 0) throw Error("miou_acc: empty map");
  if (num_classes < 1) throw Error("miou_acc: num_classes must be >= 1");
  const auto K = static_cast<std::size_t>(num_classes);
  std::vector<long> inter(K, 0);
  std::vector<long> in_pred(K, 0);
  std::vector<long> in_gt(K, 0);
  long correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred.labels[i];
    const int g = gt.labels[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) throw Error("miou_acc: class id out of range");
    ++in_pred[static_cast<std::size_t>(p)];
    ++in_gt[static_cast<std::size_t>(g)];
    if (p == g) {
      ++inter[static_cast<std::size_t>(p)];
      ++correct;
    }
  }
  double iou_sum = 0.0;
  int present = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const long uni = in_pred[k] + in_gt[k] - inter[k];
    if (uni == 0) continue;
    iou_sum += static_cast<double>(inter[k]) / static_cast<double>(uni);
    ++present;
  }
  return {iou_sum / present, static_cast<double>(correct) / static_cast<double>(gt.size())};
}

namespace detail {

inline double s_object(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double sd = 0.0;
  if (v.size() > 1) {
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
  }
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

inline double region_ssim(const Image& pred, const Image& gt, int r0, int r1, int c0, int c1) {
  const double n = static_cast<double>(r1 - r0) * (c1 - c0);
  double x = 0.0;
  double y = 0.0;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      x += pred.at(0, r, c);
      y += is_fg(gt.at(0, r, c)) ? 1.0 : 0.0;
    }
  }
  x /= n;
  y /= n;
  double sx = 0.0;
  double sy = 0.0;
  double sxy = 0.0;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      const double a = pred.at(0, r, c) - x;
      const double b = (is_fg(gt.at(0, r, c)) ? 1.0 : 0.0) - y;
      sx += a * a;
      sy += b * b;
      sxy += a * b;
    }
  }
  const double denom = n - 1.0 + kEps;
  sx /= denom;
  sy /= denom;
  sxy /= denom;
  const double alpha = 4.0 * x * y * sxy;
  const double beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

/// Structure measure: alpha-weighted object and region similarity.
inline double s_measure(const Image& pred, const Image& gt, double alpha = 0.5) {
  detail::require_map_pair(pred, gt, "s_measure");
  const int h = gt.height();
  const int w = gt.width();
  const double area = static_cast<double>(h) * w;
  double pred_mean = 0.0;
  double fg = 0.0;
  double cy_sum = 0.0;
  double cx_sum = 0.0;
  std::vector<double> fg_vals;
  std::vector<double> bg_vals;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double p = pred.at(0, r, c);
      pred_mean += p;
      if (detail::is_fg(gt.at(0, r, c))) {
        fg += 1.0;
        cy_sum += r;
        cx_sum += c;
        fg_vals.push_back(p);
      } else {
        bg_vals.push_back(1.0 - p);
      }
    }
  }
  pred_mean /= area;
  const double gt_mean = fg / area;
  if (fg == 0.0) return 1.0 - pred_mean;
  if (fg == area) return pred_mean;

  const double object = detail::s_object(fg_vals) * gt_mean + detail::s_object(bg_vals) * (1.0 - gt_mean);

  // Quadrant split at the rounded foreground centroid (half to even), with
  // the top-left block inclusive of the centroid row and column.
  const int cy = static_cast<int>(std::nearbyint(cy_sum / fg)) + 1;
  const int cx = static_cast<int>(std::nearbyint(cx_sum / fg)) + 1;
  const double w_lt = static_cast<double>(cx) * cy / area;
  const double w_rt = static_cast<double>(cy) * (w - cx) / area;
  const double w_lb = static_cast<double>(h - cy) * cx / area;
  const double w_rb = 1.0 - w_lt - w_rt - w_lb;
  double region = 0.0;
  auto add = [&](double weight, int r0, int r1, int c0, int c1) {
    if (r1 > r0 && c1 > c0) region += weight * detail::region_ssim(pred, gt, r0, r1, c0, c1);
  };
  add(w_lt, 0, cy, 0, cx);
  add(w_rt, 0, cy, cx, w);
  add(w_lb, cy, h, 0, cx);
  add(w_rb, cy, h, cx, w);
  return std::max(0.0, alpha * object + (1.0 - alpha) * region);
}

/// Enhanced-alignment curve over the 256 thresholds of the 8-bit quantized
/// prediction, highest threshold first.
inline std::array<double, 256> e_measure_curve(const Image& pred, const Image& gt) {
  detail::require_map_pair(pred, gt, "e_measure");
  std::array<long, 256> hist_fg{};
  std::array<long, 256> hist_bg{};
  long gt_fg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int q = static_cast<int>(static_cast<std::uint8_t>(pred[i] * 255.0));
    if (detail::is_fg(gt[i])) {
      ++hist_fg[static_cast<std::size_t>(q)];
      ++gt_fg;
    } else {
      ++hist_bg[static_cast<std::size_t>(q)];
    }
  }
  const double size = static_cast<double>(pred.size());
  const double norm = size - 1.0 + detail::kEps;
  std::array<double, 256> curve{};
  long fg_fg = 0;
  long fg_bg = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    fg_fg += hist_fg[255 - i];
    fg_bg += hist_bg[255 - i];
    const double pred_fg = static_cast<double>(fg_fg + fg_bg);
    const double pred_bg = size - pred_fg;
    double sum = 0.0;
    if (gt_fg == 0) {
      sum = pred_bg;
    } else if (static_cast<double>(gt_fg) == size) {
      sum = pred_fg;
    } else {
      const double bg_fg = static_cast<double>(gt_fg - fg_fg);
      const double bg_bg = pred_bg - bg_fg;
      const double mp = pred_fg / size;
      const double mg = static_cast<double>(gt_fg) / size;
      const std::array<double, 4> parts{static_cast<double>(fg_fg), static_cast<double>(fg_bg), bg_fg, bg_bg};
      const std::array<std::array<double, 2>, 4> comb{{{1.0 - mp, 1.0 - mg},
                                                       {1.0 - mp, -mg},
                                                       {-mp, 1.0 - mg},
                                                       {-mp, -mg}}};
      for (std::size_t k = 0; k < 4; ++k) {
        const double a = comb[k][0];
        const double b = comb[k][1];
        const double align = 2.0 * a * b / (a * a + b * b + detail::kEps);
        sum += (align + 1.0) * (align + 1.0) / 4.0 * parts[k];
      }
    }
    curve[i] = sum / norm;
  }
  return curve;
}

/// Mean enhanced-alignment measure over the threshold sweep.
inline double e_measure(const Image& pred, const Image& gt) {
  const auto curve = e_measure_curve(pred, gt);
  double s = 0.0;
  for (double v : curve) s += v;
  return s / static_cast<double>(curve.size());
}

/// Binary {0, 1} map of a label map (labels > 0 count as foreground).
inline Image binary_map(const LabelMap& labels) {
  Image out(1, labels.height, labels.width);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels.labels[i] > 0 ? 1.0 : 0.0;
  return out;
}

// Metric names as they appear in reports.
inline constexpr const char* kMae = "mae";
inline constexpr const char* kCc = "cc";
inline constexpr const char* kSMeasure = "s_measure";
inline constexpr const char* kEMeasure = "e_measure";
inline constexpr const char* kMiou = "miou";
inline constexpr const char* kAcc = "acc";

/// All applicable metrics for one prediction. Binary tasks get the saliency
/// metrics plus mIoU/ACC; multi-class tasks get mIoU/ACC.
inline std::map<std::string, double> evaluate_prediction(const Image& probs, const LabelMap& gt, int num_classes,
                                                         bool* cc_degenerate = nullptr) {
  std::map<std::string, double> out;
  const LabelMap pred = hard_labels(probs);
  const MiouAcc ma = miou_acc(pred, gt, num_classes);
  out[kMiou] = ma.miou;
  out[kAcc] = ma.acc;
  if (num_classes == 2) {
    const Image p = foreground_probability(probs);
    const Image g = binary_map(gt);
    const Correlation c = correlation(p, g);
    if (cc_degenerate != nullptr) *cc_degenerate = c.degenerate;
    out[kMae] = mae(p, g);
    out[kCc] = c.value;
    out[kSMeasure] = s_measure(p, g);
    out[kEMeasure] = e_measure(p, g);
  }
  return out;
}

struct MetricRow {
  std::string image_id;
  std::map<std::string, double> values;
  bool cc_degenerate = false;
};

/// Per-image metric values plus dataset means.
struct MetricReport {
  std::vector<MetricRow> rows;

  void add(std::string image_id, std::map<std::string, double> values, bool cc_degenerate = false) {
    rows.push_back({std::move(image_id), std::move(values), cc_degenerate});
  }

  [[nodiscard]] std::vector<std::string> metric_names() const {
    std::vector<std::string> names;
    for (const auto& r : rows) {
      for (const auto& [k, v] : r.values) {
        if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
      }
    }
    std::sort(names.begin(), names.end());
    return names;
  }

  [[nodiscard]] std::map<std::string, double> means() const {
    std::map<std::string, double> sum;
    std::map<std::string, int> count;
    for (const auto& r : rows) {
      for (const auto& [k, v] : r.values) {
        sum[k] += v;
        ++count[k];
      }
    }
    for (auto& [k, v] : sum) v /= count[k];
    return sum;
  }

  [[nodiscard]] int degenerate_cc_count() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const MetricRow& r) { return r.cc_degenerate; }));
  }

  void write_csv(std::ostream& out) const {
    const auto names = metric_names();
    out << "image_id";
    for (const auto& n : names) out << ',' << n;
    out << ",cc_degenerate\n";
    out.precision(17);
    for (const auto& r : rows) {
      out << r.image_id;
      for (const auto& n : names) {
        out << ',';
        if (auto it = r.values.find(n); it != r.values.end()) out << it->second;
      }
      out << ',' << (r.cc_degenerate ? 1 : 0) << '\n';
    }
  }

  [[nodiscard]] nlohmann::json summary() const {
    return {{"images", rows.size()}, {"means", means()}, {"degenerate_cc", degenerate_cc_count()}};
  }
};

}  // namespace scorebreak

#endif  // SCOREBREAK_METRICS_HPP
