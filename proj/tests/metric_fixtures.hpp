#ifndef SCOREBREAK_METRIC_FIXTURES_HPP
#define SCOREBREAK_METRIC_FIXTURES_HPP

#include <cmath>
#include <string>
#include <vector>

#include "scorebreak/tensor.hpp"

// Brute-force metric oracles and frozen S/E reference values shared by the
// unit tests and the acceptance binary.
namespace scorebreak::testing {

inline double oracle_mae(const Image& p, const Image& g) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(static_cast<long double>(p[i]) - g[i]);
  return static_cast<double>(s / p.size());
}

// Sample covariance over the product of sample standard deviations.
inline double oracle_cc(const Image& p, const Image& g) {
  const long double n = p.size();
  long double mp = 0, mg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mg += g[i];
  }
  mp /= n;
  mg /= n;
  long double cov = 0, vp = 0, vg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cov += (p[i] - mp) * (g[i] - mg);
    vp += (p[i] - mp) * (p[i] - mp);
    vg += (g[i] - mg) * (g[i] - mg);
  }
  cov /= n - 1;
  vp /= n - 1;
  vg /= n - 1;
  return static_cast<double>(cov / (std::sqrt(vp) * std::sqrt(vg)));
}

struct OracleMiouAcc {
  double miou;
  double acc;
};

inline OracleMiouAcc oracle_miou_acc(const LabelMap& pred, const LabelMap& gt, int k) {
  std::vector<std::vector<long>> cm(k, std::vector<long>(k, 0));  // cm[gt][pred]
  for (std::size_t i = 0; i < gt.size(); ++i) ++cm[gt.labels[i]][pred.labels[i]];
  double iou = 0;
  int present = 0;
  long diag = 0;
  for (int c = 0; c < k; ++c) {
    long row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    diag += cm[c][c];
    const long uni = row + col - cm[c][c];
    if (uni > 0) {
      iou += static_cast<double>(cm[c][c]) / uni;
      ++present;
    }
  }
  return {iou / present, static_cast<double>(diag) / gt.size()};
}

struct SeFixture {
  std::string name;
  Image pred;
  Image gt;
  double s_ref;
  double e_ref;  // mean over the 256-threshold curve
};

// Values produced once by the py_sod_metrics reference (Smeasure / Emeasure,
// normalize=False) on the maps built below and frozen here.
inline std::vector<SeFixture> se_fixtures() {
  const int H = 12, W = 10;
  Image ell(1, H, W), rect(1, H, W), smooth(1, H, W), wave(1, H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      ell.at(0, r, c) = (r - 5) * (r - 5) / 16.0 + (c - 4) * (c - 4) / 9.0 <= 1.0 ? 1.0 : 0.0;
      rect.at(0, r, c) = r >= 1 && r < 5 && c >= 6 && c < 9 ? 1.0 : 0.0;
      smooth.at(0, r, c) = ((r * 7 + c * 3) % 11) / 10.0;
      wave.at(0, r, c) = 0.5 + 0.45 * std::sin(0.7 * r) * std::cos(0.9 * c);
    }
  }
  Image inverted = ell, blurred = rect;
  for (std::size_t i = 0; i < ell.size(); ++i) {
    inverted[i] = 1.0 - ell[i];
    blurred[i] = std::clamp(rect[i] * 0.8 + 0.1 * smooth[i], 0.0, 1.0);
  }
  return {
      {"ellipse_exact", ell, ell, 0.9999999999999973, 1.0054490546218482},
      {"ellipse_inverted", inverted, ell, 0.0, 0.0009847689075630252},
      {"ellipse_uniform_half", Image(1, H, W, 0.5), ell, 0.39999999999999986, 0.25210084033613445},
      {"ellipse_smooth", smooth, ell, 0.31157334159830274, 0.41445125392798343},
      {"rect_wave", wave, rect, 0.42015615334158934, 0.38361079006697196},
      {"rect_blurred", blurred, rect, 0.9365648077242801, 0.8431341490692779},
      {"empty_gt_smooth", smooth, Image(1, H, W, 0.0), 0.5025, 0.5056460084033613},
      {"full_gt_wave", wave, Image(1, H, W, 1.0), 0.5085714568392543, 0.5126050420168067},
  };
}

}  // namespace scorebreak::testing

#endif
