#ifndef SCOREBREAK_TARGET_HPP
#define SCOREBREAK_TARGET_HPP

#include <algorithm>
#include <cmath>

#include "scorebreak/tensor.hpp"

namespace scorebreak {

/// Black-box segmenter f_v: returns per-pixel probabilities.
///
/// Binary tasks return one foreground-probability channel; multi-class tasks
/// return one channel per class. Safe for concurrent predict() calls.
class QueryTarget {
 public:
  virtual ~QueryTarget() = default;
  [[nodiscard]] virtual Image predict(const Image& x) const = 0;
  [[nodiscard]] virtual int num_classes() const = 0;
};

struct LossGradient {
  double loss = 0.0;
  Image gradient;
};

/// Differentiable segmenter loss, for white-box baselines.
class GradientProvider {
 public:
  virtual ~GradientProvider() = default;
  [[nodiscard]] virtual LossGradient loss_gradient(const Image& x, const LabelMap& y) const = 0;
};

/// Segmentation loss of a probability map: binary cross-entropy for one
/// channel, per-pixel cross-entropy for class channels; mean over pixels.
inline double segmentation_loss(const Image& probs, const LabelMap& y) {
  if (probs.height() != y.height || probs.width() != y.width) throw Error("segmentation_loss: shape mismatch");
  constexpr double kFloor = 1e-7;
  double total = 0.0;
  for (int r = 0; r < y.height; ++r) {
    for (int c = 0; c < y.width; ++c) {
      const int l = y.at(r, c);
      if (probs.channels() == 1) {
        const double p = std::clamp(probs.at(0, r, c), kFloor, 1.0 - kFloor);
        total -= l == 1 ? std::log(p) : std::log(1.0 - p);
      } else {
        if (l < 0 || l >= probs.channels()) throw Error("segmentation_loss: label outside class channels");
        total -= std::log(std::clamp(probs.at(l, r, c), kFloor, 1.0));
      }
    }
  }
  return total / static_cast<double>(y.size());
}

/// Hard labels from a probability map (0.5 threshold or argmax).
inline LabelMap hard_labels(const Image& probs) {
  LabelMap out(probs.height(), probs.width());
  for (int r = 0; r < probs.height(); ++r) {
    for (int c = 0; c < probs.width(); ++c) {
      if (probs.channels() == 1) {
        out.at(r, c) = probs.at(0, r, c) >= 0.5 ? 1 : 0;
      } else {
        int best = 0;
        for (int k = 1; k < probs.channels(); ++k) {
          if (probs.at(k, r, c) > probs.at(best, r, c)) best = k;
        }
        out.at(r, c) = best;
      }
    }
  }
  return out;
}

/// Foreground probability of a binary prediction (channel 0), or
/// 1 - p(background) for multi-class maps.
inline Image foreground_probability(const Image& probs) {
  Image out(1, probs.height(), probs.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = probs.channels() == 1 ? probs[i] : 1.0 - probs[i];
  }
  return out;
}

}  // namespace scorebreak

#endif  // SCOREBREAK_TARGET_HPP
