#ifndef SCOREBREAK_ORACLE_HPP
#define SCOREBREAK_ORACLE_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/schedule.hpp"
#include "scorebreak/tensor.hpp"

namespace scorebreak {

/// Number of condition channels for a task with `num_classes` classes:
/// one channel for binary tasks, one-hot channels otherwise.
inline int condition_channels(int num_classes) {
  if (num_classes < 2) throw Error("num_classes must be >= 2");
  return num_classes == 2 ? 1 : num_classes;
}

/// Condition variable c: a normalized mask in [-0.5, 0.5], or the
/// unconditional sentinel (the constant -1 map).
class ConditionMap {
 public:
  static constexpr double kSentinelValue = -1.0;

  static ConditionMap conditional(Image values) {
    for (double v : values.values()) {
      if (!(v >= -0.5 && v <= 0.5)) throw Error("condition map values must lie in [-0.5, 0.5]");
    }
    return ConditionMap(std::move(values), false);
  }

  static ConditionMap unconditional(int channels, int height, int width) {
    return ConditionMap(Image(channels, height, width, kSentinelValue), true);
  }

  [[nodiscard]] ConditionMap sentinel_like() const {
    return unconditional(values_.channels(), values_.height(), values_.width());
  }

  [[nodiscard]] bool is_sentinel() const { return sentinel_; }
  [[nodiscard]] const Image& values() const { return values_; }
  [[nodiscard]] int channels() const { return values_.channels(); }
  [[nodiscard]] int height() const { return values_.height(); }
  [[nodiscard]] int width() const { return values_.width(); }

 private:
  ConditionMap(Image v, bool sentinel) : values_(std::move(v)), sentinel_(sentinel) {}

  Image values_;
  bool sentinel_ = false;
};

/// Binary {0,1} -> {-0.5,+0.5}; multi-class -> one-hot channels mapped the same way.
inline ConditionMap condition_from_labels(const LabelMap& labels, int num_classes) {
  const int k = condition_channels(num_classes);
  Image v(k, labels.height, labels.width, -0.5);
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int l = labels.at(y, x);
      if (l < 0 || l >= num_classes) throw Error("label " + std::to_string(l) + " outside [0, num_classes)");
      if (k == 1) {
        v.at(0, y, x) = l == 1 ? 0.5 : -0.5;
      } else {
        v.at(l, y, x) = 0.5;
      }
    }
  }
  return ConditionMap::conditional(std::move(v));
}

inline LabelMap labels_from_condition(const ConditionMap& c) {
  if (c.is_sentinel()) throw Error("the unconditional sentinel carries no labels");
  const Image& v = c.values();
  LabelMap out(v.height(), v.width());
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      if (v.channels() == 1) {
        out.at(y, x) = v.at(0, y, x) > 0.0 ? 1 : 0;
      } else {
        int best = 0;
        for (int k = 1; k < v.channels(); ++k) {
          if (v.at(k, y, x) > v.at(best, y, x)) best = k;
        }
        out.at(y, x) = best;
      }
    }
  }
  return out;
}

inline int num_classes_of(const ConditionMap& c) { return c.channels() == 1 ? 2 : c.channels(); }

/// Anything that returns s(x_t, c, t), the score of the diffused density.
///
/// Implementations must accept the unconditional sentinel for `c`, return an
/// image shaped like `x_t`, and be safe for concurrent callers.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;

  [[nodiscard]] virtual Image score(const Image& x_t, const ConditionMap& c, int t) const = 0;

  /// Conditional and unconditional score at the same point. Implementations
  /// may evaluate both in one pass; the default issues two score() calls.
  [[nodiscard]] virtual std::pair<Image, Image> score_pair(const Image& x_t, const ConditionMap& y, int t) const {
    return {score(x_t, y, t), score(x_t, y.sentinel_like(), t)};
  }
};

/// Gaussian mixture with a mean image per component, shared isotropic
/// variance and prior weights. Used as a closed-form verification fixture.
struct GaussianMixtureSpec {
  std::vector<Image> means;
  std::vector<double> weights;
  double variance = 1.0;

  [[nodiscard]] int components() const { return static_cast<int>(means.size()); }

  void validate() const {
    if (means.empty()) throw Error("mixture: needs at least one component");
    if (weights.size() != means.size()) throw Error("mixture: one weight per component required");
    if (!(variance > 0.0)) throw Error("mixture: variance must be > 0");
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw Error("mixture: weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("mixture: weights must sum to 1");
    for (const Image& m : means) require_same_shape(m, means.front(), "mixture means");
  }
};

inline void to_json(nlohmann::json& j, const GaussianMixtureSpec& s) {
  nlohmann::json means = nlohmann::json::array();
  for (const Image& m : s.means) {
    means.push_back({{"shape", {m.channels(), m.height(), m.width()}},
                     {"values", std::vector<double>(m.values().begin(), m.values().end())}});
  }
  j = nlohmann::json{{"means", means}, {"weights", s.weights}, {"variance", s.variance}};
}

inline void from_json(const nlohmann::json& j, GaussianMixtureSpec& s) {
  s = GaussianMixtureSpec{};
  for (const auto& m : j.at("means")) {
    const auto shape = m.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw Error("mixture: mean shape must be [C, H, W]");
    Image img(shape[0], shape[1], shape[2]);
    const auto vals = m.at("values").get<std::vector<double>>();
    if (vals.size() != img.size()) throw Error("mixture: mean value count does not match shape");
    std::copy(vals.begin(), vals.end(), img.values().begin());
    s.means.push_back(std::move(img));
  }
  s.weights = j.at("weights").get<std::vector<double>>();
  s.variance = j.at("variance").get<double>();
  s.validate();
}

namespace detail {

inline double diffused_variance(const GaussianMixtureSpec& spec, double alpha_bar) {
  return alpha_bar * spec.variance + 1.0 - alpha_bar;
}

inline void check_component(const GaussianMixtureSpec& spec, int k) {
  if (k < 0 || k >= spec.components()) throw Error("mixture: unknown class id " + std::to_string(k));
}

/// Posterior component weights at x under the mixture diffused to alpha_bar.
inline std::vector<double> posterior(const GaussianMixtureSpec& spec, const Image& x, double alpha_bar) {
  const double v = diffused_variance(spec, alpha_bar);
  const double s = std::sqrt(alpha_bar);
  std::vector<double> logits(spec.means.size());
  for (std::size_t k = 0; k < spec.means.size(); ++k) {
    require_same_shape(x, spec.means[k], "mixture score");
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - s * spec.means[k][i];
      sq += d * d;
    }
    logits[k] = std::log(spec.weights[k]) - sq / (2.0 * v);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

}  // namespace detail

/// Exact score of N(x; sqrt(ab) mu_k, (ab sigma^2 + 1 - ab) I) at signal fraction ab.
inline Image analytic_conditional_score_at(const GaussianMixtureSpec& spec, const Image& x_t, int class_id,
                                           double alpha_bar) {
  detail::check_component(spec, class_id);
  const Image& mu = spec.means[static_cast<std::size_t>(class_id)];
  require_same_shape(x_t, mu, "analytic_conditional_score");
  const double v = detail::diffused_variance(spec, alpha_bar);
  const double s = std::sqrt(alpha_bar);
  Image out = zeros_like(x_t);
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (s * mu[i] - x_t[i]) / v;
  return out;
}

inline Image analytic_conditional_score(const GaussianMixtureSpec& spec, const Image& x_t, int class_id, int t,
                                        const NoiseSchedule& sched) {
  return analytic_conditional_score_at(spec, x_t, class_id, sched.alpha_bar(t));
}

/// Posterior-weighted sum of component scores (log-sum-exp stabilized).
inline Image analytic_marginal_score_at(const GaussianMixtureSpec& spec, const Image& x_t, double alpha_bar) {
  if (spec.means.empty()) throw Error("mixture: needs at least one component");
  const auto w = detail::posterior(spec, x_t, alpha_bar);
  Image out = zeros_like(x_t);
  for (int k = 0; k < spec.components(); ++k) {
    const Image sk = analytic_conditional_score_at(spec, x_t, k, alpha_bar);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[static_cast<std::size_t>(k)] * sk[i];
  }
  return out;
}

inline Image analytic_marginal_score(const GaussianMixtureSpec& spec, const Image& x_t, int t,
                                     const NoiseSchedule& sched) {
  return analytic_marginal_score_at(spec, x_t, sched.alpha_bar(t));
}

/// Per-pixel class posterior when every pixel independently follows the
/// mixture (component k contributes the pixel's values of mean image k).
/// Returns one probability channel per component.
inline Image pixel_posterior(const GaussianMixtureSpec& spec, const Image& x, double alpha_bar) {
  const int K = spec.components();
  if (K == 0) throw Error("mixture: needs at least one component");
  require_same_shape(x, spec.means.front(), "pixel_posterior");
  const double v = detail::diffused_variance(spec, alpha_bar);
  const double s = std::sqrt(alpha_bar);
  Image out(K, x.height(), x.width());
  std::vector<double> logits(static_cast<std::size_t>(K));
  for (int y = 0; y < x.height(); ++y) {
    for (int xx = 0; xx < x.width(); ++xx) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        double sq = 0.0;
        for (int c = 0; c < x.channels(); ++c) {
          const double d = x.at(c, y, xx) - s * spec.means[static_cast<std::size_t>(k)].at(c, y, xx);
          sq += d * d;
        }
        logits[static_cast<std::size_t>(k)] = std::log(spec.weights[static_cast<std::size_t>(k)]) - sq / (2.0 * v);
        mx = std::max(mx, logits[static_cast<std::size_t>(k)]);
      }
      double total = 0.0;
      for (double& l : logits) {
        l = std::exp(l - mx);
        total += l;
      }
      for (int k = 0; k < K; ++k) out.at(k, y, xx) = logits[static_cast<std::size_t>(k)] / total;
    }
  }
  return out;
}

/// Image-level analytic oracle: the whole sample belongs to one component.
/// A conditional map must encode a single class everywhere.
class AnalyticMixtureOracle final : public ScoreOracle {
 public:
  AnalyticMixtureOracle(GaussianMixtureSpec spec, NoiseSchedule sched)
      : spec_(std::move(spec)), sched_(std::move(sched)) {
    spec_.validate();
  }

  [[nodiscard]] Image score(const Image& x_t, const ConditionMap& c, int t) const override {
    if (c.is_sentinel()) return analytic_marginal_score(spec_, x_t, t, sched_);
    const LabelMap labels = labels_from_condition(c);
    const int k = labels.labels.front();
    for (int l : labels.labels) {
      if (l != k) throw Error("AnalyticMixtureOracle: condition map must encode a single class");
    }
    return analytic_conditional_score(spec_, x_t, k, t, sched_);
  }

  [[nodiscard]] const GaussianMixtureSpec& spec() const { return spec_; }

 private:
  GaussianMixtureSpec spec_;
  NoiseSchedule sched_;
};

/// Pixel-factorized analytic oracle: every pixel is an independent draw from
/// the mixture; a conditional map fixes each pixel's component.
class AnalyticPixelOracle final : public ScoreOracle {
 public:
  AnalyticPixelOracle(GaussianMixtureSpec spec, NoiseSchedule sched)
      : spec_(std::move(spec)), sched_(std::move(sched)) {
    spec_.validate();
  }

  [[nodiscard]] Image score(const Image& x_t, const ConditionMap& c, int t) const override {
    require_same_shape(x_t, spec_.means.front(), "AnalyticPixelOracle");
    const double ab = sched_.alpha_bar(t);
    const double v = detail::diffused_variance(spec_, ab);
    const double s = std::sqrt(ab);
    Image out = zeros_like(x_t);
    if (c.is_sentinel()) {
      const Image post = pixel_posterior(spec_, x_t, ab);
      for (int k = 0; k < spec_.components(); ++k) {
        const Image& mu = spec_.means[static_cast<std::size_t>(k)];
        for (int ch = 0; ch < x_t.channels(); ++ch) {
          for (int y = 0; y < x_t.height(); ++y) {
            for (int x = 0; x < x_t.width(); ++x) {
              out.at(ch, y, x) += post.at(k, y, x) * (s * mu.at(ch, y, x) - x_t.at(ch, y, x)) / v;
            }
          }
        }
      }
      return out;
    }
    const LabelMap labels = labels_from_condition(c);
    for (int y = 0; y < x_t.height(); ++y) {
      for (int x = 0; x < x_t.width(); ++x) {
        const int k = labels.at(y, x);
        detail::check_component(spec_, k);
        const Image& mu = spec_.means[static_cast<std::size_t>(k)];
        for (int ch = 0; ch < x_t.channels(); ++ch) {
          out.at(ch, y, x) = (s * mu.at(ch, y, x) - x_t.at(ch, y, x)) / v;
        }
      }
    }
    return out;
  }

  [[nodiscard]] const GaussianMixtureSpec& spec() const { return spec_; }

 private:
  GaussianMixtureSpec spec_;
  NoiseSchedule sched_;
};

/// Mixture whose components are constant images with per-channel means,
/// the usual shape for a per-pixel texture model.
inline GaussianMixtureSpec constant_mixture(const std::vector<std::vector<double>>& channel_means,
                                            const std::vector<double>& weights, double variance, int height,
                                            int width) {
  GaussianMixtureSpec spec;
  for (const auto& m : channel_means) {
    Image img(static_cast<int>(m.size()), height, width);
    for (int c = 0; c < img.channels(); ++c) {
      for (double& v : img.channel(c)) v = m[static_cast<std::size_t>(c)];
    }
    spec.means.push_back(std::move(img));
  }
  spec.weights = weights;
  spec.variance = variance;
  spec.validate();
  return spec;
}

}  // namespace scorebreak

#endif  // SCOREBREAK_ORACLE_HPP
