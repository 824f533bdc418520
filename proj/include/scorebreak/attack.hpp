#ifndef SCOREBREAK_ATTACK_HPP
#define SCOREBREAK_ATTACK_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/cfgscore.hpp"
#include "scorebreak/oracle.hpp"
#include "scorebreak/schedule.hpp"
#include "scorebreak/target.hpp"

namespace scorebreak {

/// 8/255 and 2/255 of the value range, expressed in internal units.
inline constexpr double kDefaultEpsilon = 8.0 / 255.0 * (kImageRange.hi - kImageRange.lo);
inline constexpr double kDefaultMu = 2.0 / 255.0 * (kImageRange.hi - kImageRange.lo);

/// Maps attack step m to a diffusion timestep.
struct TimestepMap {
  enum class Kind { Head, Linear, Fixed };

  Kind kind = Kind::Head;
  int fixed_t = 1;

  /// Head: t = m + 1. Linear: spread m over [1, T]. Fixed: constant.
  [[nodiscard]] int operator()(int m, int m_max, int T) const {
    switch (kind) {
      case Kind::Head:
        return m + 1;
      case Kind::Linear:
        if (m_max <= 1) return 1;
        return 1 + static_cast<int>(std::lround(static_cast<double>(m) * (T - 1) / (m_max - 1)));
      case Kind::Fixed:
        return fixed_t;
    }
    return 1;
  }

  [[nodiscard]] std::string to_string() const {
    switch (kind) {
      case Kind::Head:
        return "head";
      case Kind::Linear:
        return "linear";
      case Kind::Fixed:
        return "fixed:" + std::to_string(fixed_t);
    }
    return "head";
  }

  /// Parses "head", "linear" or "fixed:<t>".
  static TimestepMap parse(const std::string& s) {
    if (s == "head") return {Kind::Head, 1};
    if (s == "linear") return {Kind::Linear, 1};
    if (s.rfind("fixed:", 0) == 0) {
      try {
        return {Kind::Fixed, std::stoi(s.substr(6))};
      } catch (const std::exception&) {
      }
    }
    throw Error("t_map: expected head | linear | fixed:<t>, got '" + s + "'");
  }
};

/// Which schedule factor drives the pseudo-sample mix: alpha_t or alpha_bar_t.
enum class AlphaMode { PerStep, Cumulative };

struct AttackConfig {
  double epsilon = kDefaultEpsilon;
  double mu = kDefaultMu;
  int m_max = 30;
  double omega = 90.0;
  TimestepMap t_map;
  AlphaMode alpha_mode = AlphaMode::PerStep;
  bool query_enabled = false;
  /// Ablation switches: the schedule mix of the pseudo sample, and its eps-ball clip.
  bool noising = true;
  bool clip_pseudo = true;
  ValueRange range = kImageRange;

  [[nodiscard]] int timestep(int m, int T) const { return t_map(m, m_max, T); }

  void validate(int T) const {
    if (!(epsilon > 0.0)) throw Error("attack: epsilon must be > 0");
    if (!(mu > 0.0 && mu <= epsilon)) throw Error("attack: step size must satisfy 0 < mu <= epsilon");
    if (m_max < 1) throw Error("attack: m_max must be >= 1");
    if (!std::isfinite(omega)) throw Error("attack: omega must be finite");
    for (int m = 0; m < m_max; ++m) {
      const int t = timestep(m, T);
      if (t < 1 || t > T) {
        throw Error("attack: t_map(" + std::to_string(m) + ") = " + std::to_string(t) + " outside [1, " +
                    std::to_string(T) + "]");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},
                     {"mu", c.mu},
                     {"m_max", c.m_max},
                     {"omega", c.omega},
                     {"t_map", c.t_map.to_string()},
                     {"alpha_mode", c.alpha_mode == AlphaMode::PerStep ? "per_step" : "cumulative"},
                     {"query", c.query_enabled},
                     {"noising", c.noising},
                     {"clip_pseudo", c.clip_pseudo}};
}

inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  c = AttackConfig{};
  c.epsilon = j.value("epsilon", c.epsilon);
  c.mu = j.value("mu", c.mu);
  c.m_max = j.value("m_max", c.m_max);
  c.omega = j.value("omega", c.omega);
  if (j.contains("t_map")) c.t_map = TimestepMap::parse(j.at("t_map").get<std::string>());
  if (j.contains("alpha_mode")) {
    const auto mode = j.at("alpha_mode").get<std::string>();
    if (mode == "per_step") {
      c.alpha_mode = AlphaMode::PerStep;
    } else if (mode == "cumulative") {
      c.alpha_mode = AlphaMode::Cumulative;
    } else {
      throw Error("attack: alpha_mode must be per_step or cumulative");
    }
  }
  c.query_enabled = j.value("query", c.query_enabled);
  c.noising = j.value("noising", c.noising);
  c.clip_pseudo = j.value("clip_pseudo", c.clip_pseudo);
}

struct StepRecord {
  int m = 0;
  int t = 0;
  double step_max_abs = 0.0;      // max |delta_m|
  double accumulated_max_abs = 0.0;  // max |delta_adv| after accumulation
  double accumulated_mean_abs = 0.0;
  std::optional<double> query_loss;
};

struct AttackResult {
  Image x_adv;
  Image delta_adv;
  std::vector<StepRecord> steps;
  int queries = 0;
  /// Loss of the returned perturbation when it was chosen by querying.
  std::optional<double> best_loss;
  std::optional<int> best_step;
  /// Query mode ran but no query beat the initial threshold of 0.
  bool query_never_improved = false;
};

/// Raised when a victim query fails; carries the trace recorded so far.
class AttackAborted : public Error {
 public:
  AttackAborted(const std::string& what, AttackResult partial) : Error(what), partial_(std::move(partial)) {}
  [[nodiscard]] const AttackResult& partial() const { return partial_; }

 private:
  AttackResult partial_;
};

namespace detail {

inline double mix_factor(const AttackConfig& cfg, int t, const NoiseSchedule& sched) {
  return cfg.alpha_mode == AlphaMode::PerStep ? sched.alpha(t) : sched.alpha_bar(t);
}

/// Clip to [x - eps, x + eps] intersected with the value range.
inline Image clip_to_ball(const Image& v, const Image& center, double epsilon, ValueRange range) {
  require_same_shape(v, center, "clip_to_ball");
  Image out = zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lo = std::max(center[i] - epsilon, range.lo);
    const double hi = std::min(center[i] + epsilon, range.hi);
    out[i] = std::clamp(v[i], lo, hi);
  }
  return out;
}

inline StepRecord summarize(int m, int t, const Image& delta_m, const Image& delta_adv) {
  StepRecord r{m, t, max_abs(delta_m), max_abs(delta_adv), 0.0, std::nullopt};
  double s = 0.0;
  for (double v : delta_adv.values()) s += std::abs(v);
  r.accumulated_mean_abs = delta_adv.empty() ? 0.0 : s / static_cast<double>(delta_adv.size());
  return r;
}

}  // namespace detail

/// delta_m = -sqrt(1 - alpha) * omega * (s(x|y) - s(x)) at t = t_map(m).
inline Image step_perturbation(const ScoreOracle& oracle, const Image& x_pseudo, const ConditionMap& y, int m,
                               const AttackConfig& cfg, const NoiseSchedule& sched) {
  if (m < 0 || m >= cfg.m_max) throw Error("step_perturbation: step index outside [0, m_max)");
  if (!all_finite(x_pseudo)) throw Error("step_perturbation: non-finite pseudo sample");
  const int t = cfg.timestep(m, sched.steps());
  if (t < 1 || t > sched.steps()) throw Error("step_perturbation: t_map out of schedule range");
  const double a = detail::mix_factor(cfg, t, sched);
  Image css = conditional_segmentation_score(oracle, x_pseudo, y, t, GuidanceParams{cfg.omega});
  const double coef = -std::sqrt(1.0 - a);
  for (double& v : css.values()) v *= coef;
  return css;
}

/// Next pseudo sample: sqrt(alpha) x_m + sqrt(1 - alpha) delta_m, clipped to
/// the eps-ball around the clean sample intersected with the value range.
inline Image advance_pseudo(const Image& x_pseudo, const Image& delta_m, const Image& x_clean, int m,
                            const AttackConfig& cfg, const NoiseSchedule& sched) {
  require_same_shape(x_pseudo, delta_m, "advance_pseudo");
  require_same_shape(x_pseudo, x_clean, "advance_pseudo");
  const int t = cfg.timestep(m, sched.steps());
  const double a = detail::mix_factor(cfg, t, sched);
  const double keep = std::sqrt(a);
  const double push = std::sqrt(1.0 - a);
  Image mixed = zeros_like(x_pseudo);
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = keep * x_pseudo[i] + push * delta_m[i];
  if (!cfg.clip_pseudo) return clip_to_range(mixed, cfg.range);
  return detail::clip_to_ball(mixed, x_clean, cfg.epsilon, cfg.range);
}

/// delta_adv <- clip(mu * sign(delta_m) + delta_adv, -eps, eps), sign(0) = 0.
inline Image accumulate(const Image& delta_adv, const Image& delta_m, const AttackConfig& cfg) {
  require_same_shape(delta_adv, delta_m, "accumulate");
  Image out = zeros_like(delta_adv);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(cfg.mu * sign0(delta_m[i]) + delta_adv[i], -cfg.epsilon, cfg.epsilon);
  }
  return out;
}

/// Score-driven attack loop with optional victim querying.
///
/// Each step computes delta_m at the pseudo sample, accumulates its sign into
/// delta_adv, then advances the pseudo sample. In query mode the pseudo sample
/// x^adv_m (before this step's advance) is sent to the victim and the
/// accumulated perturbation with the highest query loss is kept.
inline AttackResult run_attack(const ScoreOracle& oracle, const Image& x, const ConditionMap& y,
                               const AttackConfig& cfg, const NoiseSchedule& sched,
                               const QueryTarget* victim = nullptr) {
  cfg.validate(sched.steps());
  if (cfg.query_enabled && victim == nullptr) throw Error("run_attack: query mode requires a victim");
  if (y.height() != x.height() || y.width() != x.width()) throw Error("run_attack: condition/image size mismatch");
  for (double v : x.values()) {
    if (!(v >= cfg.range.lo && v <= cfg.range.hi)) throw Error("run_attack: clean sample outside the value range");
  }

  const std::optional<LabelMap> labels =
      cfg.query_enabled ? std::optional<LabelMap>(labels_from_condition(y)) : std::nullopt;
  AttackResult result;
  Image x_pseudo = x;
  Image delta_adv = zeros_like(x);
  std::optional<Image> best_delta;
  double best_loss = 0.0;

  for (int m = 0; m < cfg.m_max; ++m) {
    const int t = cfg.timestep(m, sched.steps());
    const Image delta_m = step_perturbation(oracle, x_pseudo, y, m, cfg, sched);
    Image next = advance_pseudo(x_pseudo, delta_m, x, m, cfg, sched);
    delta_adv = accumulate(delta_adv, delta_m, cfg);
    if (!cfg.noising) {
      Image tracked = axpby(1.0, x, 1.0, delta_adv);
      next = cfg.clip_pseudo ? detail::clip_to_ball(tracked, x, cfg.epsilon, cfg.range)
                             : clip_to_range(tracked, cfg.range);
    }
    StepRecord rec = detail::summarize(m, t, delta_m, delta_adv);
    if (cfg.query_enabled) {
      double loss = 0.0;
      try {
        loss = segmentation_loss(victim->predict(x_pseudo), *labels);
      } catch (const std::exception& e) {
        result.delta_adv = delta_adv;
        result.x_adv = clip_to_range(axpby(1.0, x, 1.0, delta_adv), cfg.range);
        throw AttackAborted(std::string("run_attack: victim query failed at step ") + std::to_string(m) + ": " +
                                e.what(),
                            std::move(result));
      }
      ++result.queries;
      rec.query_loss = loss;
      if (loss > best_loss) {
        best_loss = loss;
        best_delta = delta_adv;
        result.best_step = m;
      }
    }
    result.steps.push_back(rec);
    x_pseudo = std::move(next);
  }

  if (cfg.query_enabled) {
    if (best_delta) {
      delta_adv = *best_delta;
      result.best_loss = best_loss;
    } else {
      result.query_never_improved = true;
    }
  }
  result.x_adv = clip_to_range(axpby(1.0, x, 1.0, delta_adv), cfg.range);
  result.delta_adv = std::move(delta_adv);
  return result;
}

/// x + eps * sign(grad L), clipped to the value range.
inline Image fgsm(const GradientProvider& victim_grad, const Image& x, const LabelMap& y, double epsilon,
                  ValueRange range = kImageRange) {
  if (epsilon < 0.0) throw Error("fgsm: epsilon must be >= 0");
  const LossGradient lg = victim_grad.loss_gradient(x, y);
  require_same_shape(lg.gradient, x, "fgsm gradient");
  if (!all_finite(lg.gradient)) throw Error("fgsm: non-finite gradient");
  Image out = zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = range.clamp(x[i] + epsilon * sign0(lg.gradient[i]));
  return out;
}

/// Iterated sign steps, each projected onto the eps-ball around x and the value range.
inline Image pgd(const GradientProvider& victim_grad, const Image& x, const LabelMap& y, double epsilon, double mu,
                 int steps, ValueRange range = kImageRange) {
  if (epsilon < 0.0 || mu < 0.0) throw Error("pgd: epsilon and mu must be >= 0");
  if (steps < 1) throw Error("pgd: steps must be >= 1");
  Image cur = x;
  for (int m = 0; m < steps; ++m) {
    const LossGradient lg = victim_grad.loss_gradient(cur, y);
    require_same_shape(lg.gradient, x, "pgd gradient");
    if (!all_finite(lg.gradient)) throw Error("pgd: non-finite gradient");
    Image next = zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) next[i] = cur[i] + mu * sign0(lg.gradient[i]);
    cur = detail::clip_to_ball(next, x, epsilon, range);
  }
  return cur;
}

/// Random sign patterns scaled to the eps-ball; keeps the proposal with the
/// highest query loss.
inline AttackResult random_query_attack(const QueryTarget& victim, const Image& x, const LabelMap& y,
                                        double epsilon, int budget, std::mt19937_64& rng,
                                        ValueRange range = kImageRange) {
  if (budget < 1) throw Error("random_query_attack: budget must be >= 1");
  if (epsilon < 0.0) throw Error("random_query_attack: epsilon must be >= 0");
  std::bernoulli_distribution coin(0.5);
  AttackResult result;
  double best = -std::numeric_limits<double>::infinity();
  Image delta = zeros_like(x);
  for (int q = 0; q < budget; ++q) {
    for (double& v : delta.values()) v = coin(rng) ? epsilon : -epsilon;
    const Image probe = clip_to_range(axpby(1.0, x, 1.0, delta), range);
    const double loss = segmentation_loss(victim.predict(probe), y);
    ++result.queries;
    StepRecord rec = detail::summarize(q, 0, delta, delta);
    rec.query_loss = loss;
    result.steps.push_back(rec);
    if (loss > best) {
      best = loss;
      result.delta_adv = delta;
      result.best_step = q;
    }
  }
  result.best_loss = best;
  result.x_adv = clip_to_range(axpby(1.0, x, 1.0, result.delta_adv), range);
  return result;
}

/// Null-hypothesis control: accumulates mu * sign(N(0, 1)) per step with the
/// same eps clip and finalization as the score attack.
inline Image gaussian_noise_control(const Image& x, double epsilon, double mu, int steps, std::mt19937_64& rng,
                                    ValueRange range = kImageRange) {
  if (steps < 1) throw Error("gaussian_noise_control: steps must be >= 1");
  if (epsilon < 0.0 || mu < 0.0) throw Error("gaussian_noise_control: epsilon and mu must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Image delta = zeros_like(x);
  for (int s = 0; s < steps; ++s) {
    for (double& v : delta.values()) v = std::clamp(v + mu * sign0(normal(rng)), -epsilon, epsilon);
  }
  return clip_to_range(axpby(1.0, x, 1.0, delta), range);
}

}  // namespace scorebreak

#endif  // SCOREBREAK_ATTACK_HPP
