#ifndef SCOREBREAK_SCHEDULE_HPP
#define SCOREBREAK_SCHEDULE_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/tensor.hpp"

namespace scorebreak {

/// Serializable description of a variance schedule: {family, endpoints, T}.
///
/// Families:
///  - "linear":        beta_t linear from beta_start to beta_end
///  - "scaled_linear": sqrt(beta_t) linear between the square roots of the endpoints
struct ScheduleSpec {
  std::string family = "linear";
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int steps = 1000;

  bool operator==(const ScheduleSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ScheduleSpec& s) {
  j = nlohmann::json{{"family", s.family}, {"endpoints", {s.beta_start, s.beta_end}}, {"T", s.steps}};
}

inline void from_json(const nlohmann::json& j, ScheduleSpec& s) {
  s = ScheduleSpec{};
  s.family = j.value("family", s.family);
  if (j.contains("endpoints")) {
    const auto& e = j.at("endpoints");
    if (!e.is_array() || e.size() != 2) throw Error("schedule: endpoints must be a 2-element array");
    s.beta_start = e[0].get<double>();
    s.beta_end = e[1].get<double>();
  }
  s.steps = j.value("T", s.steps);
}

/// Immutable table of per-step alpha_t and cumulative alpha_bar_t, indexed 1..T.
class NoiseSchedule {
 public:
  /// Builds from explicit per-step alphas; each must lie in (0, 1].
  static NoiseSchedule from_alphas(std::vector<double> alphas, ScheduleSpec spec = {}) {
    if (alphas.empty()) throw Error("schedule: T must be >= 1");
    NoiseSchedule s;
    s.alpha_bars_.reserve(alphas.size());
    double prod = 1.0;
    for (double a : alphas) {
      if (!(a > 0.0 && a <= 1.0)) throw Error("schedule: alpha_t outside (0, 1]: " + std::to_string(a));
      prod *= a;
      s.alpha_bars_.push_back(prod);
    }
    s.alphas_ = std::move(alphas);
    spec.steps = static_cast<int>(s.alphas_.size());
    s.spec_ = std::move(spec);
    return s;
  }

  [[nodiscard]] int steps() const { return static_cast<int>(alphas_.size()); }
  [[nodiscard]] double alpha(int t) const { return alphas_.at(checked(t)); }
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bars_.at(checked(t)); }
  [[nodiscard]] const std::vector<double>& alphas() const { return alphas_; }
  [[nodiscard]] const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  [[nodiscard]] const ScheduleSpec& spec() const { return spec_; }

 private:
  NoiseSchedule() = default;

  [[nodiscard]] std::size_t checked(int t) const {
    if (t < 1 || t > steps()) {
      throw Error("schedule: timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  ScheduleSpec spec_;
};

inline NoiseSchedule build_schedule(const ScheduleSpec& spec) {
  if (spec.steps <= 0) throw Error("schedule: T must be >= 1");
  if (spec.beta_start < 0.0 || spec.beta_end < 0.0 || spec.beta_start >= 1.0 || spec.beta_end >= 1.0) {
    throw Error("schedule: endpoints must lie in [0, 1) so that alpha_t is in (0, 1]");
  }
  const int T = spec.steps;
  std::vector<double> alphas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    double beta = 0.0;
    if (spec.family == "linear") {
      beta = spec.beta_start + frac * (spec.beta_end - spec.beta_start);
    } else if (spec.family == "scaled_linear") {
      const double r = std::sqrt(spec.beta_start) + frac * (std::sqrt(spec.beta_end) - std::sqrt(spec.beta_start));
      beta = r * r;
    } else {
      throw Error("schedule: unknown family '" + spec.family + "'");
    }
    alphas[static_cast<std::size_t>(i)] = 1.0 - beta;
  }
  return NoiseSchedule::from_alphas(std::move(alphas), spec);
}

inline NoiseSchedule build_schedule(int steps, ScheduleSpec spec = {}) {
  spec.steps = steps;
  return build_schedule(spec);
}

/// sqrt(keep) * x + sqrt(1 - keep) * z, the Gaussian transition with signal fraction `keep`.
inline Image noise_mix(const Image& x, const Image& z, double keep) {
  require_same_shape(x, z, "noise_mix");
  if (!(keep >= 0.0 && keep <= 1.0)) throw Error("noise_mix: signal fraction outside [0, 1]");
  return axpby(std::sqrt(keep), x, std::sqrt(1.0 - keep), z);
}

/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) z.
inline Image forward_diffuse(const Image& x0, int t, const Image& z, const NoiseSchedule& sched) {
  return noise_mix(x0, z, sched.alpha_bar(t));
}

/// x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) z.
inline Image single_step_diffuse(const Image& x_prev, int t, const Image& z, const NoiseSchedule& sched) {
  return noise_mix(x_prev, z, sched.alpha(t));
}

}  // namespace scorebreak

#endif  // SCOREBREAK_SCHEDULE_HPP
