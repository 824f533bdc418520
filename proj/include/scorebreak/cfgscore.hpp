#ifndef SCOREBREAK_CFGSCORE_HPP
#define SCOREBREAK_CFGSCORE_HPP

#include <cmath>

#include "scorebreak/oracle.hpp"

namespace scorebreak {

struct GuidanceParams {
  double omega = 90.0;
};

/// omega * (s(x | y) - s(x)): the victim-free estimate of grad_x log p(y | x).
///
/// Uses exactly one score_pair() evaluation, i.e. two oracle scores.
inline Image conditional_segmentation_score(const ScoreOracle& oracle, const Image& x, const ConditionMap& y, int t,
                                            const GuidanceParams& g) {
  if (y.is_sentinel()) throw Error("conditional_segmentation_score: y must be a conditional map, not the sentinel");
  if (!std::isfinite(g.omega)) throw Error("conditional_segmentation_score: omega must be finite");
  auto [cond, uncond] = oracle.score_pair(x, y, t);
  require_same_shape(cond, x, "conditional score");
  require_same_shape(uncond, x, "unconditional score");
  Image out = zeros_like(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.omega * (cond[i] - uncond[i]);
  return out;
}

}  // namespace scorebreak

#endif  // SCOREBREAK_CFGSCORE_HPP
