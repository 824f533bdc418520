#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "scorebreak/attack.hpp"
#include "scorebreak/metrics.hpp"
#include "scorebreak/victim.hpp"
#include "test_util.hpp"

using namespace scorebreak;
using scorebreak::testing::gaussian_image;
using scorebreak::testing::random_image;
using scorebreak::testing::random_labels;

namespace {

// Replays a fixed loss sequence on a 1x1 binary task with label 1: p = exp(-loss).
class ScriptedVictim final : public QueryTarget {
 public:
  explicit ScriptedVictim(std::vector<double> losses, int fail_at = -1)
      : losses_(std::move(losses)), fail_at_(fail_at) {}
  Image predict(const Image& x) const override {
    const int i = calls_++;
    if (i == fail_at_) throw std::runtime_error("scripted failure");
    return Image(1, x.height(), x.width(), std::exp(-losses_.at(static_cast<std::size_t>(i))));
  }
  int num_classes() const override { return 2; }

 private:
  std::vector<double> losses_;
  int fail_at_;
  mutable std::atomic<int> calls_{0};
};

// Per-pixel logit w . x + b, binary cross-entropy; independent of the library victims.
class LinearLogitVictim final : public QueryTarget, public GradientProvider {
 public:
  LinearLogitVictim(std::vector<double> w, double b) : w_(std::move(w)), b_(b) {}
  Image predict(const Image& x) const override {
    Image p(1, x.height(), x.width());
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c) p.at(0, r, c) = 1.0 / (1.0 + std::exp(-logit(x, r, c)));
    return p;
  }
  int num_classes() const override { return 2; }
  LossGradient loss_gradient(const Image& x, const LabelMap& y) const override {
    const Image p = predict(x);
    LossGradient lg{segmentation_loss(p, y), zeros_like(x)};
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c)
        for (int ch = 0; ch < x.channels(); ++ch)
          lg.gradient.at(ch, r, c) = (p.at(0, r, c) - y.at(r, c)) * w_[ch] / static_cast<double>(y.size());
    return lg;
  }

 private:
  double logit(const Image& x, int r, int c) const {
    double s = b_;
    for (int ch = 0; ch < x.channels(); ++ch) s += w_[ch] * x.at(ch, r, c);
    return s;
  }
  std::vector<double> w_;
  double b_;
};

GaussianMixtureSpec toy_spec(int h, int w) {
  return constant_mixture({{-0.06, -0.06, -0.06}, {0.06, 0.06, 0.06}}, {0.5, 0.5}, 0.05 * 0.05, h, w);
}

// Draws a sample whose pixels follow the class of `labels`.
Image sample_from(const GaussianMixtureSpec& spec, const LabelMap& labels, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(spec.variance));
  Image x = zeros_like(spec.means[0]);
  for (int ch = 0; ch < x.channels(); ++ch)
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c)
        x.at(ch, r, c) = std::clamp(spec.means[labels.at(r, c)].at(ch, r, c) + n(rng), -1.0, 1.0);
  return x;
}

double log_posterior(const GaussianMixtureSpec& spec, const Image& x, const LabelMap& y) {
  const Image post = pixel_posterior(spec, x, 1.0);
  double s = 0.0;
  for (int r = 0; r < y.height; ++r)
    for (int c = 0; c < y.width; ++c) s += std::log(post.at(y.at(r, c), r, c));
  return s;
}

}  // namespace

TEST(TimestepMap, ParseAndMap) {
  EXPECT_EQ(TimestepMap::parse("head")(0, 30, 1000), 1);
  EXPECT_EQ(TimestepMap::parse("head")(29, 30, 1000), 30);
  const auto lin = TimestepMap::parse("linear");
  EXPECT_EQ(lin(0, 30, 1000), 1);
  EXPECT_EQ(lin(29, 30, 1000), 1000);
  EXPECT_EQ(TimestepMap::parse("fixed:500")(7, 30, 1000), 500);
  EXPECT_EQ(TimestepMap::parse("fixed:12").to_string(), "fixed:12");
  EXPECT_THROW(TimestepMap::parse("cosine"), Error);
  EXPECT_THROW(TimestepMap::parse("fixed:x"), Error);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate(1000));
  c.m_max = 0;
  EXPECT_THROW(c.validate(1000), Error);
  c = {};
  c.mu = 2 * c.epsilon;
  EXPECT_THROW(c.validate(1000), Error);
  c = {};
  c.t_map = TimestepMap::parse("fixed:1001");
  EXPECT_THROW(c.validate(1000), Error);
  c = {};
  c.m_max = 100;
  EXPECT_THROW(c.validate(50), Error);  // head map leaves the schedule
  c = {};
  c.omega = INFINITY;
  EXPECT_THROW(c.validate(1000), Error);
}

TEST(AttackConfig, JsonRoundTrip) {
  AttackConfig c;
  c.m_max = 77;
  c.omega = 12.5;
  c.t_map = TimestepMap::parse("linear");
  c.alpha_mode = AlphaMode::Cumulative;
  c.noising = false;
  const nlohmann::json j = c;
  const auto back = j.get<AttackConfig>();
  EXPECT_EQ(back.m_max, 77);
  EXPECT_EQ(back.omega, 12.5);
  EXPECT_EQ(back.t_map.to_string(), "linear");
  EXPECT_EQ(back.alpha_mode, AlphaMode::Cumulative);
  EXPECT_FALSE(back.noising);
}

TEST(StepPerturbation, ZeroOmegaAndUnitAlpha) {
  const auto spec = toy_spec(2, 2);
  std::mt19937_64 rng(1);
  const Image x = gaussian_image(3, 2, 2, rng, 0.1);
  const auto y = condition_from_labels(random_labels(2, 2, 2, rng), 2);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  AttackConfig cfg;
  cfg.omega = 0.0;
  EXPECT_EQ(max_abs(step_perturbation(oracle, x, y, 0, cfg, sched)), 0.0);

  const auto unit = NoiseSchedule::from_alphas({1.0, 1.0});
  AnalyticPixelOracle unit_oracle(spec, unit);
  cfg.omega = 90.0;
  cfg.m_max = 2;
  EXPECT_EQ(max_abs(step_perturbation(unit_oracle, x, y, 1, cfg, unit)), 0.0);
}

TEST(StepPerturbation, HandSetAlpha) {
  const auto spec = toy_spec(2, 2);
  const auto sched = NoiseSchedule::from_alphas({0.96, 0.9});
  AnalyticPixelOracle oracle(spec, sched);
  std::mt19937_64 rng(2);
  const Image x = gaussian_image(3, 2, 2, rng, 0.1);
  const auto y = condition_from_labels(random_labels(2, 2, 2, rng), 2);
  AttackConfig cfg;
  cfg.omega = 1.0;
  cfg.m_max = 2;
  const Image got = step_perturbation(oracle, x, y, 0, cfg, sched);
  const Image sc = oracle.score(x, y, 1);
  const Image su = oracle.score(x, y.sentinel_like(), 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(got[i], -0.2 * (sc[i] - su[i]), 1e-10);
  EXPECT_THROW(step_perturbation(oracle, x, y, 2, cfg, sched), Error);
}

TEST(AdvancePseudo, IdentityAndSaturation) {
  const auto unit = NoiseSchedule::from_alphas({1.0});
  std::mt19937_64 rng(3);
  const Image x = random_image(3, 4, 4, rng, -0.9, 0.9);
  AttackConfig cfg;
  cfg.m_max = 1;
  Image inside = x;
  inside[0] += cfg.epsilon / 2;
  EXPECT_EQ(advance_pseudo(inside, zeros_like(x), x, 0, cfg, unit), inside);

  const auto sched = NoiseSchedule::from_alphas({0.5});
  Image edge = x;
  edge[1] = 0.99;
  const Image huge(3, 4, 4, 1e6);
  const Image out = advance_pseudo(edge, huge, edge, 0, cfg, sched);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out[i], std::min(edge[i] + cfg.epsilon, 1.0));
}

TEST(AdvancePseudo, ElementwiseOracle) {
  const auto sched = build_schedule(1000);
  std::mt19937_64 rng(4);
  AttackConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const Image xc = random_image(3, 3, 3, rng);
    const Image xp = clip_to_range(axpby(1.0, xc, 1.0, random_image(3, 3, 3, rng, -cfg.epsilon, cfg.epsilon)));
    const Image dm = gaussian_image(3, 3, 3, rng, 0.2);
    const int m = trial % cfg.m_max;
    const double a = sched.alpha(m + 1);
    const Image out = advance_pseudo(xp, dm, xc, m, cfg, sched);
    for (std::size_t i = 0; i < xc.size(); ++i) {
      double v = std::sqrt(a) * xp[i] + std::sqrt(1 - a) * dm[i];
      v = std::min(std::max(v, std::max(xc[i] - cfg.epsilon, -1.0)), std::min(xc[i] + cfg.epsilon, 1.0));
      EXPECT_NEAR(out[i], v, 1e-12);
    }
  }
}

TEST(Accumulate, Examples) {
  AttackConfig cfg;
  cfg.mu = 2.0 / 255;
  cfg.epsilon = 8.0 / 255;
  const Image pos(1, 2, 3, 0.3);
  Image d = accumulate(Image(1, 2, 3), pos, cfg);
  for (double v : d.values()) EXPECT_EQ(v, 2.0 / 255);
  for (int i = 0; i < 4; ++i) d = accumulate(d, pos, cfg);
  for (double v : d.values()) EXPECT_EQ(v, 8.0 / 255);

  Image e(1, 1, 4);
  for (int step = 0; step < 6; ++step) {
    e = accumulate(e, Image(1, 1, 4, step % 2 == 0 ? 1.0 : -1.0), cfg);
    if (step % 2 == 1) EXPECT_EQ(max_abs(e), 0.0);
  }
  // sign(0) = 0 leaves the state untouched
  Image f(1, 1, 1, 0.01);
  EXPECT_EQ(accumulate(f, Image(1, 1, 1), cfg), f);
}

TEST(RunAttack, ZeroPathReturnsInput) {
  const auto spec = toy_spec(3, 3);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  std::mt19937_64 rng(5);
  const Image x = random_image(3, 3, 3, rng);
  AttackConfig cfg;
  cfg.m_max = 1;
  cfg.omega = 0.0;
  const auto r = run_attack(oracle, x, condition_from_labels(random_labels(3, 3, 2, rng), 2), cfg, sched);
  EXPECT_EQ(r.x_adv, x);
  EXPECT_EQ(r.steps.size(), 1u);
}

TEST(RunAttack, LinfBudgetAndFinalization) {
  const auto sched = build_schedule(1000);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const auto spec = toy_spec(4, 4);
    AnalyticPixelOracle oracle(spec, sched);
    const LabelMap l = random_labels(4, 4, 2, rng);
    const Image x = random_image(3, 4, 4, rng);
    AttackConfig cfg;
    cfg.m_max = 1 + trial % 30;
    cfg.omega = trial % 5 == 0 ? 1e4 : 90.0;
    cfg.t_map = trial % 3 == 0 ? TimestepMap::parse("linear") : TimestepMap{};
    cfg.clip_pseudo = trial % 4 != 0;
    cfg.noising = trial % 7 != 0;
    const auto r = run_attack(oracle, x, condition_from_labels(l, 2), cfg, sched);
    for (const auto& s : r.steps) EXPECT_LE(s.accumulated_max_abs, cfg.epsilon);
    EXPECT_LE(max_abs(r.delta_adv), cfg.epsilon);
    EXPECT_LE(max_abs_diff(r.x_adv, x), cfg.epsilon + 1e-12);
    EXPECT_EQ(r.x_adv, clip_to_range(axpby(1.0, x, 1.0, r.delta_adv)));
    for (double v : r.x_adv.values()) EXPECT_TRUE(v >= -1.0 && v <= 1.0);
  }
}

TEST(RunAttack, RejectsBadInputs) {
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(toy_spec(2, 2), sched);
  const auto y = condition_from_labels(LabelMap(2, 2, 1), 2);
  AttackConfig cfg;
  EXPECT_THROW(run_attack(oracle, Image(3, 2, 2, 1.5), y, cfg, sched), Error);
  EXPECT_THROW(run_attack(oracle, Image(3, 3, 3), y, cfg, sched), Error);
  cfg.query_enabled = true;
  EXPECT_THROW(run_attack(oracle, Image(3, 2, 2), y, cfg, sched), Error);
}

TEST(RunAttack, QueryArgmaxOfScriptedLosses) {
  const auto spec = constant_mixture({{-0.2}, {0.2}}, {0.5, 0.5}, 0.01, 1, 1);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  const Image x(1, 1, 1, 0.1);
  const auto y = condition_from_labels(LabelMap(1, 1, 1), 2);
  AttackConfig cfg;
  cfg.m_max = 3;
  cfg.query_enabled = true;
  ScriptedVictim victim({0.2, 0.5, 0.3});
  const auto r = run_attack(oracle, x, y, cfg, sched, &victim);
  EXPECT_EQ(r.queries, 3);
  ASSERT_TRUE(r.best_step.has_value());
  EXPECT_EQ(*r.best_step, 1);
  EXPECT_NEAR(*r.best_loss, 0.5, 1e-12);
  EXPECT_FALSE(r.query_never_improved);

  AttackConfig free = cfg;
  free.query_enabled = false;
  free.m_max = 2;
  const auto upto2 = run_attack(oracle, x, y, free, sched);
  EXPECT_EQ(r.delta_adv, upto2.delta_adv);
  EXPECT_EQ(r.x_adv, clip_to_range(axpby(1.0, x, 1.0, r.delta_adv)));
}

TEST(RunAttack, QueryDominanceAndMonotoneBest) {
  const auto spec = toy_spec(4, 4);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  const auto victim = bayes_victim(spec);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const LabelMap l = random_labels(4, 4, 2, rng);
    const Image x = sample_from(spec, l, rng);
    AttackConfig cfg;
    cfg.m_max = 20;
    cfg.query_enabled = true;
    const auto r = run_attack(oracle, x, condition_from_labels(l, 2), cfg, sched, &victim);
    double mx = 0.0;
    for (const auto& s : r.steps) mx = std::max(mx, *s.query_loss);
    ASSERT_TRUE(r.best_loss.has_value());
    EXPECT_EQ(*r.best_loss, mx);
    EXPECT_EQ(*r.steps[*r.best_step].query_loss, mx);
  }
}

TEST(RunAttack, NeverImprovedFlag) {
  const auto spec = constant_mixture({{-0.2}, {0.2}}, {0.5, 0.5}, 0.01, 1, 1);
  const auto sched = build_schedule(100);
  AnalyticPixelOracle oracle(spec, sched);
  AttackConfig cfg;
  cfg.m_max = 4;
  cfg.query_enabled = true;
  // the probability floor keeps every finite loss above 0; only a degenerate victim never improves
  ScriptedVictim victim({NAN, NAN, NAN, NAN});
  const Image x(1, 1, 1, 0.1);
  const auto r = run_attack(oracle, x, condition_from_labels(LabelMap(1, 1, 1), 2), cfg, sched, &victim);
  EXPECT_TRUE(r.query_never_improved);
  EXPECT_FALSE(r.best_loss.has_value());
}

TEST(RunAttack, VictimFailureKeepsTrace) {
  const auto spec = constant_mixture({{-0.2}, {0.2}}, {0.5, 0.5}, 0.01, 1, 1);
  const auto sched = build_schedule(100);
  AnalyticPixelOracle oracle(spec, sched);
  AttackConfig cfg;
  cfg.m_max = 5;
  cfg.query_enabled = true;
  ScriptedVictim victim({0.1, 0.2, 0.3, 0.4, 0.5}, 3);
  try {
    (void)run_attack(oracle, Image(1, 1, 1, 0.1), condition_from_labels(LabelMap(1, 1, 1), 2), cfg, sched, &victim);
    FAIL() << "expected AttackAborted";
  } catch (const AttackAborted& e) {
    EXPECT_EQ(e.partial().steps.size(), 3u);
    EXPECT_EQ(e.partial().queries, 3);
  }
}

TEST(RunAttack, DeterministicBitwise) {
  const auto spec = toy_spec(5, 5);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  std::mt19937_64 rng(8);
  const LabelMap l = random_labels(5, 5, 2, rng);
  const Image x = sample_from(spec, l, rng);
  AttackConfig cfg;
  const auto a = run_attack(oracle, x, condition_from_labels(l, 2), cfg, sched);
  const auto b = run_attack(oracle, x, condition_from_labels(l, 2), cfg, sched);
  EXPECT_EQ(a.x_adv, b.x_adv);
  EXPECT_EQ(a.delta_adv, b.delta_adv);
}

TEST(RunAttack, StepSignInvariantToOmega) {
  const auto spec = toy_spec(4, 4);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap l = random_labels(4, 4, 2, rng);
    const auto y = condition_from_labels(l, 2);
    const Image x = sample_from(spec, l, rng);
    AttackConfig a, b;
    a.omega = 1.0;
    b.omega = 150.0;
    const int m = trial % a.m_max;
    const Image da = step_perturbation(oracle, x, y, m, a, sched);
    const Image db = step_perturbation(oracle, x, y, m, b, sched);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(sign0(da[i]), sign0(db[i]));
    EXPECT_EQ(accumulate(Image(3, 4, 4), da, a), accumulate(Image(3, 4, 4), db, b));
  }
}

TEST(RunAttack, LowersBayesPosterior) {
  const auto spec = toy_spec(4, 4);
  const auto sched = build_schedule(1000);
  AnalyticPixelOracle oracle(spec, sched);
  std::mt19937_64 rng(10);
  int lowered = 0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const LabelMap l = random_labels(4, 4, 2, rng);
    const Image x = sample_from(spec, l, rng);
    const auto r = run_attack(oracle, x, condition_from_labels(l, 2), AttackConfig{}, sched);
    if (log_posterior(spec, r.x_adv, l) < log_posterior(spec, x, l)) ++lowered;
  }
  EXPECT_GE(lowered, static_cast<int>(0.95 * n));
}

TEST(Fgsm, TrivialCases) {
  std::mt19937_64 rng(11);
  const Image x = random_image(3, 3, 3, rng);
  const LabelMap y = random_labels(3, 3, 2, rng);
  LinearLogitVictim zero({0.0, 0.0, 0.0}, 0.0);
  EXPECT_EQ(fgsm(zero, x, y, kDefaultEpsilon), x);
  LinearLogitVictim lin({3.0, -1.0, 2.0}, 0.1);
  EXPECT_EQ(fgsm(lin, x, y, 0.0), x);
  EXPECT_THROW(fgsm(lin, x, y, -1.0), Error);
}

TEST(Fgsm, RaisesLossOnLinearVictim) {
  LinearLogitVictim lin({3.0, -1.0, 2.0}, 0.1);
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    const Image x = random_image(3, 4, 4, rng);
    const LabelMap y = random_labels(4, 4, 2, rng);
    const Image adv = fgsm(lin, x, y, kDefaultEpsilon);
    EXPECT_GE(segmentation_loss(lin.predict(adv), y), segmentation_loss(lin.predict(x), y));
    EXPECT_LE(max_abs_diff(adv, x), kDefaultEpsilon + 1e-12);
  }
}

TEST(Pgd, OneStepIsFgsmWithMu) {
  LinearLogitVictim lin({3.0, -1.0, 2.0}, 0.1);
  std::mt19937_64 rng(13);
  const Image x = random_image(3, 4, 4, rng);
  const LabelMap y = random_labels(4, 4, 2, rng);
  EXPECT_EQ(pgd(lin, x, y, kDefaultEpsilon, kDefaultMu, 1), fgsm(lin, x, y, kDefaultMu));
  EXPECT_THROW(pgd(lin, x, y, kDefaultEpsilon, kDefaultMu, 0), Error);
}

TEST(Pgd, BudgetAndDominatesFgsm) {
  LinearLogitVictim lin({3.0, -1.0, 2.0}, 0.1);
  std::mt19937_64 rng(14);
  int wins = 0;
  for (int i = 0; i < 100; ++i) {
    const Image x = random_image(3, 4, 4, rng);
    const LabelMap y = random_labels(4, 4, 2, rng);
    const Image p = pgd(lin, x, y, kDefaultEpsilon, kDefaultMu, 10);
    EXPECT_LE(max_abs_diff(p, x), kDefaultEpsilon + 1e-12);
    const double lp = segmentation_loss(lin.predict(p), y);
    const double lf = segmentation_loss(lin.predict(fgsm(lin, x, y, kDefaultEpsilon)), y);
    if (lp >= lf - 1e-12) ++wins;
  }
  EXPECT_GE(wins, 80);
}

TEST(RandomQuery, SingleProposalAndArgmax) {
  LinearLogitVictim lin({3.0, -1.0, 2.0}, 0.1);
  std::mt19937_64 rng(15);
  const Image x = random_image(3, 4, 4, rng, -0.5, 0.5);
  const LabelMap y = random_labels(4, 4, 2, rng);
  std::mt19937_64 r1(1);
  const auto one = random_query_attack(lin, x, y, kDefaultEpsilon, 1, r1);
  EXPECT_EQ(one.queries, 1);
  EXPECT_EQ(*one.best_step, 0);
  EXPECT_EQ(max_abs(one.delta_adv), kDefaultEpsilon);

  std::mt19937_64 r2(2);
  const auto many = random_query_attack(lin, x, y, kDefaultEpsilon, 40, r2);
  double mx = -1.0;
  for (const auto& s : many.steps) mx = std::max(mx, *s.query_loss);
  EXPECT_EQ(*many.best_loss, mx);
  EXPECT_EQ(segmentation_loss(lin.predict(many.x_adv), y), mx);
  std::mt19937_64 r3(3);
  EXPECT_THROW(random_query_attack(lin, x, y, kDefaultEpsilon, 0, r3), Error);
}

TEST(RandomQuery, DegradesToyVictim) {
  const auto spec = toy_spec(8, 8);
  const auto victim = bayes_victim(spec);
  std::mt19937_64 rng(16);
  double clean = 0.0, attacked = 0.0;
  for (int i = 0; i < 4; ++i) {
    const LabelMap l = random_labels(8, 8, 2, rng);
    const Image x = sample_from(spec, l, rng);
    const auto r = random_query_attack(victim, x, l, kDefaultEpsilon, 500, rng);
    clean += miou_acc(hard_labels(victim.predict(x)), l, 2).miou;
    attacked += miou_acc(hard_labels(victim.predict(r.x_adv)), l, 2).miou;
  }
  EXPECT_LT(attacked, clean);
}

TEST(NoiseControl, BudgetAndTrivialCase) {
  std::mt19937_64 rng(17);
  const Image x = random_image(3, 5, 5, rng);
  EXPECT_EQ(gaussian_noise_control(x, 0.0, kDefaultMu, 100, rng), x);
  for (int i = 0; i < 20; ++i) {
    const Image adv = gaussian_noise_control(x, kDefaultEpsilon, kDefaultMu, 100, rng);
    EXPECT_LE(max_abs_diff(adv, x), kDefaultEpsilon + 1e-12);
  }
  EXPECT_THROW(gaussian_noise_control(x, kDefaultEpsilon, kDefaultMu, 0, rng), Error);
}
