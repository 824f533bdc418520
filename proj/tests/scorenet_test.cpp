#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "scorebreak/scorenet.hpp"
#include "test_util.hpp"

using namespace scorebreak;
using scorebreak::testing::gaussian_image;

namespace {

TrainingConfig small_config(std::uint64_t seed) {
  TrainingConfig c;
  c.T = 100;
  c.image_channels = 1;
  c.image_height = 8;
  c.image_width = 8;
  c.condition_channels = 1;
  c.widths = {8, 8};
  c.batch_size = 8;
  c.learning_rate = 2e-3;
  c.seed = seed;
  return c;
}

ScheduleSpec small_schedule() { return ScheduleSpec{"linear", 1e-3, 0.1, 100}; }

std::vector<TrainingPair> gaussian_set(int n, double mean, double sd, std::mt19937_64& rng) {
  std::vector<TrainingPair> out;
  std::normal_distribution<double> d(mean, sd);
  for (int i = 0; i < n; ++i) {
    Image x(1, 8, 8);
    for (double& v : x.values()) v = d(rng);
    out.push_back({std::move(x), Image(1, 8, 8, -0.5)});
  }
  return out;
}

// Held-out denoising loss with a fixed draw of (t, z).
double eval_loss(const ScoreNet& net, const std::vector<TrainingPair>& data) {
  std::mt19937_64 rng(999);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> tdist(1, net.schedule().steps());
  double total = 0.0;
  for (const auto& p : data) {
    const int t = tdist(rng);
    Image z = zeros_like(p.image);
    for (double& v : z.values()) v = n(rng);
    const Image xs[] = {forward_diffuse(p.image, t, z, net.schedule())};
    const Image cs[] = {p.mask};
    const int ts[] = {t};
    total += training_target_residual(net.scores(xs, cs, ts).front(), z, t, net.schedule());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TEST(Residual, Examples) {
  const auto sched = build_schedule(1000);
  std::mt19937_64 rng(1);
  const Image z = gaussian_image(3, 4, 4, rng);
  const int t = 321;
  const Image exact = scaled(z, -1.0 / std::sqrt(1.0 - sched.alpha_bar(t)));
  EXPECT_NEAR(training_target_residual(exact, z, t, sched), 0.0, 1e-28);
  double msq = 0.0;
  for (double v : z.values()) msq += v * v;
  EXPECT_NEAR(training_target_residual(zeros_like(z), z, t, sched), msq / z.size(), 1e-15);
}

TEST(Residual, ElementwiseOracleAtHalfAlphaBar) {
  const auto sched = NoiseSchedule::from_alphas({0.5});
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Image s = gaussian_image(2, 3, 5, rng);
    const Image z = gaussian_image(2, 3, 5, rng);
    double ref = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) ref += std::pow(std::sqrt(0.5) * s[i] + z[i], 2);
    ref /= static_cast<double>(z.size());
    const double got = training_target_residual(s, z, 1, sched);
    EXPECT_NEAR(got, ref, 1e-10);
    EXPECT_GE(got, 0.0);
  }
}

TEST(StochasticCondition, ForcedBranches) {
  std::mt19937_64 rng(3);
  auto data = gaussian_set(8, 0.1, 0.2, rng);
  for (double p : {0.0, 1.0}) {
    auto cfg = small_config(1);
    cfg.uncond_probability = p;
    ScoreNet net(cfg, small_schedule());
    for (int i = 0; i < 5; ++i) {
      const auto s = net.train_step(data, rng);
      EXPECT_EQ(s.unconditional, p == 1.0 ? s.batch : 0);
    }
  }
}

TEST(StochasticCondition, BinomialFrequency) {
  std::mt19937_64 rng(4);
  const int n = 20000;
  for (double p : {0.1, 0.5}) {
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += draw_unconditional(p, rng) ? 1 : 0;
    const double sd = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(hits, n * p, 3 * sd);
  }
}

TEST(TrainStep, RejectsBadInput) {
  std::mt19937_64 rng(5);
  ScoreNet net(small_config(1), small_schedule());
  std::vector<TrainingPair> bad = {{Image(1, 8, 8), Image(1, 8, 8, 0.7)}};
  EXPECT_THROW(net.train_step(bad, rng), Error);
  std::vector<TrainingPair> wrong = {{Image(3, 8, 8), Image(1, 8, 8)}};
  EXPECT_THROW(net.train_step(wrong, rng), Error);
  EXPECT_THROW(net.train_step({}, rng), Error);
  auto cfg = small_config(1);
  cfg.uncond_probability = 1.5;
  EXPECT_THROW(ScoreNet(cfg, small_schedule()), Error);
  cfg = small_config(1);
  cfg.T = 50;
  EXPECT_THROW(ScoreNet(cfg, small_schedule()), Error);
}

TEST(ScoreNetOracle, UntrainedFiniteAndDeterministic) {
  const auto net = std::make_shared<const ScoreNet>(small_config(7), small_schedule());
  NetScoreOracle oracle(net);
  std::mt19937_64 rng(6);
  const Image x = gaussian_image(1, 8, 8, rng);
  const auto y = condition_from_labels(LabelMap(8, 8, 1), 2);
  const Image a = oracle.score(x, y, 50);
  EXPECT_TRUE(a.same_shape(x));
  EXPECT_TRUE(all_finite(a));
  EXPECT_EQ(a, oracle.score(x, y, 50));
  const auto [c, u] = oracle.score_pair(x, y, 50);
  EXPECT_LE(max_abs_diff(c, a), 1e-5);
  EXPECT_LE(max_abs_diff(u, oracle.score(x, y.sentinel_like(), 50)), 1e-5);
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(8);
  auto data = gaussian_set(16, 0.0, 0.3, rng);
  ScoreNet net(small_config(3), small_schedule());
  for (int i = 0; i < 10; ++i) (void)net.train_step(data, rng);
  const auto dir = std::filesystem::temp_directory_path() / "scorebreak-ckpt-test";
  const auto path = dir / "net.ckpt";
  save_checkpoint(net.checkpoint(), path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(back == net.checkpoint());
  const ScoreNet restored = ScoreNet::from_checkpoint(back);
  EXPECT_EQ(restored.step(), 10);
  EXPECT_EQ(restored.loss_stats().last, net.loss_stats().last);
  const Image xs[] = {data[0].image};
  const Image cs[] = {data[0].mask};
  const int ts[] = {40};
  EXPECT_EQ(restored.scores(xs, cs, ts).front(), net.scores(xs, cs, ts).front());

  // a flipped weight byte is caught by the content hash
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-12, std::ios::end);
    f.put('\x5a');
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Checkpoint, WrongKindRejected) {
  Checkpoint c;
  c.metadata = {{"kind", "victim"}};
  EXPECT_THROW(ScoreNet::from_checkpoint(c), Error);
}

TEST(Training, LossDecreasesOnGaussianData) {
  std::vector<double> early, late;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    auto data = gaussian_set(64, 0.2, 0.1, rng);
    auto held_out = gaussian_set(64, 0.2, 0.1, rng);
    auto cfg = small_config(seed);
    cfg.max_steps = 100;
    ScoreNet net(cfg, small_schedule());
    train_score_net(net, data, rng);
    early.push_back(eval_loss(net, held_out));
    // continue the same run to 2k steps
    auto ckpt = net.checkpoint();
    ckpt.metadata["training"]["max_steps"] = 2000;
    ScoreNet longer = ScoreNet::from_checkpoint(ckpt);
    train_score_net(longer, data, rng);
    EXPECT_EQ(longer.step(), 2000);
    late.push_back(eval_loss(longer, held_out));
  }
  std::sort(early.begin(), early.end());
  std::sort(late.begin(), late.end());
  EXPECT_LT(late[1], early[1]);
}

TEST(Fidelity, AnalyticOracleAgainstItselfIsExact) {
  const auto sched = build_schedule(100);
  const auto spec = constant_mixture({{0.2}}, {1.0}, 0.01, 4, 4);
  AnalyticMixtureOracle oracle(spec, sched);
  std::mt19937_64 rng(9);
  const auto y = condition_from_labels(LabelMap(4, 4, 0), 2);
  const auto r = compare_to_analytic(oracle, spec, y, 0, 50, sched, 20, rng);
  EXPECT_NEAR(r.relative_l2, 0.0, 1e-12);
  EXPECT_NEAR(r.cosine, 1.0, 1e-12);
}
