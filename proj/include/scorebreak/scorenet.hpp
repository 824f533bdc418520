#ifndef SCOREBREAK_SCORENET_HPP
#define SCOREBREAK_SCORENET_HPP

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/checkpoint.hpp"
#include "scorebreak/networks.hpp"
#include "scorebreak/oracle.hpp"
#include "scorebreak/schedule.hpp"

namespace scorebreak {

struct TrainingConfig {
  /// Probability of the unconditional branch (beta < threshold).
  double uncond_probability = 0.1;
  double learning_rate = 2e-5;
  int batch_size = 16;
  int max_steps = 2000;
  int T = 1000;
  int image_channels = 3;
  int image_height = 32;
  int image_width = 32;
  int condition_channels = 1;
  std::vector<int> widths{16, 32, 32};
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(uncond_probability >= 0.0 && uncond_probability <= 1.0)) {
      throw Error("training: uncond_probability must lie in [0, 1]");
    }
    if (!(learning_rate > 0.0)) throw Error("training: learning_rate must be > 0");
    if (batch_size < 1 || max_steps < 0 || T < 1) throw Error("training: batch_size, max_steps and T must be positive");
    if (image_channels < 1 || image_height < 1 || image_width < 1 || condition_channels < 1) {
      throw Error("training: image and condition sizes must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"uncond_probability", c.uncond_probability},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_steps", c.max_steps},
                     {"T", c.T},
                     {"image_channels", c.image_channels},
                     {"image_height", c.image_height},
                     {"image_width", c.image_width},
                     {"condition_channels", c.condition_channels},
                     {"widths", c.widths},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c = TrainingConfig{};
  c.uncond_probability = j.value("uncond_probability", c.uncond_probability);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.T = j.value("T", c.T);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.image_height = j.value("image_height", c.image_height);
  c.image_width = j.value("image_width", c.image_width);
  c.condition_channels = j.value("condition_channels", c.condition_channels);
  c.widths = j.value("widths", c.widths);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
}

/// Mean over elements of (sqrt(1 - alpha_bar_t) * s + z)^2.
inline double training_target_residual(const Image& predicted_score, const Image& z, int t,
                                       const NoiseSchedule& sched) {
  require_same_shape(predicted_score, z, "training_target_residual");
  const double k = std::sqrt(1.0 - sched.alpha_bar(t));
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = k * predicted_score[i] + z[i];
    total += r * r;
  }
  return z.empty() ? 0.0 : total / static_cast<double>(z.size());
}

/// An image with its normalized mask (values in [-0.5, 0.5]).
struct TrainingPair {
  Image image;
  Image mask;
};

/// Draws the stochastic condition: the sentinel when beta < uncond_probability.
inline bool draw_unconditional(double uncond_probability, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> beta(0.0, 1.0);
  return beta(rng) < uncond_probability;
}

struct StepStats {
  double loss = 0.0;
  int unconditional = 0;
  int batch = 0;
};

struct LossStats {
  double last = 0.0;
  double ema = 0.0;
  long count = 0;

  void update(double loss) {
    last = loss;
    ema = count == 0 ? loss : 0.98 * ema + 0.02 * loss;
    ++count;
  }
};

/// Joint conditional/unconditional noise estimator. The network predicts the
/// noise; the score is -prediction / sqrt(1 - alpha_bar_t).
class ScoreNet {
 public:
  ScoreNet(TrainingConfig cfg, ScheduleSpec schedule_spec)
      : cfg_(std::move(cfg)), schedule_spec_(std::move(schedule_spec)), sched_(build_schedule(schedule_spec_)) {
    cfg_.validate();
    if (cfg_.T != sched_.steps()) throw Error("training: T does not match the schedule");
    nn::UNetConfig net;
    net.in_channels = cfg_.image_channels + cfg_.condition_channels;
    net.out_channels = cfg_.image_channels;
    net.widths = cfg_.widths;
    net.init_seed = cfg_.seed;
    net_ = std::make_unique<nn::UNet>(net);
    make_optimizer();
  }

  /// One optimizer update on `batch`; returns the batch loss.
  StepStats train_step(std::span<const TrainingPair> batch, std::mt19937_64& rng) {
    if (batch.empty()) throw Error("train_step: empty batch");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> tdist(1, sched_.steps());
    const int n = static_cast<int>(batch.size());
    std::vector<Image> noisy;
    std::vector<Image> conds;
    std::vector<Image> noises;
    std::vector<int> ts;
    StepStats stats;
    stats.batch = n;
    for (const TrainingPair& p : batch) {
      check_pair(p);
      const bool uncond = draw_unconditional(cfg_.uncond_probability, rng);
      stats.unconditional += uncond ? 1 : 0;
      conds.push_back(uncond ? Image(p.mask.channels(), p.mask.height(), p.mask.width(), ConditionMap::kSentinelValue)
                             : p.mask);
      const int t = tdist(rng);
      Image z = zeros_like(p.image);
      for (double& v : z.values()) v = normal(rng);
      noisy.push_back(forward_diffuse(p.image, t, z, sched_));
      noises.push_back(std::move(z));
      ts.push_back(t);
    }
    const nn::Tensor input = assemble(noisy, conds);
    nn::Tape tape;
    const nn::Tensor pred = net_->forward(input, ts, &tape);
    nn::Tensor grad(pred.c, pred.n, pred.h, pred.w);
    double loss = 0.0;
    const double total = static_cast<double>(pred.size());
    for (int i = 0; i < n; ++i) {
      const Image eps_hat = nn::unpack(pred, i);
      loss += training_target_residual(noise_to_score(eps_hat, ts[static_cast<std::size_t>(i)]),
                                       noises[static_cast<std::size_t>(i)], ts[static_cast<std::size_t>(i)], sched_);
      for (int c = 0; c < pred.c; ++c) {
        for (int y = 0; y < pred.h; ++y) {
          for (int x = 0; x < pred.w; ++x) {
            const double r = pred.at(c, i, y, x) - noises[static_cast<std::size_t>(i)].at(c, y, x);
            grad.at(c, i, y, x) = static_cast<float>(2.0 * r / total);
          }
        }
      }
    }
    stats.loss = loss / n;
    optimizer_->zero_grad();
    net_->backward(grad, tape);
    optimizer_->step();
    ++step_;
    loss_stats_.update(stats.loss);
    return stats;
  }

  /// Network forward: score for a batch of (x_t, c, t).
  [[nodiscard]] std::vector<Image> scores(std::span<const Image> xs, std::span<const Image> conds,
                                          std::span<const int> ts) const {
    const nn::Tensor pred = net_->forward(assemble(xs, conds), ts, nullptr);
    std::vector<Image> out;
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(noise_to_score(nn::unpack(pred, static_cast<int>(i)), ts[i]));
    return out;
  }

  [[nodiscard]] Image noise_to_score(const Image& eps_hat, int t) const {
    const double k = std::sqrt(1.0 - sched_.alpha_bar(t));
    if (k <= 0.0) throw Error("score: alpha_bar_t = 1 leaves the score undefined");
    return scaled(eps_hat, -1.0 / k);
  }

  [[nodiscard]] Checkpoint checkpoint() const {
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "score_net"},
                     {"network", net_->describe()},
                     {"training", cfg_},
                     {"schedule", schedule_spec_},
                     {"step", step_},
                     {"loss", {{"last", loss_stats_.last}, {"ema", loss_stats_.ema}, {"count", loss_stats_.count}}}};
    ckpt.params = snapshot(*net_);
    return ckpt;
  }

  static ScoreNet from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "score_net") throw Error("checkpoint is not a score network");
    ScoreNet net(ckpt.metadata.at("training").get<TrainingConfig>(),
                 ckpt.metadata.at("schedule").get<ScheduleSpec>());
    restore(*net.net_, ckpt.params);
    net.step_ = ckpt.metadata.value("step", 0L);
    const auto& l = ckpt.metadata.at("loss");
    net.loss_stats_ = {l.value("last", 0.0), l.value("ema", 0.0), l.value("count", 0L)};
    return net;
  }

  [[nodiscard]] const TrainingConfig& config() const { return cfg_; }
  [[nodiscard]] const NoiseSchedule& schedule() const { return sched_; }
  [[nodiscard]] long step() const { return step_; }
  [[nodiscard]] const LossStats& loss_stats() const { return loss_stats_; }
  [[nodiscard]] std::size_t parameter_count() const { return net_->parameter_count(); }
  void set_learning_rate(double lr) { optimizer_->set_learning_rate(static_cast<float>(lr)); }

 private:
  void make_optimizer() {
    nn::AdamConfig a;
    a.learning_rate = static_cast<float>(cfg_.learning_rate);
    optimizer_ = std::make_unique<nn::Adam>(net_->parameters(), a);
  }

  void check_pair(const TrainingPair& p) const {
    if (p.image.channels() != cfg_.image_channels || p.image.height() != cfg_.image_height ||
        p.image.width() != cfg_.image_width) {
      throw Error("train_step: image shape does not match the training config");
    }
    if (p.mask.channels() != cfg_.condition_channels || p.mask.height() != cfg_.image_height ||
        p.mask.width() != cfg_.image_width) {
      throw Error("train_step: mask shape does not match the training config");
    }
    for (double v : p.mask.values()) {
      if (!(v >= -0.5 && v <= 0.5)) throw Error("train_step: mask not normalized to [-0.5, 0.5]");
    }
  }

  [[nodiscard]] nn::Tensor assemble(std::span<const Image> xs, std::span<const Image> conds) const {
    if (xs.size() != conds.size() || xs.empty()) throw Error("score net: mismatched batch");
    std::vector<const Image*> xp;
    std::vector<const Image*> cp;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].channels() != cfg_.image_channels || xs[i].height() != cfg_.image_height ||
          xs[i].width() != cfg_.image_width) {
        throw Error("score net: incompatible image size");
      }
      if (conds[i].channels() != cfg_.condition_channels || conds[i].height() != cfg_.image_height ||
          conds[i].width() != cfg_.image_width) {
        throw Error("score net: incompatible condition channels");
      }
      xp.push_back(&xs[i]);
      cp.push_back(&conds[i]);
    }
    return nn::concat(nn::pack(xp), nn::pack(cp));
  }

  TrainingConfig cfg_;
  ScheduleSpec schedule_spec_;
  NoiseSchedule sched_;
  std::unique_ptr<nn::UNet> net_;
  std::unique_ptr<nn::Adam> optimizer_;
  long step_ = 0;
  LossStats loss_stats_;
};

/// ScoreOracle view of a trained score network; inference is deterministic
/// and reentrant.
class NetScoreOracle final : public ScoreOracle {
 public:
  explicit NetScoreOracle(std::shared_ptr<const ScoreNet> net) : net_(std::move(net)) {}

  [[nodiscard]] Image score(const Image& x_t, const ConditionMap& c, int t) const override {
    const Image xs[] = {x_t};
    const Image cs[] = {c.values()};
    const int ts[] = {t};
    return std::move(net_->scores(xs, cs, ts).front());
  }

  /// Both branches in one batch-of-two forward pass.
  [[nodiscard]] std::pair<Image, Image> score_pair(const Image& x_t, const ConditionMap& y, int t) const override {
    const Image xs[] = {x_t, x_t};
    const Image cs[] = {y.values(), y.sentinel_like().values()};
    const int ts[] = {t, t};
    auto out = net_->scores(xs, cs, ts);
    return {std::move(out[0]), std::move(out[1])};
  }

  [[nodiscard]] const ScoreNet& net() const { return *net_; }

 private:
  std::shared_ptr<const ScoreNet> net_;
};

inline std::shared_ptr<const ScoreOracle> as_oracle(const Checkpoint& ckpt) {
  return std::make_shared<NetScoreOracle>(std::make_shared<const ScoreNet>(ScoreNet::from_checkpoint(ckpt)));
}

/// Trains for cfg.max_steps minus the steps already taken, sampling batches
/// uniformly with replacement. `on_step` is called after every update.
inline void train_score_net(ScoreNet& net, std::span<const TrainingPair> data, std::mt19937_64& rng,
                            const std::function<void(long, const StepStats&)>& on_step = {}) {
  if (data.empty()) throw Error("train_score_net: empty training set");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<TrainingPair> batch;
  while (net.step() < net.config().max_steps) {
    batch.clear();
    for (int i = 0; i < net.config().batch_size; ++i) batch.push_back(data[pick(rng)]);
    const StepStats s = net.train_step(batch, rng);
    if (on_step) on_step(net.step(), s);
  }
}

struct FidelityReport {
  double relative_l2 = 0.0;
  double cosine = 0.0;
};

/// Compares an oracle against the closed-form mixture score at timestep t on
/// points x_t drawn from the diffused mixture. `condition` selects the
/// conditional branch for component `class_id`, or the marginal when it is
/// the sentinel.
inline FidelityReport compare_to_analytic(const ScoreOracle& oracle, const GaussianMixtureSpec& spec,
                                          const ConditionMap& condition, int class_id, int t,
                                          const NoiseSchedule& sched, int points, std::mt19937_64& rng) {
  spec.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::discrete_distribution<int> component(spec.weights.begin(), spec.weights.end());
  double diff_sq = 0.0;
  double ref_sq = 0.0;
  double cos_total = 0.0;
  for (int p = 0; p < points; ++p) {
    const int k = condition.is_sentinel() ? component(rng) : class_id;
    const Image& mu = spec.means[static_cast<std::size_t>(k)];
    Image x0 = zeros_like(mu);
    const double sd = std::sqrt(spec.variance);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = mu[i] + sd * normal(rng);
    Image z = zeros_like(mu);
    for (double& v : z.values()) v = normal(rng);
    const Image xt = forward_diffuse(x0, t, z, sched);
    const Image truth = condition.is_sentinel() ? analytic_marginal_score(spec, xt, t, sched)
                                                : analytic_conditional_score(spec, xt, class_id, t, sched);
    const Image est = oracle.score(xt, condition, t);
    const Image d = axpby(1.0, est, -1.0, truth);
    diff_sq += dot(d, d);
    ref_sq += dot(truth, truth);
    cos_total += dot(est, truth) / (l2_norm(est) * l2_norm(truth) + 1e-300);
  }
  return {std::sqrt(diff_sq / ref_sq), cos_total / points};
}

}  // namespace scorebreak

#endif  // SCOREBREAK_SCORENET_HPP
