#ifndef SCOREBREAK_VICTIM_HPP
#define SCOREBREAK_VICTIM_HPP

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scorebreak/checkpoint.hpp"
#include "scorebreak/data.hpp"
#include "scorebreak/metrics.hpp"
#include "scorebreak/networks.hpp"
#include "scorebreak/oracle.hpp"
#include "scorebreak/target.hpp"

namespace scorebreak {

inline const std::vector<std::string>& victim_architectures() {
  static const std::vector<std::string> archs{"unet", "dilated"};
  return archs;
}

struct VictimSpec {
  std::string architecture = "unet";
  std::string split = "victim-train";
  std::uint64_t seed = 0;

  void validate() const {
    const auto& a = victim_architectures();
    if (std::find(a.begin(), a.end(), architecture) == a.end()) {
      throw Error("victim: unknown architecture '" + architecture + "'");
    }
    check_split_name(split);
    if (split == "score-train") throw Error("victim: must not train on the score model's split");
  }
};

inline void to_json(nlohmann::json& j, const VictimSpec& s) {
  j = nlohmann::json{{"architecture", s.architecture}, {"split", s.split}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, VictimSpec& s) {
  s = VictimSpec{};
  s.architecture = j.value("architecture", s.architecture);
  s.split = j.value("split", s.split);
  s.seed = j.value("seed", s.seed);
}

struct VictimTrainingConfig {
  int steps = 400;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double gate_miou = 0.8;
};

inline void to_json(nlohmann::json& j, const VictimTrainingConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"gate_miou", c.gate_miou}};
}

inline void from_json(const nlohmann::json& j, VictimTrainingConfig& c) {
  c = VictimTrainingConfig{};
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.gate_miou = j.value("gate_miou", c.gate_miou);
}

struct GateReport {
  double train_miou = 0.0;
  double val_miou = 0.0;
  double threshold = 0.8;
  bool passed = false;
};

/// Mean per-image mIoU of a target's hard predictions.
inline double mean_miou(const QueryTarget& target, const std::vector<Sample>& samples) {
  if (samples.empty()) throw Error("mean_miou: empty sample set");
  double s = 0.0;
  for (const Sample& smp : samples) {
    s += miou_acc(hard_labels(target.predict(smp.image)), smp.labels, target.num_classes()).miou;
  }
  return s / static_cast<double>(samples.size());
}

/// A trained toy segmenter: both a black-box query target and, for the
/// white-box baselines, a gradient provider.
class Segmenter final : public QueryTarget, public GradientProvider {
 public:
  Segmenter(VictimSpec spec, int channels, int num_classes) : spec_(std::move(spec)), num_classes_(num_classes) {
    spec_.validate();
    condition_channels(num_classes);
    const int out = num_classes == 2 ? 1 : num_classes;
    if (spec_.architecture == "unet") {
      nn::UNetConfig cfg;
      cfg.in_channels = channels;
      cfg.out_channels = out;
      cfg.widths = {16, 32};
      cfg.embed_dim = 0;
      cfg.init_seed = spec_.seed;
      net_ = std::make_unique<nn::UNet>(cfg);
    } else {
      nn::DilatedConfig cfg;
      cfg.in_channels = channels;
      cfg.out_channels = out;
      cfg.init_seed = spec_.seed;
      net_ = std::make_unique<nn::DilatedNet>(cfg);
    }
  }

  [[nodiscard]] Image predict(const Image& x) const override { return probabilities(logits(nn::pack(x)), 0); }

  [[nodiscard]] int num_classes() const override { return num_classes_; }

  /// Mean per-pixel cross-entropy and its input gradient; parameters are
  /// not touched, so concurrent calls are safe.
  [[nodiscard]] LossGradient loss_gradient(const Image& x, const LabelMap& y) const override {
    nn::Tape tape;
    const nn::Tensor z = net_->forward(nn::pack(x), {}, &tape);
    const Image probs = probabilities(z, 0);
    nn::Tensor dz = logit_gradient(z, probs, y, 0, 1.0 / static_cast<double>(y.size()));
    const nn::Tensor dx = net_->backward(dz, tape, false);
    return {segmentation_loss(probs, y), nn::unpack(dx, 0)};
  }

  /// One Adam update on a batch; returns the mean loss.
  double train_step(const std::vector<const Sample*>& batch, nn::Adam& opt) {
    std::vector<const Image*> xs;
    for (const Sample* s : batch) xs.push_back(&s->image);
    nn::Tape tape;
    const nn::Tensor z = net_->forward(nn::pack(xs), {}, &tape);
    nn::Tensor dz(z.c, z.n, z.h, z.w);
    double loss = 0.0;
    const double scale = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(z.spatial()));
    for (int i = 0; i < z.n; ++i) {
      const Image probs = probabilities(z, i);
      const LabelMap& y = batch[static_cast<std::size_t>(i)]->labels;
      loss += segmentation_loss(probs, y);
      const nn::Tensor g = logit_gradient(z, probs, y, i, scale);
      for (std::size_t k = 0; k < g.size(); ++k) dz.v[k] += g.v[k];
    }
    opt.zero_grad();
    net_->backward(dz, tape);
    opt.step();
    return loss / static_cast<double>(batch.size());
  }

  [[nodiscard]] std::vector<nn::Param*> parameters() { return net_->parameters(); }
  [[nodiscard]] const VictimSpec& spec() const { return spec_; }
  [[nodiscard]] const GateReport& gate() const { return gate_; }
  void set_gate(GateReport g) { gate_ = g; }

  /// Experiments call this before measuring damage on the victim.
  void require_gate() const {
    if (!gate_.passed) {
      throw Error("victim '" + spec_.architecture + "' (seed " + std::to_string(spec_.seed) +
                  ") did not pass the clean-mIoU gate: " + std::to_string(gate_.val_miou) + " < " +
                  std::to_string(gate_.threshold));
    }
  }

  [[nodiscard]] Checkpoint checkpoint() const {
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "victim"},
                     {"network", net_->describe()},
                     {"spec", spec_},
                     {"channels", channels()},
                     {"num_classes", num_classes_},
                     {"gate",
                      {{"train_miou", gate_.train_miou},
                       {"val_miou", gate_.val_miou},
                       {"threshold", gate_.threshold},
                       {"passed", gate_.passed}}}};
    ckpt.params = snapshot(*net_);
    return ckpt;
  }

  static Segmenter from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "victim") throw Error("checkpoint is not a victim");
    Segmenter s(ckpt.metadata.at("spec").get<VictimSpec>(), ckpt.metadata.at("channels").get<int>(),
                ckpt.metadata.at("num_classes").get<int>());
    restore(*s.net_, ckpt.params);
    const auto& g = ckpt.metadata.at("gate");
    s.gate_ = {g.value("train_miou", 0.0), g.value("val_miou", 0.0), g.value("threshold", 0.8),
               g.value("passed", false)};
    return s;
  }

 private:
  [[nodiscard]] int channels() const {
    const auto desc = net_->describe();
    return desc.at("config").at("in_channels").get<int>();
  }

  [[nodiscard]] nn::Tensor logits(const nn::Tensor& x) const { return net_->forward(x, {}, nullptr); }

  [[nodiscard]] Image probabilities(const nn::Tensor& z, int index) const {
    Image p = nn::unpack(z, index);
    if (p.channels() == 1) {
      for (double& v : p.values()) v = 1.0 / (1.0 + std::exp(-v));
      return p;
    }
    for (int y = 0; y < p.height(); ++y) {
      for (int x = 0; x < p.width(); ++x) {
        double mx = p.at(0, y, x);
        for (int k = 1; k < p.channels(); ++k) mx = std::max(mx, p.at(k, y, x));
        double total = 0.0;
        for (int k = 0; k < p.channels(); ++k) total += (p.at(k, y, x) = std::exp(p.at(k, y, x) - mx));
        for (int k = 0; k < p.channels(); ++k) p.at(k, y, x) /= total;
      }
    }
    return p;
  }

  // d(cross-entropy)/d(logits) for sample `index`, scaled; other samples zero.
  static nn::Tensor logit_gradient(const nn::Tensor& z, const Image& probs, const LabelMap& y, int index,
                                   double scale) {
    nn::Tensor g(z.c, z.n, z.h, z.w);
    for (int r = 0; r < z.h; ++r) {
      for (int c = 0; c < z.w; ++c) {
        const int l = y.at(r, c);
        if (z.c == 1) {
          g.at(0, index, r, c) = static_cast<float>(scale * (probs.at(0, r, c) - (l == 1 ? 1.0 : 0.0)));
        } else {
          for (int k = 0; k < z.c; ++k) {
            g.at(k, index, r, c) = static_cast<float>(scale * (probs.at(k, r, c) - (l == k ? 1.0 : 0.0)));
          }
        }
      }
    }
    return g;
  }

  VictimSpec spec_;
  int num_classes_ = 2;
  std::unique_ptr<nn::Network> net_;
  GateReport gate_;
};

/// Trains a victim and records whether it clears the clean-mIoU gate on
/// `val`. A victim that misses the gate is returned flagged, not thrown.
inline Segmenter train_victim(const VictimSpec& spec, const std::vector<Sample>& train, const std::vector<Sample>& val,
                              const VictimTrainingConfig& cfg, int num_classes) {
  spec.validate();
  if (train.empty() || val.empty()) throw Error("train_victim: empty training or validation set");
  if (cfg.steps < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw Error("train_victim: bad hyperparameters");
  }
  Segmenter net(spec, train.front().image.channels(), num_classes);
  nn::AdamConfig a;
  a.learning_rate = static_cast<float>(cfg.learning_rate);
  nn::Adam opt(net.parameters(), a);
  std::mt19937_64 rng(spec.seed ^ 0x5eedf00dULL);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<const Sample*> batch;
  for (int step = 0; step < cfg.steps; ++step) {
    batch.clear();
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&train[pick(rng)]);
    net.train_step(batch, opt);
  }
  GateReport g;
  g.threshold = cfg.gate_miou;
  g.train_miou = mean_miou(net, train);
  g.val_miou = mean_miou(net, val);
  g.passed = g.val_miou >= cfg.gate_miou;
  net.set_gate(g);
  return net;
}

/// Throws unless no sample id occurs in both sets.
inline void require_disjoint(const std::vector<Sample>& victim_data, const std::vector<Sample>& score_data) {
  if (!splits_disjoint(victim_data, score_data)) {
    throw Error("victim and score-model training data share sample ids");
  }
}

/// Closed-form per-pixel Bayes classifier of a mixture texture model.
/// Binary mixtures return p(class 1); otherwise one channel per class.
class BayesVictim final : public QueryTarget, public GradientProvider {
 public:
  explicit BayesVictim(GaussianMixtureSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.components() < 2) throw Error("bayes_victim: needs at least two classes");
  }

  [[nodiscard]] Image predict(const Image& x) const override {
    const Image post = pixel_posterior(spec_, x, 1.0);
    if (spec_.components() != 2) return post;
    Image out(1, post.height(), post.width());
    for (int y = 0; y < post.height(); ++y) {
      for (int c = 0; c < post.width(); ++c) out.at(0, y, c) = post.at(1, y, c);
    }
    return out;
  }

  [[nodiscard]] int num_classes() const override { return spec_.components(); }

  /// Cross-entropy gradient: sum_k (p_k - [k = y]) (mu_k - x) / variance, per pixel.
  [[nodiscard]] LossGradient loss_gradient(const Image& x, const LabelMap& y) const override {
    const Image post = pixel_posterior(spec_, x, 1.0);
    Image g = zeros_like(x);
    const double scale = 1.0 / (spec_.variance * static_cast<double>(y.size()));
    for (int r = 0; r < x.height(); ++r) {
      for (int c = 0; c < x.width(); ++c) {
        for (int k = 0; k < spec_.components(); ++k) {
          const double w = post.at(k, r, c) - (y.at(r, c) == k ? 1.0 : 0.0);
          const Image& mu = spec_.means[static_cast<std::size_t>(k)];
          for (int ch = 0; ch < x.channels(); ++ch) g.at(ch, r, c) += scale * w * (mu.at(ch, r, c) - x.at(ch, r, c));
        }
      }
    }
    return {segmentation_loss(predict(x), y), std::move(g)};
  }

  [[nodiscard]] const GaussianMixtureSpec& spec() const { return spec_; }

 private:
  GaussianMixtureSpec spec_;
};

inline BayesVictim bayes_victim(const GaussianMixtureSpec& spec) { return BayesVictim(spec); }

}  // namespace scorebreak

#endif  // SCOREBREAK_VICTIM_HPP
