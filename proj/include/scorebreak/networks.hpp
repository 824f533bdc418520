#ifndef SCOREBREAK_NETWORKS_HPP
#define SCOREBREAK_NETWORKS_HPP

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorebreak/nn.hpp"

namespace scorebreak::nn {

/// A trainable network over [C][N][H][W] tensors. `timesteps` is ignored by
/// networks without time conditioning.
class Network {
 public:
  virtual ~Network() = default;
  [[nodiscard]] virtual Tensor forward(const Tensor& x, std::span<const int> timesteps, Tape* tape) const = 0;
  /// Pops the forward tape, accumulates parameter gradients, returns dL/dx.
  virtual Tensor backward(const Tensor& dy, Tape& tape, bool accumulate = true) = 0;
  virtual std::vector<Param*> parameters() = 0;
  [[nodiscard]] virtual nlohmann::json describe() const = 0;

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (const Param* p : parameters()) n += p->size();
    return n;
  }
};

/// conv3x3 -> [FiLM(emb)] -> SiLU -> conv3x3, plus a (projected) residual.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int cin, int cout, int embed_dim, std::mt19937_64& rng)
      : conv1_(name + ".conv1", cin, cout, 3), conv2_(name + ".conv2", cout, cout, 3) {
    conv1_.init(rng);
    conv2_.init(rng, 0.5f);
    if (cin != cout) {
      proj_.emplace(name + ".proj", cin, cout, 1);
      proj_->init(rng, 0.7f);
    }
    if (embed_dim > 0) {
      film_.emplace(name + ".film", embed_dim, 2 * cout, 1);
      film_->zero_init();
    }
  }

  [[nodiscard]] Tensor forward(const Tensor& x, const Tensor* emb, Tape* tape) const {
    Tensor h = conv1_.forward(x, tape);
    if (film_) h = FiLM::forward(h, film_->forward(*emb, tape), tape);
    h = SiLU::forward(h, tape);
    h = conv2_.forward(h, tape);
    if (proj_) {
      add_inplace(h, proj_->forward(x, tape));
    } else {
      add_inplace(h, x);
    }
    return h;
  }

  /// Returns dx; adds the embedding gradient into `demb` when time-conditioned.
  Tensor backward(const Tensor& dy, Tape& tape, Tensor* demb, bool accumulate) {
    Tensor dskip = proj_ ? proj_->backward(dy, tape, accumulate) : dy;
    Tensor dh = conv2_.backward(dy, tape, accumulate);
    dh = SiLU::backward(dh, tape);
    if (film_) {
      auto [dpre, dfilm] = FiLM::backward(dh, tape);
      Tensor de = film_->backward(dfilm, tape, accumulate);
      add_inplace(*demb, de);
      dh = std::move(dpre);
    }
    Tensor dx = conv1_.backward(dh, tape, accumulate);
    add_inplace(dx, dskip);
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    for (Param* p : conv1_.params()) out.push_back(p);
    for (Param* p : conv2_.params()) out.push_back(p);
    if (proj_) {
      for (Param* p : proj_->params()) out.push_back(p);
    }
    if (film_) {
      for (Param* p : film_->params()) out.push_back(p);
    }
  }

 private:
  Conv2d conv1_;
  Conv2d conv2_;
  std::optional<Conv2d> proj_;
  std::optional<Conv2d> film_;
};

struct UNetConfig {
  int in_channels = 4;
  int out_channels = 3;
  std::vector<int> widths{16, 32, 32};
  /// Timestep conditioning through FiLM; 0 disables it.
  int embed_dim = 64;
  int time_features = 32;
  std::uint64_t init_seed = 0;
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"widths", c.widths},
                     {"embed_dim", c.embed_dim},     {"time_features", c.time_features}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  c = UNetConfig{};
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.widths = j.at("widths").get<std::vector<int>>();
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.time_features = j.value("time_features", c.time_features);
  c.init_seed = j.value("init_seed", c.init_seed);
}

/// U-shaped encoder-decoder: one ResBlock per level, 2x average-pool down,
/// nearest up, skip concatenation, 1x1 output head.
class UNet final : public Network {
 public:
  explicit UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.widths.empty()) throw Error("UNet: needs at least one level");
    std::mt19937_64 rng(cfg_.init_seed);
    const int embed = cfg_.embed_dim;
    if (embed > 0) {
      time1_ = Conv2d("time.fc1", cfg_.time_features, embed, 1);
      time2_ = Conv2d("time.fc2", embed, embed, 1);
      time1_.init(rng);
      time2_.init(rng);
    }
    const int levels = static_cast<int>(cfg_.widths.size());
    int cin = cfg_.in_channels;
    for (int i = 0; i < levels; ++i) {
      enc_.emplace_back("enc" + std::to_string(i), cin, width(i), embed, rng);
      cin = width(i);
    }
    for (int i = 0; i + 1 < levels; ++i) {
      dec_.emplace_back("dec" + std::to_string(i), width(i + 1) + width(i), width(i), embed, rng);
    }
    head_ = Conv2d("head", width(0), cfg_.out_channels, 1);
    head_.init(rng, 0.1f);
  }

  [[nodiscard]] Tensor forward(const Tensor& x, std::span<const int> timesteps, Tape* tape) const override {
    const int levels = static_cast<int>(cfg_.widths.size());
    const int scale = 1 << (levels - 1);
    if (x.h % scale != 0 || x.w % scale != 0) {
      throw Error("UNet: spatial size must be divisible by " + std::to_string(scale));
    }
    std::optional<Tensor> emb;
    if (cfg_.embed_dim > 0) {
      if (static_cast<int>(timesteps.size()) != x.n) throw Error("UNet: one timestep per sample required");
      Tensor e = time1_.forward(timestep_features(timesteps, cfg_.time_features), tape);
      e = SiLU::forward(e, tape);
      e = time2_.forward(e, tape);
      emb = SiLU::forward(e, tape);
    }
    const Tensor* embp = emb ? &*emb : nullptr;
    std::vector<Tensor> skips;
    Tensor h = x;
    for (int i = 0; i < levels; ++i) {
      h = enc_[static_cast<std::size_t>(i)].forward(h, embp, tape);
      if (i + 1 < levels) {
        skips.push_back(h);
        h = avg_pool2(h);
      }
    }
    for (int i = levels - 2; i >= 0; --i) {
      h = concat(upsample2(h), skips[static_cast<std::size_t>(i)]);
      h = dec_[static_cast<std::size_t>(i)].forward(h, embp, tape);
    }
    h = SiLU::forward(h, tape);
    return head_.forward(h, tape);
  }

  Tensor backward(const Tensor& dy, Tape& tape, bool accumulate = true) override {
    const int levels = static_cast<int>(cfg_.widths.size());
    Tensor demb;
    Tensor* dembp = nullptr;
    if (cfg_.embed_dim > 0) {
      demb = Tensor(cfg_.embed_dim, dy.n, 1, 1);
      dembp = &demb;
    }
    Tensor dh = head_.backward(dy, tape, accumulate);
    dh = SiLU::backward(dh, tape);
    std::vector<Tensor> dskips(static_cast<std::size_t>(levels));
    for (int i = 0; i + 1 < levels; ++i) {
      dh = dec_[static_cast<std::size_t>(i)].backward(dh, tape, dembp, accumulate);
      auto [dup, dskip] = split_channels(dh, width(i + 1));
      dskips[static_cast<std::size_t>(i)] = std::move(dskip);
      dh = upsample2_backward(dup);
    }
    for (int i = levels - 1; i >= 0; --i) {
      if (i + 1 < levels) {
        dh = avg_pool2_backward(dh);
        add_inplace(dh, dskips[static_cast<std::size_t>(i)]);
      }
      dh = enc_[static_cast<std::size_t>(i)].backward(dh, tape, dembp, accumulate);
    }
    if (cfg_.embed_dim > 0) {
      Tensor de = SiLU::backward(demb, tape);
      de = time2_.backward(de, tape, accumulate);
      de = SiLU::backward(de, tape);
      time1_.backward(de, tape, accumulate);
    }
    return dh;
  }

  std::vector<Param*> parameters() override {
    std::vector<Param*> out;
    if (cfg_.embed_dim > 0) {
      for (Param* p : time1_.params()) out.push_back(p);
      for (Param* p : time2_.params()) out.push_back(p);
    }
    for (auto& b : enc_) b.collect(out);
    for (auto& b : dec_) b.collect(out);
    for (Param* p : head_.params()) out.push_back(p);
    return out;
  }

  [[nodiscard]] nlohmann::json describe() const override { return {{"kind", "unet"}, {"config", cfg_}}; }
  [[nodiscard]] const UNetConfig& config() const { return cfg_; }

 private:
  [[nodiscard]] int width(int i) const { return cfg_.widths[static_cast<std::size_t>(i)]; }

  UNetConfig cfg_;
  Conv2d time1_;
  Conv2d time2_;
  std::vector<ResBlock> enc_;
  std::vector<ResBlock> dec_;
  Conv2d head_;
};

struct DilatedConfig {
  int in_channels = 3;
  int out_channels = 1;
  int width = 16;
  std::vector<int> dilations{1, 2, 4, 8};
  std::uint64_t init_seed = 0;
};

inline void to_json(nlohmann::json& j, const DilatedConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"out_channels", c.out_channels},
                     {"width", c.width},
                     {"dilations", c.dilations},
                     {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, DilatedConfig& c) {
  c = DilatedConfig{};
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.width = j.value("width", c.width);
  c.dilations = j.value("dilations", c.dilations);
  c.init_seed = j.value("init_seed", c.init_seed);
}

/// Plain full-resolution stack of dilated 3x3 convolutions with ReLU.
class DilatedNet final : public Network {
 public:
  explicit DilatedNet(DilatedConfig cfg) : cfg_(std::move(cfg)) {
    std::mt19937_64 rng(cfg_.init_seed);
    int cin = cfg_.in_channels;
    for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
      layers_.emplace_back("dil" + std::to_string(i), cin, cfg_.width, 3, cfg_.dilations[i]);
      layers_.back().init(rng);
      cin = cfg_.width;
    }
    head_ = Conv2d("head", cin, cfg_.out_channels, 1);
    head_.init(rng, 0.5f);
  }

  [[nodiscard]] Tensor forward(const Tensor& x, std::span<const int>, Tape* tape) const override {
    Tensor h = x;
    for (const auto& l : layers_) h = ReLU::forward(l.forward(h, tape), tape);
    return head_.forward(h, tape);
  }

  Tensor backward(const Tensor& dy, Tape& tape, bool accumulate = true) override {
    Tensor dh = head_.backward(dy, tape, accumulate);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      dh = ReLU::backward(dh, tape);
      dh = it->backward(dh, tape, accumulate);
    }
    return dh;
  }

  std::vector<Param*> parameters() override {
    std::vector<Param*> out;
    for (auto& l : layers_) {
      for (Param* p : l.params()) out.push_back(p);
    }
    for (Param* p : head_.params()) out.push_back(p);
    return out;
  }

  [[nodiscard]] nlohmann::json describe() const override { return {{"kind", "dilated"}, {"config", cfg_}}; }

 private:
  DilatedConfig cfg_;
  std::vector<Conv2d> layers_;
  Conv2d head_;
};

/// Rebuilds a network from describe() output.
inline std::unique_ptr<Network> make_network(const nlohmann::json& desc) {
  const auto kind = desc.at("kind").get<std::string>();
  if (kind == "unet") return std::make_unique<UNet>(desc.at("config").get<UNetConfig>());
  if (kind == "dilated") return std::make_unique<DilatedNet>(desc.at("config").get<DilatedConfig>());
  throw Error("unknown network kind '" + kind + "'");
}

}  // namespace scorebreak::nn

#endif  // SCOREBREAK_NETWORKS_HPP
