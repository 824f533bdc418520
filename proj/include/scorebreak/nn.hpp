#ifndef SCOREBREAK_NN_HPP
#define SCOREBREAK_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "scorebreak/tensor.hpp"

// Minimal CPU training stack: activations are float tensors laid out
// [channel][batch][row][col] so that a convolution is one GEMM over the
// whole batch. Layers are stateless apart from their parameters; forward
// passes push what backward needs onto a Tape, and backward pops it in
// reverse order. A forward pass without a tape is const and reentrant.
namespace scorebreak::nn {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, float fill = 0.0f)
      : c(channels), n(batch), h(height), w(width),
        v(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(n) * h * w; }
  [[nodiscard]] std::size_t spatial() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::size_t size() const { return v.size(); }
  float* channel(int i) { return v.data() + static_cast<std::size_t>(i) * plane(); }
  [[nodiscard]] const float* channel(int i) const { return v.data() + static_cast<std::size_t>(i) * plane(); }
  float& at(int ci, int ni, int y, int x) {
    return v[static_cast<std::size_t>(ci) * plane() + static_cast<std::size_t>(ni) * spatial() +
             static_cast<std::size_t>(y) * w + x];
  }
  [[nodiscard]] float at(int ci, int ni, int y, int x) const {
    return v[static_cast<std::size_t>(ci) * plane() + static_cast<std::size_t>(ni) * spatial() +
             static_cast<std::size_t>(y) * w + x];
  }
  MatMap matrix() { return {v.data(), c, static_cast<Eigen::Index>(plane())}; }
  [[nodiscard]] ConstMatMap matrix() const { return {v.data(), c, static_cast<Eigen::Index>(plane())}; }
};

/// Packs a batch of images into one tensor.
inline Tensor pack(std::span<const Image* const> images) {
  if (images.empty()) throw Error("pack: empty batch");
  const Image& first = *images.front();
  Tensor t(first.channels(), static_cast<int>(images.size()), first.height(), first.width());
  for (std::size_t ni = 0; ni < images.size(); ++ni) {
    const Image& img = *images[ni];
    require_same_shape(img, first, "pack");
    for (int ci = 0; ci < img.channels(); ++ci) {
      const auto src = img.channel(ci);
      float* dst = t.channel(ci) + ni * t.spatial();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
    }
  }
  return t;
}

inline Tensor pack(const Image& image) {
  const Image* p = &image;
  return pack(std::span<const Image* const>(&p, 1));
}

inline Image unpack(const Tensor& t, int index) {
  Image img(t.c, t.h, t.w);
  for (int ci = 0; ci < t.c; ++ci) {
    const float* src = t.channel(ci) + static_cast<std::size_t>(index) * t.spatial();
    auto dst = img.channel(ci);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(src[i]);
  }
  return img;
}

/// Channel concatenation: [a; b].
inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw Error("concat: shape mismatch");
  Tensor out(a.c + b.c, a.n, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

inline std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first) {
  Tensor a(first, t.n, t.h, t.w);
  Tensor b(t.c - first, t.n, t.h, t.w);
  std::copy(t.v.begin(), t.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(t.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), t.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (a.v.size() != b.v.size()) throw Error("add: size mismatch");
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, 0.0f);
    grad.assign(count, 0.0f);
  }
  [[nodiscard]] std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

class Tape {
 public:
  void push(Tensor t) { stack_.push_back(std::move(t)); }
  Tensor pop() {
    if (stack_.empty()) throw Error("tape underflow");
    Tensor t = std::move(stack_.back());
    stack_.pop_back();
    return t;
  }
  [[nodiscard]] bool empty() const { return stack_.empty(); }
  void clear() { stack_.clear(); }

 private:
  std::vector<Tensor> stack_;
};

/// Square-kernel convolution, stride 1, zero "same" padding, optional dilation.
/// With kernel 1 on 1x1 spatial inputs it doubles as a dense layer.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int kernel, int dilation = 1)
      : cin_(cin), cout_(cout), k_(kernel), dil_(dilation),
        weight_(name + ".weight", {cout, cin, kernel, kernel}), bias_(name + ".bias", {cout}) {
    if (kernel % 2 != 1) throw Error("Conv2d: kernel must be odd");
  }

  void init(std::mt19937_64& rng, float gain = 1.0f) {
    const float stddev = gain * std::sqrt(2.0f / static_cast<float>(cin_ * k_ * k_));
    std::normal_distribution<float> normal(0.0f, stddev);
    for (float& w : weight_.value) w = normal(rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  void zero_init() {
    std::fill(weight_.value.begin(), weight_.value.end(), 0.0f);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  [[nodiscard]] Tensor forward(const Tensor& x, Tape* tape) const {
    if (x.c != cin_) throw Error("Conv2d: expected " + std::to_string(cin_) + " input channels");
    Tensor cols = k_ == 1 ? x : im2col(x);
    Tensor y(cout_, x.n, x.h, x.w);
    ConstMatMap wm(weight_.value.data(), cout_, cin_ * k_ * k_);
    y.matrix().noalias() = wm * cols.matrix();
    for (int o = 0; o < cout_; ++o) {
      float* row = y.channel(o);
      const float b = bias_.value[static_cast<std::size_t>(o)];
      for (std::size_t i = 0; i < y.plane(); ++i) row[i] += b;
    }
    if (tape != nullptr) tape->push(std::move(cols));
    return y;
  }

  /// Accumulates parameter gradients and returns the input gradient.
  /// With `accumulate` false only the input gradient is computed and the
  /// layer is left untouched.
  Tensor backward(const Tensor& dy, Tape& tape, bool accumulate = true) {
    const Tensor cols = tape.pop();
    if (accumulate) {
      MatMap gw(weight_.grad.data(), cout_, cin_ * k_ * k_);
      gw.noalias() += dy.matrix() * cols.matrix().transpose();
      for (int o = 0; o < cout_; ++o) {
        const float* row = dy.channel(o);
        double s = 0.0;
        for (std::size_t i = 0; i < dy.plane(); ++i) s += row[i];
        bias_.grad[static_cast<std::size_t>(o)] += static_cast<float>(s);
      }
    }
    ConstMatMap wm(weight_.value.data(), cout_, cin_ * k_ * k_);
    Tensor dcols(cin_ * k_ * k_, dy.n, dy.h, dy.w);
    dcols.matrix().noalias() = wm.transpose() * dy.matrix();
    return k_ == 1 ? dcols : col2im(dcols);
  }

  std::vector<Param*> params() { return {&weight_, &bias_}; }
  [[nodiscard]] int in_channels() const { return cin_; }
  [[nodiscard]] int out_channels() const { return cout_; }

 private:
  [[nodiscard]] Tensor im2col(const Tensor& x) const {
    Tensor cols(cin_ * k_ * k_, x.n, x.h, x.w);
    const int r = k_ / 2;
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const int oy = (ky - r) * dil_;
          const int ox = (kx - r) * dil_;
          float* dst = cols.channel((ci * k_ + ky) * k_ + kx);
          const int x0 = std::max(0, -ox);
          const int x1 = std::min(x.w, x.w - ox);
          for (int ni = 0; ni < x.n; ++ni) {
            for (int y = 0; y < x.h; ++y) {
              float* d = dst + (static_cast<std::size_t>(ni) * x.h + y) * x.w;
              const int sy = y + oy;
              if (sy < 0 || sy >= x.h || x0 >= x1) continue;
              const float* s = x.channel(ci) + (static_cast<std::size_t>(ni) * x.h + sy) * x.w;
              std::memcpy(d + x0, s + x0 + ox, sizeof(float) * static_cast<std::size_t>(x1 - x0));
            }
          }
        }
      }
    }
    return cols;
  }

  [[nodiscard]] Tensor col2im(const Tensor& cols) const {
    Tensor x(cin_, cols.n, cols.h, cols.w);
    const int r = k_ / 2;
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const int oy = (ky - r) * dil_;
          const int ox = (kx - r) * dil_;
          const float* src = cols.channel((ci * k_ + ky) * k_ + kx);
          const int x0 = std::max(0, -ox);
          const int x1 = std::min(x.w, x.w - ox);
          for (int ni = 0; ni < x.n; ++ni) {
            for (int y = 0; y < x.h; ++y) {
              const int sy = y + oy;
              if (sy < 0 || sy >= x.h) continue;
              const float* s = src + (static_cast<std::size_t>(ni) * x.h + y) * x.w;
              float* d = x.channel(ci) + (static_cast<std::size_t>(ni) * x.h + sy) * x.w;
              for (int xx = x0; xx < x1; ++xx) d[xx + ox] += s[xx];
            }
          }
        }
      }
    }
    return x;
  }

  int cin_ = 0;
  int cout_ = 0;
  int k_ = 1;
  int dil_ = 1;
  Param weight_;
  Param bias_;
};

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

struct SiLU {
  static Tensor forward(const Tensor& x, Tape* tape) {
    Tensor y = x;
    for (float& v : y.v) v = v * sigmoidf(v);
    if (tape != nullptr) tape->push(x);
    return y;
  }
  static Tensor backward(const Tensor& dy, Tape& tape) {
    const Tensor x = tape.pop();
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
      const float s = sigmoidf(x.v[i]);
      dx.v[i] *= s * (1.0f + x.v[i] * (1.0f - s));
    }
    return dx;
  }
};

struct ReLU {
  static Tensor forward(const Tensor& x, Tape* tape) {
    Tensor y = x;
    for (float& v : y.v) v = std::max(v, 0.0f);
    if (tape != nullptr) tape->push(y);
    return y;
  }
  static Tensor backward(const Tensor& dy, Tape& tape) {
    const Tensor y = tape.pop();
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
      if (y.v[i] <= 0.0f) dx.v[i] = 0.0f;
    }
    return dx;
  }
};

/// 2x2 average pooling (even spatial sizes).
inline Tensor avg_pool2(const Tensor& x) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw Error("avg_pool2: spatial size must be even");
  Tensor y(x.c, x.n, x.h / 2, x.w / 2);
  for (int ci = 0; ci < x.c; ++ci) {
    for (int ni = 0; ni < x.n; ++ni) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) {
          y.at(ci, ni, yy, xx) = 0.25f * (x.at(ci, ni, 2 * yy, 2 * xx) + x.at(ci, ni, 2 * yy, 2 * xx + 1) +
                                          x.at(ci, ni, 2 * yy + 1, 2 * xx) + x.at(ci, ni, 2 * yy + 1, 2 * xx + 1));
        }
      }
    }
  }
  return y;
}

inline Tensor avg_pool2_backward(const Tensor& dy) {
  Tensor dx(dy.c, dy.n, dy.h * 2, dy.w * 2);
  for (int ci = 0; ci < dx.c; ++ci) {
    for (int ni = 0; ni < dx.n; ++ni) {
      for (int y = 0; y < dx.h; ++y) {
        for (int x = 0; x < dx.w; ++x) dx.at(ci, ni, y, x) = 0.25f * dy.at(ci, ni, y / 2, x / 2);
      }
    }
  }
  return dx;
}

/// Nearest-neighbour 2x upsampling.
inline Tensor upsample2(const Tensor& x) {
  Tensor y(x.c, x.n, x.h * 2, x.w * 2);
  for (int ci = 0; ci < y.c; ++ci) {
    for (int ni = 0; ni < y.n; ++ni) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) y.at(ci, ni, yy, xx) = x.at(ci, ni, yy / 2, xx / 2);
      }
    }
  }
  return y;
}

inline Tensor upsample2_backward(const Tensor& dy) {
  Tensor dx(dy.c, dy.n, dy.h / 2, dy.w / 2);
  for (int ci = 0; ci < dy.c; ++ci) {
    for (int ni = 0; ni < dy.n; ++ni) {
      for (int y = 0; y < dy.h; ++y) {
        for (int x = 0; x < dy.w; ++x) dx.at(ci, ni, y / 2, x / 2) += dy.at(ci, ni, y, x);
      }
    }
  }
  return dx;
}

/// Feature-wise modulation h * (1 + scale) + shift, where `film` holds
/// [scale; shift] per channel and sample as a (2C, N, 1, 1) tensor.
struct FiLM {
  static Tensor forward(const Tensor& h, const Tensor& film, Tape* tape) {
    if (film.c != 2 * h.c || film.n != h.n) throw Error("FiLM: modulation shape mismatch");
    Tensor y = h;
    for (int ci = 0; ci < h.c; ++ci) {
      for (int ni = 0; ni < h.n; ++ni) {
        const float scale = film.at(ci, ni, 0, 0);
        const float shift = film.at(h.c + ci, ni, 0, 0);
        float* row = y.channel(ci) + static_cast<std::size_t>(ni) * h.spatial();
        for (std::size_t i = 0; i < h.spatial(); ++i) row[i] = row[i] * (1.0f + scale) + shift;
      }
    }
    if (tape != nullptr) {
      tape->push(h);
      tape->push(film);
    }
    return y;
  }

  /// Returns {dh, dfilm}.
  static std::pair<Tensor, Tensor> backward(const Tensor& dy, Tape& tape) {
    const Tensor film = tape.pop();
    const Tensor h = tape.pop();
    Tensor dh = dy;
    Tensor dfilm(film.c, film.n, 1, 1);
    for (int ci = 0; ci < h.c; ++ci) {
      for (int ni = 0; ni < h.n; ++ni) {
        const float scale = film.at(ci, ni, 0, 0);
        const std::size_t off = static_cast<std::size_t>(ni) * h.spatial();
        const float* g = dy.channel(ci) + off;
        const float* hv = h.channel(ci) + off;
        float* d = dh.channel(ci) + off;
        double ds = 0.0;
        double dt = 0.0;
        for (std::size_t i = 0; i < h.spatial(); ++i) {
          ds += static_cast<double>(g[i]) * hv[i];
          dt += g[i];
          d[i] = g[i] * (1.0f + scale);
        }
        dfilm.at(ci, ni, 0, 0) = static_cast<float>(ds);
        dfilm.at(h.c + ci, ni, 0, 0) = static_cast<float>(dt);
      }
    }
    return {std::move(dh), std::move(dfilm)};
  }
};

/// Sinusoidal timestep features, (dim, N, 1, 1).
inline Tensor timestep_features(std::span<const int> timesteps, int dim) {
  Tensor t(dim, static_cast<int>(timesteps.size()), 1, 1);
  const int half = dim / 2;
  for (std::size_t ni = 0; ni < timesteps.size(); ++ni) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      const double a = timesteps[ni] * freq;
      t.at(i, static_cast<int>(ni), 0, 0) = static_cast<float>(std::sin(a));
      t.at(half + i, static_cast<int>(ni), 0, 0) = static_cast<float>(std::cos(a));
    }
  }
  return t;
}

struct AdamConfig {
  float learning_rate = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  /// Global gradient-norm clip; <= 0 disables.
  float clip_norm = 1.0f;
};

/// Adaptive moment estimation over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Param* p : params_) {
      m_.emplace_back(p->size(), 0.0f);
      v_.emplace_back(p->size(), 0.0f);
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    float scale = 1.0f;
    if (cfg_.clip_norm > 0.0f) {
      double sq = 0.0;
      for (const Param* p : params_) {
        for (float g : p->grad) sq += static_cast<double>(g) * g;
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = static_cast<float>(cfg_.clip_norm / norm);
    }
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const float g = p.grad[i] * scale;
        m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
        p.value[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
  }

  [[nodiscard]] long steps() const { return t_; }
  void set_learning_rate(float lr) { cfg_.learning_rate = lr; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

}  // namespace scorebreak::nn

#endif  // SCOREBREAK_NN_HPP
