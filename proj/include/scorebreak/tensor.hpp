#ifndef SCOREBREAK_TENSOR_HPP
#define SCOREBREAK_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scorebreak {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed interval of admissible pixel values.
struct ValueRange {
  double lo = -1.0;
  double hi = 1.0;

  [[nodiscard]] double width() const { return hi - lo; }
  [[nodiscard]] double clamp(double v) const { return std::clamp(v, lo, hi); }
};

/// Images live zero-centred in [-1, 1]; 8-bit files map v -> (v/255)*2 - 1.
inline constexpr ValueRange kImageRange{-1.0, 1.0};

inline double byte_to_unit(std::uint8_t v) { return (static_cast<double>(v) / 255.0) * 2.0 - 1.0; }

inline std::uint8_t unit_to_byte(double v) {
  const double b = std::round((kImageRange.clamp(v) + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

/// Dense channels x height x width array of doubles (channel-major).
///
/// Used for samples, noise, scores, perturbations, condition maps and
/// probability maps alike; the meaning is carried by the surrounding type.
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw Error("Image: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] bool same_shape(const Image& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  [[nodiscard]] double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }
  std::span<double> channel(int c) { return {data_.data() + static_cast<std::size_t>(c) * pixels(), pixels()}; }
  [[nodiscard]] std::span<const double> channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * pixels(), pixels()};
  }

  bool operator==(const Image& o) const = default;

 private:
  [[nodiscard]] std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw Error(std::string(what) + ": shape mismatch (" + std::to_string(a.channels()) + "x" +
                std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
                std::to_string(b.width()) + ")");
  }
}

inline Image zeros_like(const Image& x) { return Image(x.channels(), x.height(), x.width()); }

/// Elementwise a*x + b*y.
inline Image axpby(double a, const Image& x, double b, const Image& y) {
  require_same_shape(x, y, "axpby");
  Image out = zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

inline Image scaled(const Image& x, double a) {
  Image out = x;
  for (double& v : out.values()) v *= a;
  return out;
}

inline double max_abs(const Image& x) {
  double m = 0.0;
  for (double v : x.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double dot(const Image& a, const Image& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Image& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const Image& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

/// sign with sign(0) = 0.
inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Image clip_to_range(const Image& x, ValueRange range = kImageRange) {
  Image out = x;
  for (double& v : out.values()) v = range.clamp(v);
  return out;
}

/// Per-pixel class ids (height x width).
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int h, int w, int fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace scorebreak

#endif  // SCOREBREAK_TENSOR_HPP
