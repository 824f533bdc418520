#ifndef SCOREBREAK_DATA_HPP
#define SCOREBREAK_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorebreak/oracle.hpp"
#include "scorebreak/scorenet.hpp"
#include "scorebreak/tensor.hpp"

namespace scorebreak {

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"score-train", "victim-train", "eval"};
  return names;
}

inline void check_split_name(const std::string& split) {
  const auto& n = split_names();
  if (std::find(n.begin(), n.end(), split) == n.end()) throw Error("unknown split '" + split + "'");
}

/// Synthetic corpus: shape masks over i.i.d. Gaussian per-pixel textures.
/// Class 0 is background; shapes carry classes 1..K-1.
struct SyntheticSpec {
  std::string shape_family = "ellipses";  // ellipses | rectangles | blobs | mixed
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 2;
  /// Per-class texture mean, one value per channel (internal [-1, 1] units).
  std::vector<std::vector<double>> class_means{{-0.06, -0.06, -0.06}, {0.06, 0.06, 0.06}};
  double texture_sigma = 0.05;
  std::map<std::string, int> counts{{"score-train", 512}, {"victim-train", 256}, {"eval", 32}};
  int min_shapes = 1;
  int max_shapes = 2;
  /// Fraction of the shorter side spanned by a shape's radius range.
  double min_radius = 0.15;
  double max_radius = 0.35;

  void validate() const {
    if (shape_family != "ellipses" && shape_family != "rectangles" && shape_family != "blobs" &&
        shape_family != "mixed") {
      throw Error("data: unknown shape family '" + shape_family + "'");
    }
    if (height < 4 || width < 4 || channels < 1) throw Error("data: image size too small");
    if (num_classes < 2) throw Error("data: num_classes must be >= 2");
    if (static_cast<int>(class_means.size()) != num_classes) throw Error("data: need one texture mean per class");
    for (const auto& m : class_means) {
      if (static_cast<int>(m.size()) != channels) throw Error("data: texture mean needs one value per channel");
      for (double v : m) {
        if (!(v >= -1.0 && v <= 1.0)) throw Error("data: texture means must lie in [-1, 1]");
      }
    }
    if (!(texture_sigma > 0.0)) throw Error("data: texture_sigma must be > 0");
    for (const auto& [split, n] : counts) {
      check_split_name(split);
      if (n < 0) throw Error("data: negative count for split '" + split + "'");
    }
    if (min_shapes < 1 || max_shapes < min_shapes) throw Error("data: bad shape count range");
    if (!(min_radius > 0.0 && max_radius >= min_radius && max_radius <= 0.5)) throw Error("data: bad radius range");
  }

  /// The per-pixel texture model as a mixture with constant class images;
  /// weights are uniform.
  [[nodiscard]] GaussianMixtureSpec texture_mixture() const {
    return constant_mixture(class_means, std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes),
                            texture_sigma * texture_sigma, height, width);
  }

  /// Euclidean distance between the first two class means in texture sigmas.
  [[nodiscard]] double separation() const {
    double s = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double d = class_means[1][static_cast<std::size_t>(c)] - class_means[0][static_cast<std::size_t>(c)];
      s += d * d;
    }
    return std::sqrt(s) / texture_sigma;
  }
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"shape_family", s.shape_family}, {"height", s.height},
                     {"width", s.width},               {"channels", s.channels},
                     {"num_classes", s.num_classes},   {"class_means", s.class_means},
                     {"texture_sigma", s.texture_sigma}, {"counts", s.counts},
                     {"min_shapes", s.min_shapes},     {"max_shapes", s.max_shapes},
                     {"min_radius", s.min_radius},     {"max_radius", s.max_radius}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.shape_family = j.value("shape_family", s.shape_family);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.channels = j.value("channels", s.channels);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.class_means = j.value("class_means", s.class_means);
  s.texture_sigma = j.value("texture_sigma", s.texture_sigma);
  s.counts = j.value("counts", s.counts);
  s.min_shapes = j.value("min_shapes", s.min_shapes);
  s.max_shapes = j.value("max_shapes", s.max_shapes);
  s.min_radius = j.value("min_radius", s.min_radius);
  s.max_radius = j.value("max_radius", s.max_radius);
}

struct Sample {
  std::string id;
  Image image;      // [-1, 1]
  LabelMap labels;  // class ids
};

/// Mask normalized for conditioning, values in [-0.5, 0.5].
inline Image normalized_mask(const LabelMap& labels, int num_classes) {
  return condition_from_labels(labels, num_classes).values();
}

inline std::vector<TrainingPair> training_pairs(const std::vector<Sample>& samples, int num_classes) {
  std::vector<TrainingPair> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back({s.image, normalized_mask(s.labels, num_classes)});
  return out;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  int num_classes = 2;
  nlohmann::json spec;  // generator parameters, if synthetic
  std::vector<std::pair<std::string, std::string>> entries;  // (id, split)

  [[nodiscard]] std::vector<std::string> ids(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& [id, s] : entries) {
      if (s == split) out.push_back(id);
    }
    return out;
  }

  /// Throws if an id appears twice (and therefore possibly in two splits)
  /// or a split name is unknown.
  void check_disjoint() const {
    std::map<std::string, std::string> seen;
    for (const auto& [id, split] : entries) {
      check_split_name(split);
      auto [it, inserted] = seen.emplace(id, split);
      if (!inserted) throw Error("manifest: sample '" + id + "' listed in '" + it->second + "' and '" + split + "'");
    }
  }
};

inline bool splits_disjoint(const std::vector<Sample>& a, const std::vector<Sample>& b) {
  std::set<std::string> ids;
  for (const Sample& s : a) ids.insert(s.id);
  return std::none_of(b.begin(), b.end(), [&](const Sample& s) { return ids.count(s.id) > 0; });
}

namespace detail {

inline std::string split_prefix(const std::string& split) {
  if (split == "score-train") return "st";
  if (split == "victim-train") return "vt";
  return "ev";
}

inline std::string sample_id(const std::string& split, int index) {
  std::ostringstream os;
  os << split_prefix(split) << '-';
  os.width(5);
  os.fill('0');
  os << index;
  return os.str();
}

struct Shape {
  int kind = 0;  // 0 ellipse, 1 rectangle, 2 blob
  double cy = 0, cx = 0, ry = 0, rx = 0, angle = 0;
  std::vector<double> harmonics;  // blob radius modulation: (amp, phase) pairs
  int label = 1;

  [[nodiscard]] bool contains(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    if (kind == 1) return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    double r = 1.0;
    if (kind == 2) {
      const double theta = std::atan2(v, u);
      for (std::size_t k = 0; k + 1 < harmonics.size(); k += 2) {
        r += harmonics[k] * std::cos(static_cast<double>(k / 2 + 2) * theta + harmonics[k + 1]);
      }
    }
    return u * u + v * v <= r * r;
  }
};

inline Shape draw_shape(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Shape sh;
  if (spec.shape_family == "ellipses") {
    sh.kind = 0;
  } else if (spec.shape_family == "rectangles") {
    sh.kind = 1;
  } else if (spec.shape_family == "blobs") {
    sh.kind = 2;
  } else {
    sh.kind = std::uniform_int_distribution<int>(0, 2)(rng);
  }
  const double side = std::min(spec.height, spec.width);
  auto radius = [&] { return side * (spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng)); };
  sh.ry = radius();
  sh.rx = radius();
  sh.cy = spec.height * (0.2 + 0.6 * unit(rng));
  sh.cx = spec.width * (0.2 + 0.6 * unit(rng));
  sh.angle = std::numbers::pi * unit(rng);
  if (sh.kind == 2) {
    for (int k = 0; k < 3; ++k) {
      sh.harmonics.push_back(0.25 * unit(rng) / (k + 1));
      sh.harmonics.push_back(2.0 * std::numbers::pi * unit(rng));
    }
  }
  sh.label = std::uniform_int_distribution<int>(1, spec.num_classes - 1)(rng);
  return sh;
}

}  // namespace detail

/// One sample, determined by (seed, split, index) alone.
inline Sample synthesize(const SyntheticSpec& spec, std::uint64_t seed, const std::string& split, int index) {
  const auto& names = split_names();
  const auto split_index =
      static_cast<std::uint64_t>(std::find(names.begin(), names.end(), split) - names.begin());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split_index), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  Sample s;
  s.id = detail::sample_id(split, index);
  s.labels = LabelMap(spec.height, spec.width, 0);
  const int shapes = std::uniform_int_distribution<int>(spec.min_shapes, spec.max_shapes)(rng);
  for (int i = 0; i < shapes; ++i) {
    const detail::Shape sh = detail::draw_shape(spec, rng);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (sh.contains(y + 0.5, x + 0.5)) s.labels.at(y, x) = sh.label;
      }
    }
  }
  std::normal_distribution<double> normal(0.0, spec.texture_sigma);
  s.image = Image(spec.channels, spec.height, spec.width);
  for (int c = 0; c < spec.channels; ++c) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const auto& mean = spec.class_means[static_cast<std::size_t>(s.labels.at(y, x))];
        s.image.at(c, y, x) = kImageRange.clamp(mean[static_cast<std::size_t>(c)] + normal(rng));
      }
    }
  }
  return s;
}

/// In-memory generation of one split.
inline std::vector<Sample> generate_split(const SyntheticSpec& spec, std::uint64_t seed, const std::string& split) {
  spec.validate();
  check_split_name(split);
  const auto it = spec.counts.find(split);
  const int n = it == spec.counts.end() ? 0 : it->second;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synthesize(spec, seed, split, i));
  return out;
}

/// Quantizes an image to the 8-bit grid it will have after a disk round trip.
inline Image quantize(const Image& x) {
  Image out = x;
  for (double& v : out.values()) v = byte_to_unit(unit_to_byte(v));
  return out;
}

namespace detail {

inline void write_pnm(const std::filesystem::path& path, int channels, int height, int width,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("data: cannot write " + path.string());
  out << (channels == 3 ? "P6" : "P5") << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("data: write failed for " + path.string());
}

struct Pnm {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bytes;  // interleaved
};

inline Pnm read_pnm(const std::filesystem::path& path, const std::string& id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("data: missing file for sample '" + id + "': " + path.string());
  std::string magic;
  int maxval = 0;
  Pnm p;
  in >> magic >> p.width >> p.height >> maxval;
  if (!in || (magic != "P5" && magic != "P6") || p.width <= 0 || p.height <= 0 || maxval != 255) {
    throw Error("data: corrupt image header for sample '" + id + "': " + path.string());
  }
  in.get();
  p.channels = magic == "P6" ? 3 : 1;
  p.bytes.resize(static_cast<std::size_t>(p.channels) * p.height * p.width);
  in.read(reinterpret_cast<char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(p.bytes.size())) {
    throw Error("data: truncated image data for sample '" + id + "': " + path.string());
  }
  return p;
}

}  // namespace detail

/// Writes a sample pair: 8-bit PPM/PGM image and a PGM of class ids.
inline void write_sample(const std::filesystem::path& dir, const Sample& s) {
  const Image& img = s.image;
  if (img.channels() != 1 && img.channels() != 3) throw Error("data: only 1- or 3-channel images can be stored");
  std::vector<std::uint8_t> px(img.size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        px[(static_cast<std::size_t>(y) * img.width() + x) * img.channels() + c] = unit_to_byte(img.at(c, y, x));
      }
    }
  }
  detail::write_pnm(dir / (s.id + ".img"), img.channels(), img.height(), img.width(), px);
  std::vector<std::uint8_t> mk(s.labels.size());
  for (std::size_t i = 0; i < mk.size(); ++i) mk[i] = static_cast<std::uint8_t>(s.labels.labels[i]);
  detail::write_pnm(dir / (s.id + ".mask"), 1, s.labels.height, s.labels.width, mk);
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("data: cannot write " + path.string());
  out << nlohmann::json{{"seed", m.seed},         {"height", m.height},           {"width", m.width},
                        {"channels", m.channels}, {"num_classes", m.num_classes}, {"spec", m.spec}}
             .dump()
      << '\n';
  for (const auto& [id, split] : m.entries) out << nlohmann::json{{"id", id}, {"split", split}}.dump() << '\n';
  if (!out) throw Error("data: write failed for " + path.string());
}

/// Manifest file name inside a corpus root.
inline constexpr const char* kManifestName = "manifest";

/// Generates every split to {root}/{split}/{id}.img|.mask plus {root}/manifest.
inline DatasetManifest generate(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& root) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error("data: cannot create output directory " + root.string() + ": " + ec.message());
  DatasetManifest m;
  m.seed = seed;
  m.height = spec.height;
  m.width = spec.width;
  m.channels = spec.channels;
  m.num_classes = spec.num_classes;
  m.spec = spec;
  for (const std::string& split : split_names()) {
    const auto dir = root / split;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("data: cannot create output directory " + dir.string() + ": " + ec.message());
    for (const Sample& s : generate_split(spec, seed, split)) {
      write_sample(dir, s);
      m.entries.emplace_back(s.id, split);
    }
  }
  m.check_disjoint();
  write_manifest(root / kManifestName, m);
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("data: cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("data: empty manifest " + path.string());
  DatasetManifest m;
  try {
    const auto head = nlohmann::json::parse(line);
    m.seed = head.value("seed", std::uint64_t{0});
    m.height = head.at("height").get<int>();
    m.width = head.at("width").get<int>();
    m.channels = head.at("channels").get<int>();
    m.num_classes = head.at("num_classes").get<int>();
    m.spec = head.value("spec", nlohmann::json::object());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto e = nlohmann::json::parse(line);
      m.entries.emplace_back(e.at("id").get<std::string>(), e.at("split").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("data: malformed manifest " + path.string() + ": " + e.what());
  }
  m.check_disjoint();
  return m;
}

/// Reads an 8-bit image file into the [-1, 1] range.
inline Image load_image(const std::filesystem::path& path, const std::string& id) {
  const detail::Pnm img = detail::read_pnm(path, id);
  Image out(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.at(c, y, x) = byte_to_unit(img.bytes[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c]);
      }
    }
  }
  return out;
}

/// Reads one split listed in a manifest; validates sizes and mask values.
inline std::vector<Sample> load_split(const std::filesystem::path& manifest_path, const std::string& split) {
  check_split_name(split);
  const DatasetManifest m = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path() / split;
  std::vector<Sample> out;
  for (const std::string& id : m.ids(split)) {
    Sample s;
    s.id = id;
    s.image = load_image(dir / (id + ".img"), id);
    const detail::Pnm mask = detail::read_pnm(dir / (id + ".mask"), id);
    if (s.image.channels() != m.channels || s.image.height() != m.height || s.image.width() != m.width) {
      throw Error("data: image size does not match the manifest for sample '" + id + "'");
    }
    if (mask.channels != 1 || mask.height != s.image.height() || mask.width != s.image.width()) {
      throw Error("data: mask/image size mismatch for sample '" + id + "'");
    }
    s.labels = LabelMap(mask.height, mask.width);
    for (std::size_t i = 0; i < mask.bytes.size(); ++i) {
      const int v = mask.bytes[i];
      if (v >= m.num_classes) {
        throw Error("data: mask value " + std::to_string(v) + " outside {0.." + std::to_string(m.num_classes - 1) +
                    "} in sample '" + id + "'");
      }
      s.labels.labels[i] = v;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace scorebreak

#endif  // SCOREBREAK_DATA_HPP
