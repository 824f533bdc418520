#ifndef SCOREBREAK_CHECKPOINT_HPP
#define SCOREBREAK_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorebreak/networks.hpp"

namespace scorebreak {

/// Versioned weight container shared by score networks and victims.
///
/// Layout (little-endian):
///   8 bytes  magic "SBCKPT\0\1"
///   u32      format version
///   u64      header length, then a JSON header (metadata + parameter table)
///   per parameter: raw float32 values in parameter order
///   u64      FNV-1a hash of all weight bytes
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata;  // network description, configs, counters
  std::vector<nn::Param> params;

  bool operator==(const Checkpoint& o) const {
    if (metadata != o.metadata || params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& a = params[i];
      const auto& b = o.params[i];
      if (a.name != b.name || a.shape != b.shape || a.value.size() != b.value.size()) return false;
      if (std::memcmp(a.value.data(), b.value.data(), a.value.size() * sizeof(float)) != 0) return false;
    }
    return true;
  }
};

namespace detail {

inline constexpr std::array<char, 8> kMagic{'S', 'B', 'C', 'K', 'P', 'T', '\0', '\1'};

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot write " + tmp.string());
    nlohmann::json header = {{"metadata", ckpt.metadata}, {"params", nlohmann::json::array()}};
    for (const auto& p : ckpt.params) header["params"].push_back({{"name", p.name}, {"shape", p.shape}});
    const std::string text = header.dump();
    out.write(detail::kMagic.data(), detail::kMagic.size());
    detail::write_pod<std::uint32_t>(out, Checkpoint::kVersion);
    detail::write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint64_t h = detail::kFnvOffset;
    for (const auto& p : ckpt.params) {
      const std::size_t bytes = p.value.size() * sizeof(float);
      out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(bytes));
      h = detail::fnv1a(h, p.value.data(), bytes);
    }
    detail::write_pod<std::uint64_t>(out, h);
    if (!out) throw Error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != detail::kMagic) throw Error("checkpoint: bad magic in " + path.string());
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto len = detail::read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.metadata = header.at("metadata");
  std::uint64_t h = detail::kFnvOffset;
  for (const auto& pj : header.at("params")) {
    nn::Param p(pj.at("name").get<std::string>(), pj.at("shape").get<std::vector<int>>());
    const std::size_t bytes = p.value.size() * sizeof(float);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error("checkpoint: truncated weights");
    h = detail::fnv1a(h, p.value.data(), bytes);
    p.grad.assign(p.value.size(), 0.0f);
    ckpt.params.push_back(std::move(p));
  }
  if (detail::read_pod<std::uint64_t>(in) != h) throw Error("checkpoint: weight hash mismatch in " + path.string());
  return ckpt;
}

/// Copies a network's parameters into a checkpoint.
inline std::vector<nn::Param> snapshot(nn::Network& net) {
  std::vector<nn::Param> out;
  for (const nn::Param* p : net.parameters()) {
    nn::Param copy(p->name, p->shape);
    copy.value = p->value;
    out.push_back(std::move(copy));
  }
  return out;
}

/// Loads checkpoint weights into a network with a matching parameter table.
inline void restore(nn::Network& net, const std::vector<nn::Param>& params) {
  auto dst = net.parameters();
  if (dst.size() != params.size()) throw Error("checkpoint: parameter count does not match the network");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != params[i].name || dst[i]->shape != params[i].shape) {
      throw Error("checkpoint: parameter '" + params[i].name + "' does not match network layout");
    }
    dst[i]->value = params[i].value;
  }
}

}  // namespace scorebreak

#endif  // SCOREBREAK_CHECKPOINT_HPP
