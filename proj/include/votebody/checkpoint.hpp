#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "votebody/optimizer.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// Binary tensor archive. Layout, all little-endian:
//   "VHMR" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 extent per axis | f32 payload
inline constexpr uint32_t kArchiveVersion = 1;
inline constexpr const char kArchiveMagic[4] = {'V', 'H', 'M', 'R'};
inline constexpr const char* kAdamMSuffix = ".adam_m";
inline constexpr const char* kAdamVSuffix = ".adam_v";
inline constexpr const char* kOptimStepName = "optim.step";

using ArchiveEntry = std::pair<std::string, Tensor<float>>;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("archive truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("archive truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void write_archive(const std::string& path, const std::vector<ArchiveEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kArchiveMagic, 4);
  detail::put_u32(os, kArchiveVersion);
  detail::put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape) detail::put_u64(os, static_cast<uint64_t>(e));
    for (float v : t.data) detail::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<ArchiveEntry> read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kArchiveMagic, 4) != 0)
    throw std::runtime_error("not a tensor archive: " + path);
  const uint32_t version = detail::get_u32(is);
  if (version != kArchiveVersion)
    throw std::runtime_error("unsupported archive version " + std::to_string(version) + " in " + path);
  const uint32_t count = detail::get_u32(is);
  std::vector<ArchiveEntry> entries;
  entries.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("archive truncated");
    const uint32_t rank = detail::get_u32(is);
    if (rank > 8) throw std::runtime_error("implausible rank " + std::to_string(rank) + " in " + path);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(detail::get_u64(is));
    Tensor<float> t(rank == 0 ? Shape{1} : shape);
    if (rank == 0) t.shape = {1};
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = detail::get_f32(is);
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

// Checkpoint = parameters, then Adam moments under reserved suffixes, then the
// optimizer step count. Payload is always f32, whatever the compute scalar.
template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params, const Adam<S>* optim = nullptr) {
  std::vector<ArchiveEntry> entries;
  for (const auto& name : params.names())
    entries.emplace_back(name, params.at(name).template cast<float>());
  if (optim) {
    for (const auto& name : params.names()) {
      if (!optim->has_moments(name)) continue;
      entries.emplace_back(name + kAdamMSuffix, optim->m(name));
      entries.emplace_back(name + kAdamVSuffix, optim->v(name));
    }
    Tensor<float> step({1});
    step.data[0] = static_cast<float>(optim->step_count());
    entries.emplace_back(kOptimStepName, std::move(step));
  }
  write_archive(path, entries);
}

template <typename S>
void load_checkpoint(const std::string& path, ParamStore<S>& params, Adam<S>* optim = nullptr) {
  const auto entries = read_archive(path);
  std::unordered_map<std::string, const Tensor<float>*> table;
  for (const auto& [name, t] : entries) table[name] = &t;
  for (const auto& name : params.names()) {
    auto it = table.find(name);
    if (it == table.end()) throw std::runtime_error("checkpoint missing parameter: " + name);
    if (it->second->shape != params.at(name).shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": file has " +
                               shape_str(it->second->shape) + ", model expects " +
                               shape_str(params.at(name).shape));
    params.at(name) = it->second->template cast<S>();
  }
  if (optim) {
    for (const auto& name : params.names()) {
      auto mit = table.find(name + kAdamMSuffix);
      auto vit = table.find(name + kAdamVSuffix);
      if (mit != table.end() && vit != table.end())
        optim->set_moments(name, *mit->second, *vit->second);
    }
    if (auto sit = table.find(kOptimStepName); sit != table.end())
      optim->set_step_count(static_cast<int64_t>(sit->second->data[0]));
  }
}

}  // namespace votebody
