#pragma once

// IMCK named-tensor container.
//
//   "IMCK" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
//   u32 tensor count | per tensor: u32 name length, name, u8 dtype (0 = f32),
//   u8 rank, u32 extents[rank], u64 byte offset, u64 byte length
//   u64 payload length | payload
//
// All integers little-endian; offsets are relative to the payload start.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imusic/nn.hpp"

namespace imusic::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Bundle {
  std::string metadata = "{}";  // JSON object
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

struct TableEntry {
  std::string name;
  std::vector<int> shape;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

struct Inspection {
  std::uint32_t version = 0;
  std::string metadata;
  std::vector<TableEntry> table;
  std::uint64_t payload_bytes = 0;
};

void save(const std::filesystem::path& path, const Bundle& bundle);
// Throws DataError on bad magic, unsupported version, truncation or
// overlapping / out-of-bounds tensor ranges.
Bundle load(const std::filesystem::path& path);
Inspection inspect(const std::filesystem::path& path);

std::string describe(const Inspection& info);

Bundle from_params(const nn::ParamStore& ps, std::string metadata);
// Copies every tensor of the bundle into the same-named parameter.
void to_params(const Bundle& bundle, const nn::ParamStore& ps);

// Optimizer moments live in a sidecar next to the model checkpoint so that
// resumed training continues the step counter and Adam state.
std::filesystem::path adam_sidecar(const std::filesystem::path& model_path);
void save_adam(const std::filesystem::path& path, const nc::Adam& opt);
// No-op when the file does not exist; DataError when it does not match the
// optimizer's parameter shapes.
bool load_adam(const std::filesystem::path& path, nc::Adam& opt);

}  // namespace imusic::ckpt
