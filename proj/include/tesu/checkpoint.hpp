#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "tesu/tensor.hpp"

namespace tesu {

enum class ComponentTag : std::uint8_t {
  kUnifiedEncoder = 1,
  kLanguageModel = 2,
  kProjector = 3,
};

const char* component_name(ComponentTag tag);

// Binary layout (little-endian):
//   "TESU" | u32 version | u8 component tag | u32 tensor count
//   per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data
struct Checkpoint {
  ComponentTag tag = ComponentTag::kUnifiedEncoder;
  NamedTensors tensors;

  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigHashTensor = "meta.config_hash";

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The run-config hash travels as an 8-element tensor of byte values so it
// fits the f32-only tensor payload exactly.
void set_config_hash(Checkpoint& ckpt, std::uint64_t hash);
std::optional<std::uint64_t> config_hash(const Checkpoint& ckpt);

// Model tensors only (drops meta.* entries).
NamedTensors model_tensors(const Checkpoint& ckpt);

}  // namespace tesu
