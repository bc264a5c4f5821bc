#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "cast/backbone.hpp"

namespace cast {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  /// Which stages produced these weights, e.g. "1,2,3" or "base".
  std::string provenance;
  std::uint64_t seed = 0;
};

Checkpoint make_checkpoint(const CastModel& model, std::string provenance, std::uint64_t seed);
CastModel model_from_checkpoint(const Checkpoint& ckpt);

/// Layout: magic, u32 version, provenance string, u64 seed, model config
/// as a JSON string, u32 tensor count, then per tensor: name, u8 dtype,
/// u8 trainable, u8 frozen, u32 rank, u32 dims, float32 payload.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cast
