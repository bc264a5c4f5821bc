#include "cast/checkpoint.hpp"

#include "cast/binio.hpp"
#include "cast/config.hpp"

namespace cast {

Checkpoint make_checkpoint(const CastModel& model, std::string provenance, std::uint64_t seed) {
  return Checkpoint{model.config(), model.params(), std::move(provenance), seed};
}

CastModel model_from_checkpoint(const Checkpoint& ckpt) { return CastModel(ckpt.config, ckpt.params); }

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.str(ckpt.provenance);
  w.u64(ckpt.seed);
  w.str(model_config_to_json(ckpt.config).dump());
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const Param& p : ckpt.params) {
    w.str(p.name);
    w.u8(kDtypeF32);
    w.u8(p.trainable ? 1 : 0);
    w.u8(p.frozen ? 1 : 0);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(p.value.rows()));
    w.u32(static_cast<std::uint32_t>(p.value.cols()));
    for (double v : p.value.values()) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 8 || in.raw(8) != std::string_view(kCheckpointMagic, 8))
    throw FormatError("not a checkpoint file (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.provenance = in.str();
  ckpt.seed = in.u64();
  try {
    ckpt.config = model_config_from_json(nlohmann::json::parse(in.str()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint model config is malformed: ") + e.what());
  }
  const std::uint32_t n = in.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = in.str();
    const std::uint8_t dtype = in.u8();
    if (dtype != kDtypeF32) throw FormatError("tensor " + name + " has unknown dtype " + std::to_string(dtype));
    const bool trainable = in.u8() != 0;
    const bool frozen = in.u8() != 0;
    const std::uint32_t rank = in.u32();
    if (rank != 2) throw FormatError("tensor " + name + " has unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (static_cast<std::uint64_t>(rows) * cols * 4 > in.remaining())
      throw FormatError("tensor " + name + " payload truncated");
    Matrix value(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : value.values()) v = in.f32();
    const std::size_t idx = ckpt.params.add(std::move(name), std::move(value), frozen);
    ckpt.params[idx].trainable = trainable && !frozen;
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint tensors");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace cast
