#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bipoint/deploy.hpp"
#include "bipoint/model.hpp"

namespace bipoint {

// Binary checkpoint, all integers and floats little-endian:
//
//   "BPNT"  u16 version  u8 kind (0 train, 1 deploy)  u8 variant (0xFF for train)
//   spec block: widths (u32 count + u32 each) for point, head, tnet point,
//     tnet head; u32 classes; u32 n_points; u8 flags; u8 bn mode;
//     aggregation (u8 kind, u32 n, f64 delta, u64 mc samples, u64 seed);
//     f64 reg weight, bn eps, bn momentum
//   deploy only: f64 tnet delta, f64 delta
//   u32 layer count, then per layer:
//     u8 chain, u8 tag (0 dense, 1 binary), u8 flags, u8 activation,
//     u32 in, u32 out, u16 name length + name bytes, payload
//
// Training payloads store reals as f64 so a reload reproduces the model
// exactly (latent weights keep training). Deploy payloads store packed sign
// words (u64, the transposed [out x in] layout) and f32 reals.

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint8_t { Train = 0, Deploy = 1 };

std::vector<std::uint8_t> serialize(const Model& model);
std::vector<std::uint8_t> serialize(const DeployModel& model);

using Checkpoint = std::variant<Model, DeployModel>;

/// EncodingError on a bad magic, unknown version or truncated payload.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
void save_checkpoint(const DeployModel& model, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
DeployModel load_deploy(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Human-readable summary of a checkpoint (the `info` subcommand).
std::string describe(const Checkpoint& ckpt);

}  // namespace bipoint
