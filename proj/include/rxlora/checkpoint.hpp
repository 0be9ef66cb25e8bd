#pragma once

// Versioned binary checkpoints.
//
// Layout (all integers little-endian):
//   magic "RXLORACK" | u32 version | u32 content flags
//   config: u64 vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len,
//           lora_rank | f32 lora_alpha
//   u64 tensor count, then per tensor:
//     u32 name length | name bytes | u32 rank | u64 dims[rank] | f32 data[]
// Base and adapter tensors can be written to separate files so adapters
// ship alone.

#include <cstdint>
#include <filesystem>

#include "rxlora/model.hpp"

namespace rxlora {

enum class CheckpointContent : std::uint32_t { kBase = 1, kAdapters = 2, kAll = 3 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     CheckpointContent content = CheckpointContent::kAll);

// Reads a base (or full) checkpoint. Adapters are attached when present.
ModelParams load_checkpoint(const std::filesystem::path& path);

// Replaces the adapters of params with those stored at path. Throws
// CheckpointMismatch when the config or tensor names differ.
void load_adapters(ModelParams& params, const std::filesystem::path& path);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace rxlora
