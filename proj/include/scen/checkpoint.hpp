#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "scen/model.hpp"

namespace scen {

inline constexpr std::string_view kCheckpointMagic = "SCENCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "SCENCKPT" | u32 version
//   config: u32 vocab_size, d_model, n_layers, n_heads, d_ffn, max_seq_len,
//           u8 nonlinearity (0 relu, 1 gelu), u8 norm placement (0 pre-norm),
//           u64 seed
//   vocab:  u32 count, then count x (u32 length, bytes), specials excluded
//   weights: f32 blobs in ModelWeights::tensors() order; shapes follow
//            from the config
std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a of the serialized checkpoint.
std::uint64_t fingerprint(const Checkpoint& ck);

}  // namespace scen
