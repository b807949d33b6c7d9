#pragma once

#include <cstdint>
#include <string>

#include "sfusion/models.h"

namespace sfusion {

// Binary layout, all integers and floats little-endian:
//   "SFCK" | u32 version | u32 kind | u64 vocab hash
//   u32 n_dims | u64 dims[n_dims]
//   u32 n_tensors | per tensor: u32 rank | u64 shape[rank] | f64 values[]
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kLm = 1, kAm = 2 };

void save_checkpoint(const LstmLm& lm, std::uint64_t vocab_hash, const std::string& path);
void save_checkpoint(const AttentionAm& am, std::uint64_t vocab_hash, const std::string& path);

// Refuses (ParseError) on a version, kind or vocab-hash mismatch and on
// truncated or malformed files.
LstmLm load_lm_checkpoint(const std::string& path, std::uint64_t vocab_hash);
AttentionAm load_am_checkpoint(const std::string& path, std::uint64_t vocab_hash);

}  // namespace sfusion
