#pragma once

#include <filesystem>

#include "tta/model.hpp"

namespace tta {

// Checkpoint layout:
//
//   tta-checkpoint v1
//   config arch=tta layers=2 dim=64 heads=4 ffn_dim=256 vocab_size=50 max_len=128 ...
//   tensor token_embedding f32 50 64
//   tensor position_embedding f32 128 64
//   ...
//   <blank line>
//   raw little-endian float32 data of every tensor, in header order
//
// Values are stored at 32 bits; a float model round-trips exactly.

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model);

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace tta
