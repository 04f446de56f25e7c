#pragma once

#include "mhd/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

// Versioned little-endian binary container for ClientModel snapshots:
//
//   magic "MHDCKPT\0" | u32 version | i64 client_id
//   u32 backbone depth | u8 activation per layer | u32 head count
//   u32 tensor count | per tensor: u32 name length, name bytes,
//                      u32 rank, u64 dims[rank], f64 values[prod(dims)]
//
// Values are stored as raw IEEE-754 bits so round-trips are bit-exact.
namespace mhd::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> serialize(const nn::ClientModel& model);
nn::ClientModel deserialize(std::span<const std::uint8_t> bytes);

void save(const nn::ClientModel& model, const std::filesystem::path& path);
nn::ClientModel load(const std::filesystem::path& path);

}  // namespace mhd::checkpoint
