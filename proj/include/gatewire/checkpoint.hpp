#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gatewire/model.hpp"

namespace gatewire {

// Binary layout, all integers little-endian:
//   "SDN1"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//               prod(dims) x f64 row-major
//   u32 trailer length, UTF-8 JSON NetworkSpec
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace gatewire
