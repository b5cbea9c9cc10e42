#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "opticam/network.hpp"

namespace opticam::nn {

// Weights file layout (little-endian, no padding):
//   "OCW1" | u32 tensor count | per tensor:
//   u16 name length, UTF-8 name, u8 rank, rank x u32 extents, f64 values.
// Tensors are named "<layer>.<param>"; "meta.input_shape" records (C,H,W).

std::string serialize_weights(const Network& net);

/// Rebuilds the toy architecture described by the file.
Network deserialize_weights(std::string_view bytes);
/// Loads into a given architecture; every tensor must match its shape.
Network deserialize_weights(std::string_view bytes, const Network& architecture);

void save_weights(const Network& net, const std::filesystem::path& path);
Network load_weights(const std::filesystem::path& path);
Network load_weights(const std::filesystem::path& path, const Network& architecture);

}  // namespace opticam::nn
