#pragma once

// Parameter checkpoints: a flat binary container of named tensors
//
//   "IMGCKPT1" | u64 count | { u64 name_len | name | u64 rank | u64 dims[rank] | f64 values[] }*
//
// (all little-endian) plus a text manifest `<path>.manifest` with one
// "name d0xd1" line per tensor.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "imagine/autodiff.hpp"

namespace imagine {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ad::ParameterSet& params);
/// Loads values into an existing set; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ad::ParameterSet& params);

}  // namespace imagine
