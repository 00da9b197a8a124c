#pragma once

// Flat container of named tensors.
//
//   "MDGCKPT1"
//   u32 config length, config bytes (plain key=value text, may be empty)
//   u32 entry count
//   per entry: u32 name length, name bytes, u32 rank, rank x u64 extents,
//              numel x f64 little-endian values

#include <string>
#include <utility>
#include <vector>

#include "mdg/tensor.hpp"

namespace mdg {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::string config;
  std::vector<NamedTensor> entries;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mdg
