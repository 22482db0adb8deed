// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsc/nn.hpp"
#include "gsc/tensor.hpp"

namespace gsc::harness {

// Byte layout (little-endian):
//   "GSCKPT1" | u32 version | u32 entry count
//   per entry: u32 name length | name | u8 dtype (0 = f64) | u32 ndim | u64 dims[ndim] | u64 payload offset
//   u64 payload size | payload
inline constexpr char kCheckpointMagic[] = "GSCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const CheckpointEntry&) const = default;
};

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

std::vector<CheckpointEntry> to_entries(const nn::ParamRefs& params);
// Copies stored values into the referenced tensors; every parameter must be present with its shape.
void assign_entries(const std::vector<CheckpointEntry>& entries, const nn::ParamRefs& params);

void save_params(const std::string& path, const nn::ParamRefs& params);
void load_params(const std::string& path, const nn::ParamRefs& params);

}  // namespace gsc::harness
