#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fw/tensor.hpp"

namespace fw {

// FWCK container: "FWCK" | u32 version=1 | u32 entry count | per entry
// u16 name length | name | u32 ndim | ndim x u32 dims | f32 payload (LE).
// Entries are written in name order so identical state gives identical bytes.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace fw
