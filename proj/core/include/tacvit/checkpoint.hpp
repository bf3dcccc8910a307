#pragma once

#include <map>
#include <string>
#include <vector>

#include "tacvit/tensor.hpp"

namespace tacvit {

// "TVT1" checkpoint: magic, u32 LE tensor count, then per tensor
// u16 name length, name bytes, u8 rank, rank x u32 dims, f32 LE values.
// Names are dotted hierarchical paths.

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_tvt1(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tvt1(const std::string& path);

}  // namespace tacvit
