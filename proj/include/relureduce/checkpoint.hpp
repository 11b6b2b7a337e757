#pragma once
#include <string>

#include "relureduce/engine.hpp"

namespace relureduce {

// Snapshot layout (little-endian throughout): "RRDK1" magic, u64 metadata
// length, metadata (the graph as canonical JSON), u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 ndims, u32 dims, float32 data.
// Tensors are ordered by name, so load -> save reproduces the bytes exactly.
std::string checkpoint_bytes(const ModelF& m);
ModelF checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const std::string& path, const ModelF& m);
ModelF load_checkpoint(const std::string& path);

}  // namespace relureduce
