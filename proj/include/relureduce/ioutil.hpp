#pragma once
#include <string>

namespace relureduce {

// Whole-file read; throws config_error when the file cannot be opened.
std::string read_file(const std::string& path);

// Write to a sibling temp file, then rename over the target, so a crash or a
// failed run never leaves a half-written artifact behind.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace relureduce
