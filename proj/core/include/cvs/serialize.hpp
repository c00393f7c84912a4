#pragma once

#include <filesystem>
#include <iosfwd>

#include "cvs/tensor.hpp"

namespace cvs {

// CVST binary format, little-endian:
//   "CVST" | u32 rank | u64 extent * rank | f64 payload (row-major)
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace cvs
