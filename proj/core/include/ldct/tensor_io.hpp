#pragma once

#include <filesystem>

#include "ldct/tensor.hpp"

namespace ldct {

/// ".ten" container: magic "CDT1", u32-LE rank, rank u32-LE extents, then the
/// payload as row-major 32-bit LE IEEE-754 values. No padding, no compression.
///
/// Tensors of rank < 4 on disk are read back with leading extents of 1
/// (a rank-2 H x W slice loads as 1 x 1 x H x W). write_tensor drops leading
/// unit extents down to rank 2 so slice files stay rank 2 on disk.
void write_tensor(const std::filesystem::path& path, const TensorF& t);

TensorF read_tensor(const std::filesystem::path& path);

}  // namespace ldct
