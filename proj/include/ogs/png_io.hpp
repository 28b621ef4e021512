#pragma once

#include <filesystem>

#include "ogs/tensor.hpp"

namespace ogs {

// 8-bit RGB PNG I/O. Values map linearly: byte b -> b/255 on read,
// round(255 * clamp(v, 0, 1)) on write, so write->read->write is stable.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

} // namespace ogs
