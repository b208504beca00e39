#pragma once

#include <string>

#include "core/image.hpp"

namespace morphsdf {

// 8-bit PNG io. Values are quantized with round(v*255) on save, so a
// save/load round trip is within 1/255 per channel for inputs in [0,1].
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path);

// Depth/plain float grids: magic "MSDP", i32 width, i32 height, then
// row-major f32 values.
void save_float_grid(const std::string& path, const Image& img);
Image load_float_grid(const std::string& path);

}  // namespace morphsdf
