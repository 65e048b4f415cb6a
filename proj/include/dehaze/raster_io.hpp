#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dehaze/raster.hpp"

namespace dehaze {

/// 8-bit grayscale PNG. Reads map v to v/255; writes clamp to [0,1] and round
/// half up, i.e. floor(255 v + 0.5).
Raster read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& image);

/// Quantised value written for intensity v.
std::uint8_t quantize_u8(float v);

/// Label-encoded ROI masks in one PNG: 0 none, 128 ventricle, 255 septum.
struct RoiMasks {
    Mask ventricle;
    Mask septum;
};
inline constexpr std::uint8_t kVentricleLabel = 128;
inline constexpr std::uint8_t kSeptumLabel = 255;
void write_mask_png(const std::filesystem::path& path, const Mask& ventricle, const Mask& septum);
RoiMasks read_mask_png(const std::filesystem::path& path);
/// Single binary mask as 0/255.
void write_binary_png(const std::filesystem::path& path, const Mask& mask);

/// Portable float32 raster: 8-byte magic, u32 height, u32 width, then
/// row-major little-endian float32 values.
inline constexpr char kF32Magic[8] = {'D', 'H', 'Z', 'F', '3', '2', 'R', '\0'};
Raster read_f32(const std::filesystem::path& path);
void write_f32(const std::filesystem::path& path, const Raster& image);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// Regular files in `dir` with the given extension, sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& extension);

} // namespace dehaze
