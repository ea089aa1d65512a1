#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pico/grid.hpp"

namespace pico {

// PGRD: "PGRD" magic, u32 LE height, u32 LE width, u32 LE role tag, then
// height*width float32 LE values in row-major order.
inline constexpr std::size_t pgrd_header_size = 16;
inline constexpr std::string_view pgrd_magic = "PGRD";

std::vector<std::uint8_t> encode_pgrd(const Grid2D& g);
Grid2D decode_pgrd(std::span<const std::uint8_t> bytes);

void write_pgrd(const std::filesystem::path& path, const Grid2D& g);
Grid2D read_pgrd(const std::filesystem::path& path);

/// 8-bit binary PGM (P5); values are clamped to [0, 1] and scaled by 255.
std::vector<std::uint8_t> encode_pgm(const Grid2D& g);
void write_pgm(const std::filesystem::path& path, const Grid2D& g);

/// 8-bit binary PPM (P6) from three equal-shape channel planes.
void write_ppm(const std::filesystem::path& path, std::span<const Grid2D> rgb);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace pico
