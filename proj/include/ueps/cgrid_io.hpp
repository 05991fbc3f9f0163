#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ueps/grid.hpp"

namespace ueps {

/// On-disk "CGRID v1": magic "CGRD", u8 version (1), u8 ndim, ndim x u64 LE
/// dims, then row-major little-endian float32 (re, im) pairs.
struct CgridFile {
  std::vector<std::uint64_t> dims;
  std::vector<cplx> data;
};

void write_cgrid(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 std::span<const cplx> data);
CgridFile read_cgrid(const std::filesystem::path& path);

/// (C, H, W) grid written with ndim = 3.
void write_grid(const std::filesystem::path& path, const ComplexGrid& g);
/// Accepts ndim 2 (read as one coil) or 3.
ComplexGrid read_grid(const std::filesystem::path& path);

/// Real image written as ndim = 2 with zero imaginary parts.
void write_image(const std::filesystem::path& path, const RealGrid& img);
/// Real parts of an ndim 2, or single-coil ndim 3, file.
RealGrid read_image(const std::filesystem::path& path);

/// Flat real vector written as ndim = 1 with zero imaginary parts.
void write_vector(const std::filesystem::path& path, std::span<const double> v);
std::vector<double> read_vector(const std::filesystem::path& path);

}  // namespace ueps
