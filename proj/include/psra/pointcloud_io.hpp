#pragma once

#include <string>

#include "psra/geometry.hpp"

namespace psra::geometry {

// Binary interchange format: magic "PSRA", little-endian u32 N, N*3 float32
// coordinates, then an optional trailing u16 label.
void write_psra(const std::string& path, const PointCloud& cloud);
PointCloud read_psra(const std::string& path);

// Plain text: one "x y z" triple per line.
PointCloud read_xyz(const std::string& path);
void write_xyz(const std::string& path, const PointCloud& cloud);

}  // namespace psra::geometry
