#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psra/ops.hpp"
#include "psra/tape.hpp"

namespace psra::geometry {

enum class Family : std::uint16_t { Sphere = 0, Cube = 1, Cylinder = 2, TwoLegTable = 3 };

Family family_from_name(const std::string& name);
const char* family_name(Family f);
constexpr std::size_t kFamilyCount = 4;

struct CloudMeta {
    Family family = Family::Sphere;
    std::uint64_t seed = 0;
    // normalization applied to the raw generator output: p_norm = (p - centroid)/scale
    double scale = 1.0;
    double centroid[3] = {0, 0, 0};
    int mode = 0;  // two_leg_table latent mode (0 straight, 1 splayed); 0 elsewhere
};

struct PointCloud {
    Array points;  // [N,3], normalized: centroid ~ 0, max radius <= 1
    std::optional<std::uint16_t> label;
    CloudMeta meta;

    std::size_t size() const { return points.shape[0]; }
};

struct GroupedCloud {
    Array centers;                            // [G,3]
    Array groups;                             // [G,K,3], center-relative
    std::vector<std::size_t> center_indices;  // into the source cloud

    std::size_t group_count() const { return centers.shape[0]; }
    std::size_t group_size() const { return groups.shape[1]; }
    Array group_rel(std::size_t g) const;  // [K,3] copy
};

struct MaskSpec {
    double ratio = 0.0;
    std::vector<char> masked;  // length G
    std::uint64_t seed = 0;

    std::size_t masked_count() const;
    std::vector<std::size_t> masked_indices() const;
    std::vector<std::size_t> visible_indices() const;
};

// Synthetic clouds, deterministic in (family, n_points, seed). All outputs
// are normalized and snapped to the 2^-30 coordinate grid so that grouping
// round trips bitwise. n_points >= 32.
PointCloud generate_shape(Family family, std::size_t n_points, std::uint64_t seed);
// two_leg_table with the latent mode forced (for the bimodal experiments)
PointCloud generate_two_leg_table(std::size_t n_points, std::uint64_t seed, int mode);

// Greedy farthest point sampling: first pick = start, each next pick
// maximizes the min distance to the picked set, ties to the lowest index.
std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t g, std::size_t start);

// k nearest neighbors per center by squared distance, ties to the lowest
// index; stored center-relative, ordered by (distance, index).
GroupedCloud group(const PointCloud& cloud, const std::vector<std::size_t>& centers,
                   std::size_t k);

MaskSpec make_mask(std::size_t g, double ratio, std::uint64_t seed);

// Symmetric Chamfer distance with squared Euclidean terms. The traced form
// differentiates through the engine (nearest-neighbor choice is realized by
// index selection); the plain form is a fast value-only kernel.
TracedValue chamfer(const TracedValue& p, const TracedValue& q);
double chamfer_value(const Array& p, const Array& q);

}  // namespace psra::geometry
