#ifndef VOXLOC_GEOMETRY_HPP
#define VOXLOC_GEOMETRY_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxloc/coord.hpp"
#include "voxloc/seeds.hpp"

namespace voxloc::geom {

using Point = std::array<float, 3>;

// A normalized point cloud with its geo-tag. Coordinates are unitless and
// expected to lie in [-1, 1]^3; `easting`/`northing` are planar world
// coordinates in meters used for pair labeling and evaluation.
struct PointCloud {
    std::vector<Point> points;
    double easting = 0.0;
    double northing = 0.0;
    std::string traversal_id;
    std::string cloud_id;
};

// Occupied voxel set produced by quantization. Indices are unique and
// sorted; `step` is the quantization step the indices were derived with.
struct VoxelizedCloud {
    std::vector<Coord> coords;
    double step = 0.0;
};

struct AugmentConfig {
    double jitter_sigma = 0.001;
    double translation_max = 0.01;
    double max_removal_fraction = 0.10;
    std::uint64_t rng_seed = 0;
};

// Maps a normalized coordinate to its voxel index, floor(c / step). The tiny
// bias compensates for steps that are not exactly representable in binary
// (e.g. 0.01), so that lattice boundary values such as 1.0 / 0.01 land on
// the mathematically exact index.
inline std::int32_t voxel_index(double c, double step) {
    return static_cast<std::int32_t>(std::floor(c / step + 1e-9));
}

VoxelizedCloud quantize(const PointCloud& cloud, double step);

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng);

// Binary point-cloud file ("PCV1"), little-endian:
// magic, u32 point count, n x 3 float32, easting f64, northing f64,
// u32-length-prefixed traversal_id, u32-length-prefixed cloud_id.
void save_pcv(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_pcv(const std::filesystem::path& path);

} // namespace voxloc::geom

#endif
