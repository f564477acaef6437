#ifndef VOXLOC_DATASETS_HPP
#define VOXLOC_DATASETS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxloc/geometry.hpp"

namespace voxloc::data {

// Pair-labeling thresholds in meters.
inline constexpr double kPositiveRadius = 10.0;
inline constexpr double kNegativeRadius = 50.0;

struct WorldConfig {
    int n_locations = 70;
    int n_test_locations = 20;
    int n_traversals = 4;
    double location_spacing = 60.0;  // > 50 so cross-location pairs are negatives
    int scene_primitive_count = 10;
    double traversal_noise = 2.0;    // std of revisit position noise, meters
    double dropout = 0.05;           // fraction of scene points missing per revisit
    double sensor_noise = 0.03;      // per-point observation noise, meters
    int points_per_cloud = 1500;
    std::uint64_t seed = 0;

    static WorldConfig toy_oxford(std::uint64_t seed) {
        WorldConfig cfg;
        cfg.seed = seed;
        return cfg;
    }

    void validate() const;
    std::string canonical_json() const;
};

struct LocationInfo {
    double easting = 0.0;
    double northing = 0.0;
    bool is_test = false;
};

struct Dataset {
    WorldConfig config;
    std::vector<LocationInfo> locations;
    std::vector<std::string> traversals;
    std::vector<geom::PointCloud> clouds;
    std::vector<int> cloud_location; // parallel to clouds

    // cloud indices grouped by location, restricted to one split
    std::vector<std::vector<int>> clusters(bool test_split) const;
};

enum class PairLabel { positive, negative, indeterminate };

// positive iff planar distance <= 10 m, negative iff >= 50 m (both
// inclusive), indeterminate otherwise.
PairLabel label_pair(const geom::PointCloud& a, const geom::PointCloud& b);

Dataset generate_world(const WorldConfig& cfg);

// Directory layout: manifest.json + clouds/<traversal>/<cloud_id>.pcv.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace voxloc::data

#endif
