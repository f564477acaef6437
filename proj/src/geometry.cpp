#include "voxloc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "voxloc/error.hpp"

namespace voxloc::geom {

VoxelizedCloud quantize(const PointCloud& cloud, double step) {
    if (step <= 0.0) raise(Errc::out_of_range, "quantize: step must be positive");
    if (cloud.points.empty()) raise(Errc::empty_cloud, "quantize: empty point cloud");

    VoxelizedCloud out;
    out.step = step;
    out.coords.reserve(cloud.points.size());
    for (const Point& p : cloud.points) {
        for (float c : p) {
            if (c < -1.0f || c > 1.0f)
                raise(Errc::out_of_range, "quantize: coordinate outside [-1, 1]");
        }
        out.coords.push_back({voxel_index(p[0], step), voxel_index(p[1], step),
                              voxel_index(p[2], step)});
    }
    std::sort(out.coords.begin(), out.coords.end());
    out.coords.erase(std::unique(out.coords.begin(), out.coords.end()), out.coords.end());
    return out;
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
    if (cloud.points.empty()) raise(Errc::empty_cloud, "augment: empty point cloud");
    if (cfg.jitter_sigma < 0.0 || cfg.translation_max < 0.0 || cfg.max_removal_fraction < 0.0 ||
        cfg.max_removal_fraction >= 1.0)
        raise(Errc::out_of_range, "augment: invalid config");

    const std::size_t n = cloud.points.size();

    // Removal fraction drawn per cloud, then that many distinct points
    // dropped via a partial Fisher-Yates pass over the index list.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double f = unit(rng) * cfg.max_removal_fraction;
    auto n_remove = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    if (n_remove >= n)
        raise(Errc::degenerate_result, "augment: all points would be removed");

    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < n_remove; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::uint32_t> keep(order.begin() + static_cast<std::ptrdiff_t>(n_remove),
                                    order.end());
    std::sort(keep.begin(), keep.end());

    std::normal_distribution<double> jitter(0.0,
                                            cfg.jitter_sigma > 0.0 ? cfg.jitter_sigma : 1.0);
    PointCloud out;
    out.easting = cloud.easting;
    out.northing = cloud.northing;
    out.traversal_id = cloud.traversal_id;
    out.cloud_id = cloud.cloud_id;
    out.points.reserve(keep.size());
    for (std::uint32_t idx : keep) {
        Point p = cloud.points[idx];
        if (cfg.jitter_sigma > 0.0) {
            for (float& c : p) c = static_cast<float>(c + jitter(rng));
        }
        out.points.push_back(p);
    }

    // One shared rigid translation per cloud, components U(0, translation_max).
    std::array<double, 3> t{0.0, 0.0, 0.0};
    if (cfg.translation_max > 0.0) {
        for (double& c : t) c = unit(rng) * cfg.translation_max;
    }
    for (Point& p : out.points) {
        for (int a = 0; a < 3; ++a) {
            double c = p[a] + t[static_cast<std::size_t>(a)];
            p[a] = static_cast<float>(std::clamp(c, -1.0, 1.0));
        }
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'P', 'C', 'V', '1'};

template <typename T>
void write_le(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) raise(Errc::corrupt_file, "pcv: truncated file");
    return v;
}

void write_string(std::ofstream& os, const std::string& s) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& is) {
    auto len = read_le<std::uint32_t>(is);
    if (len > (1u << 20)) raise(Errc::corrupt_file, "pcv: unreasonable string length");
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) raise(Errc::corrupt_file, "pcv: truncated string");
    return s;
}

} // namespace

void save_pcv(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(Errc::io_error, "pcv: cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.points.size()));
    for (const Point& p : cloud.points)
        for (float c : p) write_le<float>(os, c);
    write_le<double>(os, cloud.easting);
    write_le<double>(os, cloud.northing);
    write_string(os, cloud.traversal_id);
    write_string(os, cloud.cloud_id);
    if (!os) raise(Errc::io_error, "pcv: write failed: " + path.string());
}

PointCloud load_pcv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::io_error, "pcv: cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        raise(Errc::corrupt_file, "pcv: bad magic: " + path.string());
    auto n = read_le<std::uint32_t>(is);
    PointCloud cloud;
    cloud.points.resize(n);
    for (auto& p : cloud.points)
        for (float& c : p) c = read_le<float>(is);
    cloud.easting = read_le<double>(is);
    cloud.northing = read_le<double>(is);
    cloud.traversal_id = read_string(is);
    cloud.cloud_id = read_string(is);
    return cloud;
}

} // namespace voxloc::geom
