#include "voxloc/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "voxloc/error.hpp"
#include "voxloc/hash.hpp"

namespace voxloc::data {

using json = nlohmann::ordered_json;

void WorldConfig::validate() const {
    if (n_locations < 1) raise(Errc::invalid_config, "world: n_locations must be >= 1");
    if (n_test_locations < 0 || n_test_locations >= n_locations)
        raise(Errc::invalid_config, "world: n_test_locations must be in [0, n_locations)");
    if (n_traversals < 1) raise(Errc::invalid_config, "world: n_traversals must be >= 1");
    if (location_spacing <= kNegativeRadius)
        raise(Errc::invalid_config, "world: location_spacing must exceed 50 m");
    if (traversal_noise < 0.0 || traversal_noise >= kPositiveRadius / 3.0)
        raise(Errc::invalid_config, "world: traversal_noise must be in [0, 10/3)");
    if (scene_primitive_count < 1) raise(Errc::invalid_config, "world: no scene primitives");
    if (dropout < 0.0 || dropout >= 1.0)
        raise(Errc::invalid_config, "world: dropout must be in [0, 1)");
    if (sensor_noise < 0.0) raise(Errc::invalid_config, "world: negative sensor noise");
    if (points_per_cloud < 1) raise(Errc::invalid_config, "world: points_per_cloud must be >= 1");
}

std::string WorldConfig::canonical_json() const {
    json j;
    j["n_locations"] = n_locations;
    j["n_test_locations"] = n_test_locations;
    j["n_traversals"] = n_traversals;
    j["location_spacing"] = location_spacing;
    j["scene_primitive_count"] = scene_primitive_count;
    j["traversal_noise"] = traversal_noise;
    j["dropout"] = dropout;
    j["sensor_noise"] = sensor_noise;
    j["points_per_cloud"] = points_per_cloud;
    j["seed"] = seed;
    return j.dump();
}

PairLabel label_pair(const geom::PointCloud& a, const geom::PointCloud& b) {
    const double d = std::hypot(a.easting - b.easting, a.northing - b.northing);
    if (d <= kPositiveRadius) return PairLabel::positive;
    if (d >= kNegativeRadius) return PairLabel::negative;
    return PairLabel::indeterminate;
}

std::vector<std::vector<int>> Dataset::clusters(bool test_split) const {
    std::vector<std::vector<int>> by_location(locations.size());
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        const auto loc = static_cast<std::size_t>(cloud_location[i]);
        if (locations[loc].is_test == test_split)
            by_location[loc].push_back(static_cast<int>(i));
    }
    std::vector<std::vector<int>> out;
    for (auto& group : by_location)
        if (!group.empty()) out.push_back(std::move(group));
    return out;
}

namespace {

// Scenes live in a local metric frame around the location center; this is
// the normalization scale back into [-1, 1].
constexpr double kHalfExtent = 30.0;
constexpr double kZShift = 5.0;
constexpr double kMaxYawDeg = 10.0;

struct Primitive {
    enum class Kind { box, wall, pole } kind;
    double cx, cy;      // footprint center
    double a, b, h;     // box: width/depth/height; wall: length/-/height; pole: -/-/height
    double yaw;         // wall orientation
};

using LocalPoint = std::array<double, 3>;

std::vector<Primitive> make_primitives(Rng& rng, int count) {
    std::uniform_int_distribution<int> kind(0, 2);
    std::uniform_real_distribution<double> pos(-14.0, 14.0);
    std::uniform_real_distribution<double> box_side(2.0, 8.0);
    std::uniform_real_distribution<double> box_height(3.0, 10.0);
    std::uniform_real_distribution<double> wall_len(6.0, 16.0);
    std::uniform_real_distribution<double> wall_height(3.0, 8.0);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::uniform_real_distribution<double> pole_height(4.0, 10.0);

    std::vector<Primitive> prims;
    prims.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Primitive p{};
        p.kind = static_cast<Primitive::Kind>(kind(rng));
        p.cx = pos(rng);
        p.cy = pos(rng);
        switch (p.kind) {
            case Primitive::Kind::box:
                p.a = box_side(rng);
                p.b = box_side(rng);
                p.h = box_height(rng);
                p.yaw = 0.0;
                break;
            case Primitive::Kind::wall:
                p.a = wall_len(rng);
                p.b = 0.0;
                p.h = wall_height(rng);
                p.yaw = angle(rng);
                break;
            case Primitive::Kind::pole:
                p.a = 0.15;
                p.b = 0.0;
                p.h = pole_height(rng);
                p.yaw = 0.0;
                break;
        }
        prims.push_back(p);
    }
    return prims;
}

LocalPoint sample_on_primitive(const Primitive& p, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    switch (p.kind) {
        case Primitive::Kind::box: {
            // four side faces plus the top
            std::uniform_int_distribution<int> face(0, 4);
            const double u = unit(rng), v = unit(rng);
            switch (face(rng)) {
                case 0: return {p.cx - p.a / 2 + u * p.a, p.cy - p.b / 2, v * p.h};
                case 1: return {p.cx - p.a / 2 + u * p.a, p.cy + p.b / 2, v * p.h};
                case 2: return {p.cx - p.a / 2, p.cy - p.b / 2 + u * p.b, v * p.h};
                case 3: return {p.cx + p.a / 2, p.cy - p.b / 2 + u * p.b, v * p.h};
                default:
                    return {p.cx - p.a / 2 + u * p.a, p.cy - p.b / 2 + v * p.b, p.h};
            }
        }
        case Primitive::Kind::wall: {
            const double along = (unit(rng) - 0.5) * p.a;
            const double z = unit(rng) * p.h;
            return {p.cx + along * std::cos(p.yaw), p.cy + along * std::sin(p.yaw), z};
        }
        case Primitive::Kind::pole: {
            const double theta = unit(rng) * 2.0 * std::numbers::pi;
            const double z = unit(rng) * p.h;
            return {p.cx + p.a * std::cos(theta), p.cy + p.a * std::sin(theta), z};
        }
    }
    return {0.0, 0.0, 0.0};
}

std::vector<LocalPoint> make_scene(Rng& rng, const WorldConfig& cfg) {
    const auto prims = make_primitives(rng, cfg.scene_primitive_count);
    std::uniform_int_distribution<std::size_t> pick(0, prims.size() - 1);
    std::vector<LocalPoint> pts;
    pts.reserve(static_cast<std::size_t>(cfg.points_per_cloud));
    for (int i = 0; i < cfg.points_per_cloud; ++i)
        pts.push_back(sample_on_primitive(prims[pick(rng)], rng));
    return pts;
}

// Revisit position offsets are clamped so that two revisits of one location
// are always within the positive radius and two different locations always
// beyond the negative radius, regardless of seed.
double offset_clamp_radius(const WorldConfig& cfg) {
    const double by_noise = 3.0 * cfg.traversal_noise;
    const double by_spacing = (cfg.location_spacing - kNegativeRadius) / 2.0;
    return std::min({by_noise, by_spacing, kPositiveRadius / 2.0 - 0.05});
}

} // namespace

Dataset generate_world(const WorldConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;

    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_locations))));
    for (int i = 0; i < cfg.n_locations; ++i) {
        LocationInfo loc;
        loc.easting = static_cast<double>(i % cols) * cfg.location_spacing;
        loc.northing = static_cast<double>(i / cols) * cfg.location_spacing;
        ds.locations.push_back(loc);
    }

    // seeded split assignment
    {
        std::vector<int> order(static_cast<std::size_t>(cfg.n_locations));
        for (int i = 0; i < cfg.n_locations; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng rng = make_rng(derive_seed(cfg.seed, 0x73706c69)); // "spli"
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < cfg.n_test_locations; ++i)
            ds.locations[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].is_test =
                true;
    }

    for (int t = 0; t < cfg.n_traversals; ++t) ds.traversals.push_back("t" + std::to_string(t));

    std::vector<std::vector<LocalPoint>> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.n_locations));
    for (int loc = 0; loc < cfg.n_locations; ++loc) {
        Rng rng = make_rng(derive_seed(cfg.seed, 0x7363656e, static_cast<std::uint64_t>(loc)));
        scenes.push_back(make_scene(rng, cfg));
    }

    const double r_max = offset_clamp_radius(cfg);
    const double max_yaw = kMaxYawDeg * std::numbers::pi / 180.0;

    for (int t = 0; t < cfg.n_traversals; ++t) {
        for (int loc = 0; loc < cfg.n_locations; ++loc) {
            Rng rng = make_rng(derive_seed(cfg.seed, 0x76697369,
                                           static_cast<std::uint64_t>(t) * 1000003ULL +
                                               static_cast<std::uint64_t>(loc)));
            std::normal_distribution<double> pos_noise(
                0.0, cfg.traversal_noise > 0.0 ? cfg.traversal_noise : 1.0);
            double dx = 0.0, dy = 0.0;
            if (cfg.traversal_noise > 0.0) {
                dx = pos_noise(rng);
                dy = pos_noise(rng);
            }
            const double r = std::hypot(dx, dy);
            if (r > r_max && r > 0.0) {
                dx *= r_max / r;
                dy *= r_max / r;
            }
            std::uniform_real_distribution<double> yaw_dist(-max_yaw, max_yaw);
            const double yaw = yaw_dist(rng);
            const double cy = std::cos(yaw), sy = std::sin(yaw);

            const auto& scene = scenes[static_cast<std::size_t>(loc)];
            const std::size_t n = scene.size();
            const auto n_drop = static_cast<std::size_t>(
                std::llround(cfg.dropout * static_cast<double>(n)));
            std::vector<std::uint32_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
            for (std::size_t i = 0; i < n_drop; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n - 1);
                std::swap(order[i], order[pick(rng)]);
            }
            std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_drop), order.end());

            std::normal_distribution<double> noise(0.0,
                                                   cfg.sensor_noise > 0.0 ? cfg.sensor_noise : 1.0);
            geom::PointCloud cloud;
            cloud.points.reserve(n - n_drop);
            for (std::size_t i = n_drop; i < n; ++i) {
                const LocalPoint& p = scene[order[i]];
                // sensor frame: shift by the revisit offset, then yaw
                const double lx = p[0] - dx, ly = p[1] - dy;
                double ox = cy * lx - sy * ly + (cfg.sensor_noise > 0 ? noise(rng) : 0.0);
                double oy = sy * lx + cy * ly + (cfg.sensor_noise > 0 ? noise(rng) : 0.0);
                double oz = p[2] - kZShift + (cfg.sensor_noise > 0 ? noise(rng) : 0.0);
                geom::Point out;
                out[0] = static_cast<float>(std::clamp(ox / kHalfExtent, -1.0, 1.0));
                out[1] = static_cast<float>(std::clamp(oy / kHalfExtent, -1.0, 1.0));
                out[2] = static_cast<float>(std::clamp(oz / kHalfExtent, -1.0, 1.0));
                cloud.points.push_back(out);
            }

            char id[32];
            std::snprintf(id, sizeof id, "l%03d_t%d", loc, t);
            cloud.cloud_id = id;
            cloud.traversal_id = ds.traversals[static_cast<std::size_t>(t)];
            cloud.easting = ds.locations[static_cast<std::size_t>(loc)].easting + dx;
            cloud.northing = ds.locations[static_cast<std::size_t>(loc)].northing + dy;
            ds.clouds.push_back(std::move(cloud));
            ds.cloud_location.push_back(loc);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json config_to_json(const WorldConfig& cfg) { return json::parse(cfg.canonical_json()); }

WorldConfig config_from_json(const json& j) {
    WorldConfig cfg;
    cfg.n_locations = j.at("n_locations").get<int>();
    cfg.n_test_locations = j.at("n_test_locations").get<int>();
    cfg.n_traversals = j.at("n_traversals").get<int>();
    cfg.location_spacing = j.at("location_spacing").get<double>();
    cfg.scene_primitive_count = j.at("scene_primitive_count").get<int>();
    cfg.traversal_noise = j.at("traversal_noise").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.sensor_noise = j.at("sensor_noise").get<double>();
    cfg.points_per_cloud = j.at("points_per_cloud").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise(Errc::io_error, "dataset: cannot read back " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return fnv1a_hex(ss.str());
}

} // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "clouds", ec);
    if (ec) raise(Errc::io_error, "dataset: cannot create " + dir.string());

    json manifest;
    manifest["format"] = 1;
    manifest["config"] = config_to_json(ds.config);
    json locs = json::array();
    for (const LocationInfo& l : ds.locations)
        locs.push_back({{"easting", l.easting}, {"northing", l.northing}, {"test", l.is_test}});
    manifest["locations"] = std::move(locs);
    manifest["traversals"] = ds.traversals;

    json clouds = json::array();
    for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
        const geom::PointCloud& c = ds.clouds[i];
        const std::filesystem::path rel =
            std::filesystem::path("clouds") / c.traversal_id / (c.cloud_id + ".pcv");
        std::filesystem::create_directories(dir / rel.parent_path(), ec);
        if (ec) raise(Errc::io_error, "dataset: cannot create traversal directory");
        geom::save_pcv(c, dir / rel);
        clouds.push_back({{"id", c.cloud_id},
                          {"traversal", c.traversal_id},
                          {"location", ds.cloud_location[i]},
                          {"easting", c.easting},
                          {"northing", c.northing},
                          {"file", rel.generic_string()},
                          {"digest", file_digest(dir / rel)}});
    }
    manifest["clouds"] = std::move(clouds);

    std::ofstream os(dir / "manifest.json");
    if (!os) raise(Errc::io_error, "dataset: cannot write manifest");
    os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) raise(Errc::io_error, "dataset: cannot open manifest in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::exception&) {
        raise(Errc::corrupt_manifest, "dataset: malformed manifest json");
    }

    Dataset ds;
    try {
        if (manifest.at("format").get<int>() != 1)
            raise(Errc::corrupt_manifest, "dataset: unsupported manifest format");
        ds.config = config_from_json(manifest.at("config"));
        for (const auto& l : manifest.at("locations")) {
            ds.locations.push_back({l.at("easting").get<double>(),
                                    l.at("northing").get<double>(), l.at("test").get<bool>()});
        }
        for (const auto& t : manifest.at("traversals"))
            ds.traversals.push_back(t.get<std::string>());

        for (const auto& entry : manifest.at("clouds")) {
            const std::filesystem::path rel = entry.at("file").get<std::string>();
            const std::filesystem::path full = dir / rel;
            if (!std::filesystem::exists(full))
                raise(Errc::missing_cloud_file, "dataset: missing " + full.string());
            if (file_digest(full) != entry.at("digest").get<std::string>())
                raise(Errc::corrupt_manifest,
                      "dataset: digest mismatch for " + rel.generic_string());
            geom::PointCloud cloud = geom::load_pcv(full);
            if (cloud.cloud_id != entry.at("id").get<std::string>() ||
                cloud.traversal_id != entry.at("traversal").get<std::string>())
                raise(Errc::corrupt_manifest,
                      "dataset: identity mismatch for " + rel.generic_string());
            ds.clouds.push_back(std::move(cloud));
            ds.cloud_location.push_back(entry.at("location").get<int>());
        }
    } catch (const json::exception&) {
        raise(Errc::corrupt_manifest, "dataset: manifest missing fields");
    }
    return ds;
}

} // namespace voxloc::data
