#ifndef VOXLOC_COORD_HPP
#define VOXLOC_COORD_HPP

#include <cstdint>
#include <tuple>

namespace voxloc {

// Integer voxel coordinate. Ordering is lexicographic (x, then y, then z);
// every coordinate list in the project is kept sorted in this order so that
// identical inputs always produce identical row orderings.
struct Coord {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;

    friend bool operator==(const Coord&, const Coord&) = default;
    friend auto operator<=>(const Coord& a, const Coord& b) {
        return std::tie(a.x, a.y, a.z) <=> std::tie(b.x, b.y, b.z);
    }
};

// Floor division toward negative infinity (C++ '/' truncates toward zero).
inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
    std::int32_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

} // namespace voxloc

#endif
