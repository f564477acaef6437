#ifndef VOXLOC_HASH_HPP
#define VOXLOC_HASH_HPP

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace voxloc {

// FNV-1a 64-bit, hex-encoded; used for config hashes and file digests.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace voxloc

#endif
