#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "af3d/error.hpp"

// Little-endian primitives shared by the VOL3 and checkpoint formats.
namespace af3d::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

inline void put_f32(std::ostream& os, float v) {
    put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
    char b[4];
    if (!is.read(b, 4)) {
        return false;
    }
    std::memcpy(&v, b, 4);
    return true;
}

inline bool get_f32(std::istream& is, float& v) {
    std::uint32_t u = 0;
    if (!get_u32(is, u)) {
        return false;
    }
    v = std::bit_cast<float>(u);
    return true;
}

inline std::uint32_t expect_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    require(get_u32(is, v), ErrorCode::BadFormat, "truncated file while reading " + what);
    return v;
}

}  // namespace af3d::detail
