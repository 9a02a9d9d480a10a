#pragma once

#include <array>
#include <cstddef>
#include <cmath>
#include <cstdint>

namespace af3d {

/// Integer triple in array order (z, y, x).
struct Dims3 {
    int z = 1;
    int y = 1;
    int x = 1;

    constexpr int& operator[](int axis) { return axis == 0 ? z : (axis == 1 ? y : x); }
    constexpr int operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
    constexpr std::size_t count() const {
        return static_cast<std::size_t>(z) * static_cast<std::size_t>(y) * static_cast<std::size_t>(x);
    }
    friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

/// Real triple in array order (z, y, x).
struct Spacing3 {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    constexpr double operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
    friend constexpr bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// A lesion as centroid plus diameter. Coordinates are in mm, listed in (x, y, z) order.
struct BoxXYZD {
    double cx = 0.0;
    double cy = 0.0;
    double cz = 0.0;
    double d = 1.0;

    /// Centroid component along array axis (0 = z, 1 = y, 2 = x).
    constexpr double axis(int a) const { return a == 0 ? cz : (a == 1 ? cy : cx); }
    constexpr void set_axis(int a, double v) {
        if (a == 0) {
            cz = v;
        } else if (a == 1) {
            cy = v;
        } else {
            cx = v;
        }
    }
    friend constexpr bool operator==(const BoxXYZD&, const BoxXYZD&) = default;
};

inline bool is_valid(const BoxXYZD& box) {
    return std::isfinite(box.cx) && std::isfinite(box.cy) && std::isfinite(box.cz) &&
           std::isfinite(box.d) && box.d > 0.0;
}

}  // namespace af3d
