#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "af3d/error.hpp"
#include "af3d/geometry.hpp"

namespace af3d {

/// Dense (batch, channels, z, y, x) tensor.
template <typename T>
struct Tensor5 {
    std::array<int, 5> shape{1, 1, 1, 1, 1};
    std::vector<T> data;

    Tensor5() : data(1, T(0)) {}
    Tensor5(int b, int c, Dims3 d, T fill = T(0)) : shape{b, c, d.z, d.y, d.x}, data(size_of(shape), fill) {}

    static std::size_t size_of(const std::array<int, 5>& s) {
        std::size_t n = 1;
        for (const int v : s) {
            n *= static_cast<std::size_t>(v);
        }
        return n;
    }

    int batch() const { return shape[0]; }
    int channels() const { return shape[1]; }
    Dims3 spatial() const { return {shape[2], shape[3], shape[4]}; }
    std::size_t voxels() const { return spatial().count(); }

    T* sample(int b) { return data.data() + static_cast<std::size_t>(b) * channels() * voxels(); }
    const T* sample(int b) const { return data.data() + static_cast<std::size_t>(b) * channels() * voxels(); }

    std::span<const T> channel(int b, int c) const { return {sample(b) + static_cast<std::size_t>(c) * voxels(), voxels()}; }
};

/// A named trainable tensor together with its accumulated gradient.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;
};

}  // namespace af3d
