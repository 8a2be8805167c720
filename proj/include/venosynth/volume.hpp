/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace venosynth {

/// Regular voxel lattice. Voxel (i, j, k) has its center at
/// origin + (i·sx, j·sy, k·sz); x varies fastest in memory.
struct GridSpec {
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // µm per voxel
    std::array<double, 3> origin{0.0, 0.0, 0.0};   // µm

    static GridSpec cube(int n, double spacing_um, Vec3 origin_um = {}) {
        return GridSpec{{n, n, n}, {spacing_um, spacing_um, spacing_um}, {origin_um.x, origin_um.y, origin_um.z}};
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    std::size_t linear(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims[1]) + static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(dims[0]) +
               static_cast<std::size_t>(i);
    }
    bool contains(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }
    Vec3 center(int i, int j, int k) const {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1) throw ValidationError("grid dims must be >= 1");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw ValidationError("grid spacing must be > 0");
            if (!std::isfinite(origin[a])) throw ValidationError("grid origin must be finite");
        }
    }

    bool operator==(const GridSpec&) const = default;
};

/// Dense scalar field on a GridSpec.
template <class T>
struct Volume {
    GridSpec grid;
    std::vector<T> data;

    Volume() = default;
    explicit Volume(const GridSpec& g, T fill = T{}) : grid(g), data(g.voxel_count(), fill) { g.validate(); }

    T& at(int i, int j, int k) { return data[grid.linear(i, j, k)]; }
    const T& at(int i, int j, int k) const { return data[grid.linear(i, j, k)]; }
    const std::array<int, 3>& dims() const { return grid.dims; }

    bool operator==(const Volume&) const = default;
};

/// Binary vessel mask, foreground = 1.
using LabelVolume = Volume<std::uint8_t>;

inline std::size_t count_foreground(const LabelVolume& v) {
    std::size_t n = 0;
    for (auto x : v.data) n += (x != 0);
    return n;
}

template <class A, class B>
void require_same_dims(const Volume<A>& a, const Volume<B>& b) {
    if (a.grid.dims != b.grid.dims)
        throw ValidationError("volume dimensions differ: " + std::to_string(a.grid.dims[0]) + "x" +
                              std::to_string(a.grid.dims[1]) + "x" + std::to_string(a.grid.dims[2]) + " vs " +
                              std::to_string(b.grid.dims[0]) + "x" + std::to_string(b.grid.dims[1]) + "x" +
                              std::to_string(b.grid.dims[2]));
}

}  // namespace venosynth
