/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Synthetic gray-scale scans from label volumes, plus the preprocessing used
// on both synthetic and real scans: min-max normalization, patch tiling and
// Otsu-based auto-cropping.

#include <algorithm>
#include <array>
#include <random>
#include <vector>

#include "volume.hpp"

namespace venosynth {

/// Raw scans are stored as int16 intensities.
using ScanVolume = Volume<std::int16_t>;

/// Foreground voxels get a uniform integer in [128, 255], background in
/// [0, 127]. Each voxel's draw depends only on (seed, voxel index).
inline ScanVolume synth_scan(const LabelVolume& label, std::uint64_t rng_seed) {
    ScanVolume out(label.grid);
    for (std::size_t i = 0; i < label.data.size(); ++i) {
        const std::uint64_t bits = derive_seed(rng_seed, i);
        const auto low7 = static_cast<std::int16_t>(bits & 0x7F);  // 2^64 is a multiple of 128
        out.data[i] = static_cast<std::int16_t>(label.data[i] ? 128 + low7 : low7);
    }
    return out;
}

/// x -> (x - min) / (max - min). The minimum maps to exactly 0 and the maximum
/// to exactly 1.
template <class T>
Volume<float> minmax_normalize(const Volume<T>& volume) {
    if (volume.data.empty()) throw ValidationError("cannot normalize an empty volume");
    const auto [mn_it, mx_it] = std::minmax_element(volume.data.begin(), volume.data.end());
    const double mn = static_cast<double>(*mn_it), mx = static_cast<double>(*mx_it);
    if (!(mx > mn)) throw ValidationError("cannot normalize a constant volume (zero intensity range)");
    Volume<float> out(volume.grid);
    const double range = mx - mn;
    for (std::size_t i = 0; i < volume.data.size(); ++i)
        out.data[i] = static_cast<float>((static_cast<double>(volume.data[i]) - mn) / range);
    return out;
}

// ---------------------------------------------------------------------------
// Patches

template <class T>
struct Patch {
    std::array<int, 3> offset{};
    Volume<T> volume;
};

struct RandomPatches {
    std::uint64_t seed = 0;
    int count = 1;
};
struct GridPatches {
    int stride = 1;
};

/// Patch origins along one axis: multiples of stride, the last one clamped so
/// the patch ends at the volume boundary.
inline std::vector<int> grid_offsets(int dim, int patch, int stride) {
    std::vector<int> out;
    for (int o = 0;; o += stride) {
        out.push_back(std::min(o, dim - patch));
        if (o + patch >= dim) break;
    }
    return out;
}

template <class T>
Volume<T> crop(const Volume<T>& v, std::array<int, 3> lo, std::array<int, 3> size) {
    GridSpec g = v.grid;
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = size[a];
        g.origin[a] = v.grid.origin[a] + lo[a] * v.grid.spacing[a];
    }
    Volume<T> out(g);
    for (int k = 0; k < size[2]; ++k)
        for (int j = 0; j < size[1]; ++j) {
            const auto src = v.data.begin() + static_cast<std::ptrdiff_t>(v.grid.linear(lo[0], lo[1] + j, lo[2] + k));
            std::copy(src, src + size[0], out.data.begin() + static_cast<std::ptrdiff_t>(g.linear(0, j, k)));
        }
    return out;
}

template <class T, class Mode>
std::vector<Patch<T>> extract_patches(const Volume<T>& volume, int patch_size, const Mode& mode) {
    if (patch_size < 1) throw ValidationError("patch size must be >= 1");
    for (int d : volume.grid.dims)
        if (patch_size > d) throw ValidationError("patch size exceeds volume dimensions");
    const std::array<int, 3> size{patch_size, patch_size, patch_size};
    std::vector<Patch<T>> out;
    if constexpr (std::is_same_v<Mode, GridPatches>) {
        if (mode.stride < 1) throw ValidationError("patch stride must be >= 1");
        const auto ox = grid_offsets(volume.grid.dims[0], patch_size, mode.stride);
        const auto oy = grid_offsets(volume.grid.dims[1], patch_size, mode.stride);
        const auto oz = grid_offsets(volume.grid.dims[2], patch_size, mode.stride);
        for (int z : oz)
            for (int y : oy)
                for (int x : ox) out.push_back({{x, y, z}, crop(volume, {x, y, z}, size)});
    } else {
        static_assert(std::is_same_v<Mode, RandomPatches>, "mode must be GridPatches or RandomPatches");
        if (mode.count < 1) throw ValidationError("patch count must be >= 1");
        std::mt19937_64 eng(mode.seed);
        for (int n = 0; n < mode.count; ++n) {
            std::array<int, 3> o{};
            for (int a = 0; a < 3; ++a)
                o[a] = static_cast<int>(uniform_below(eng, static_cast<std::uint64_t>(volume.grid.dims[a] - patch_size + 1)));
            out.push_back({o, crop(volume, o, size)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Otsu auto-crop

struct CropBox {
    std::array<int, 3> lo{};  // inclusive
    std::array<int, 3> hi{};  // exclusive
    bool operator==(const CropBox&) const = default;
};

/// Otsu threshold on a 256-bin histogram after mapping [min, max] linearly
/// onto bins 0..255. Voxels in bins above the returned bin are foreground.
template <class T>
int otsu_bin_threshold(const Volume<T>& v, std::vector<int>* bins_out = nullptr) {
    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    const double mn = static_cast<double>(*mn_it), mx = static_cast<double>(*mx_it);
    if (!(mx > mn)) throw ValidationError("Otsu threshold needs a non-constant volume");
    std::array<double, 256> hist{};
    std::vector<int> bins(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double f = (static_cast<double>(v.data[i]) - mn) / (mx - mn) * 255.0;
        const int b = std::clamp(static_cast<int>(std::lround(f)), 0, 255);
        bins[i] = b;
        hist[b] += 1.0;
    }
    const double total = static_cast<double>(v.data.size());
    double sum_all = 0.0;
    for (int b = 0; b < 256; ++b) sum_all += b * hist[b];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_t = 0;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[t];
        sum0 += t * hist[t];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    if (bins_out) *bins_out = std::move(bins);
    return best_t;
}

/// Bounding box of the above-threshold voxels, grown by margin and clipped
/// to the volume, together with the cropped volume.
template <class T>
std::pair<Volume<T>, CropBox> otsu_crop(const Volume<T>& v, int margin_voxels) {
    if (margin_voxels < 0) throw ValidationError("crop margin must be >= 0");
    std::vector<int> bins;
    const int t = otsu_bin_threshold(v, &bins);
    CropBox box;
    box.lo = v.grid.dims;
    box.hi = {0, 0, 0};
    bool any = false;
    for (int k = 0; k < v.grid.dims[2]; ++k)
        for (int j = 0; j < v.grid.dims[1]; ++j)
            for (int i = 0; i < v.grid.dims[0]; ++i) {
                if (bins[v.grid.linear(i, j, k)] <= t) continue;
                any = true;
                const int ijk[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    box.lo[a] = std::min(box.lo[a], ijk[a]);
                    box.hi[a] = std::max(box.hi[a], ijk[a] + 1);
                }
            }
    if (!any) throw ValidationError("no voxel above the Otsu threshold");
    std::array<int, 3> size{};
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::max(0, box.lo[a] - margin_voxels);
        box.hi[a] = static_cast<int>(std::min<long long>(v.grid.dims[a], static_cast<long long>(box.hi[a]) + margin_voxels));
        size[a] = box.hi[a] - box.lo[a];
    }
    return {crop(v, box.lo, size), box};
}

}  // namespace venosynth
