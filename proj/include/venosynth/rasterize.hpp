/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

#include <algorithm>
#include <span>
#include <thread>
#include <vector>

#include "vessel_tree.hpp"
#include "volume.hpp"

namespace venosynth {

/// A vessel segment from a (radius ra) to b (radius rb). The solid is the
/// union of the two end balls and the truncated cone between them.
struct TaperedSegment {
    Vec3 a, b;
    double ra = 0.0, rb = 0.0;
};

/// Exact membership test for a point. Shared by the accelerated and the
/// brute-force voxelizers so both evaluate identical floating-point
/// expressions.
inline bool segment_contains(const TaperedSegment& s, const Vec3& p) {
    const Vec3 pa = p - s.a;
    const double pa2 = dot(pa, pa);
    if (pa2 <= s.ra * s.ra) return true;
    const Vec3 pb = p - s.b;
    if (dot(pb, pb) <= s.rb * s.rb) return true;
    const Vec3 d = s.b - s.a;
    const double len2 = dot(d, d);
    if (!(len2 > 0.0)) return false;
    const double t = dot(pa, d);
    if (t < 0.0 || t > len2) return false;
    const double u = t / len2;
    const Vec3 q = pa - d * u;
    const double r = s.ra + u * (s.rb - s.ra);
    return dot(q, q) <= r * r;
}

/// One segment per edge. The radius tapers from the edge radius at the
/// parent end to the largest outgoing radius at the child (terminal edges are
/// plain capsules).
inline std::vector<TaperedSegment> segments_from_tree(const VesselTree& tree) {
    std::vector<TaperedSegment> out;
    if (tree.edges.empty()) return out;
    const TreeIndex idx(tree);
    out.reserve(tree.edges.size());
    for (const Edge& e : tree.edges) {
        const std::size_t p = idx.node_of.at(e.parent), c = idx.node_of.at(e.child);
        double rb = e.radius;
        if (!idx.child_edges[c].empty()) {
            rb = 0.0;
            for (std::size_t ce : idx.child_edges[c]) rb = std::max(rb, tree.edges[ce].radius);
        }
        out.push_back({tree.nodes[p].position, tree.nodes[c].position, e.radius, rb});
    }
    return out;
}

/// Oracle: every voxel center against every segment.
inline LabelVolume voxelize_bruteforce(std::span<const TaperedSegment> segments, const GridSpec& grid) {
    LabelVolume out(grid, 0);
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                const Vec3 p = grid.center(i, j, k);
                for (const auto& s : segments)
                    if (segment_contains(s, p)) {
                        out.at(i, j, k) = 1;
                        break;
                    }
            }
    return out;
}

inline LabelVolume voxelize_bruteforce(const VesselTree& tree, const GridSpec& grid) {
    const auto segs = segments_from_tree(tree);
    return voxelize_bruteforce(segs, grid);
}

/// Tests each segment only against voxels in its bounding box (padded by one
/// voxel). Work is split into z slabs across `threads` workers; the output
/// does not depend on the split.
inline LabelVolume voxelize(std::span<const TaperedSegment> segments, const GridSpec& grid, int threads = 1) {
    LabelVolume out(grid, 0);
    struct Box {
        int lo[3], hi[3];
    };
    std::vector<Box> boxes;
    boxes.reserve(segments.size());
    for (const auto& s : segments) {
        const double r = std::max(s.ra, s.rb);
        Box b{};
        for (int a = 0; a < 3; ++a) {
            const double lo = std::min(s.a[a], s.b[a]) - r;
            const double hi = std::max(s.a[a], s.b[a]) + r;
            const double flo = std::floor((lo - grid.origin[a]) / grid.spacing[a]) - 1.0;
            const double fhi = std::ceil((hi - grid.origin[a]) / grid.spacing[a]) + 1.0;
            b.lo[a] = static_cast<int>(std::clamp(flo, 0.0, static_cast<double>(grid.dims[a])));
            b.hi[a] = static_cast<int>(std::clamp(fhi, -1.0, static_cast<double>(grid.dims[a] - 1)));
        }
        boxes.push_back(b);
    }

    auto work = [&](int k0, int k1) {
        for (std::size_t si = 0; si < segments.size(); ++si) {
            const Box& b = boxes[si];
            const int kl = std::max(b.lo[2], k0), kh = std::min(b.hi[2], k1 - 1);
            for (int k = kl; k <= kh; ++k)
                for (int j = b.lo[1]; j <= b.hi[1]; ++j)
                    for (int i = b.lo[0]; i <= b.hi[0]; ++i) {
                        auto& v = out.at(i, j, k);
                        if (!v && segment_contains(segments[si], grid.center(i, j, k))) v = 1;
                    }
        }
    };

    threads = std::clamp(threads, 1, grid.dims[2]);
    if (threads == 1) {
        work(0, grid.dims[2]);
        return out;
    }
    std::vector<std::thread> pool;
    const int slab = (grid.dims[2] + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int k0 = t * slab, k1 = std::min(grid.dims[2], k0 + slab);
        if (k0 < k1) pool.emplace_back(work, k0, k1);
    }
    for (auto& th : pool) th.join();
    return out;
}

inline LabelVolume voxelize(const VesselTree& tree, const GridSpec& grid, int threads = 1) {
    const auto segs = segments_from_tree(tree);
    return voxelize(segs, grid, threads);
}

}  // namespace venosynth
