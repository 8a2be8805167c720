/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Segmentation scores (accuracy, DICE, centerline DICE), 3D skeletonization
// by topology-preserving thinning, and connected-component utilities.

#include <array>
#include <cstdio>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "volume.hpp"

namespace venosynth {

struct Confusion {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t total() const { return tp + fp + fn + tn; }
};

inline Confusion confusion(const LabelVolume& pred, const LabelVolume& gt) {
    require_same_dims(pred, gt);
    Confusion c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// 2|P∩G| / (|P| + |G|); 1 when both masks are empty.
inline double dice(const LabelVolume& pred, const LabelVolume& gt) {
    const Confusion c = confusion(pred, gt);
    const auto denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double accuracy(const LabelVolume& pred, const LabelVolume& gt) {
    const Confusion c = confusion(pred, gt);
    if (c.total() == 0) return 1.0;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// ---------------------------------------------------------------------------
// Connected components

namespace detail {

inline std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw ValidationError("connectivity must be 6, 18 or 26");
    std::vector<std::array<int, 3>> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int m = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (m == 0) continue;
                if (connectivity == 6 && m > 1) continue;
                if (connectivity == 18 && m > 2) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

}  // namespace detail

struct Components {
    std::vector<std::int32_t> label;  // 0 = background, components numbered from 1 in scan order
    std::vector<std::size_t> sizes;   // sizes[l - 1] is the voxel count of component l
};

/// Labels foreground components. Numbering follows the smallest linear index
/// of each component.
inline Components label_components(const LabelVolume& mask, int connectivity = 26) {
    const auto offs = detail::neighbor_offsets(connectivity);
    const auto& g = mask.grid;
    Components out;
    out.label.assign(mask.data.size(), 0);
    std::vector<std::array<int, 3>> stack;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t at = g.linear(i, j, k);
                if (!mask.data[at] || out.label[at]) continue;
                const auto id = static_cast<std::int32_t>(out.sizes.size() + 1);
                std::size_t size = 0;
                out.label[at] = id;
                stack.push_back({i, j, k});
                while (!stack.empty()) {
                    const auto [x, y, z] = stack.back();
                    stack.pop_back();
                    ++size;
                    for (const auto& o : offs) {
                        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
                        if (!g.contains(nx, ny, nz)) continue;
                        const std::size_t n = g.linear(nx, ny, nz);
                        if (mask.data[n] && !out.label[n]) {
                            out.label[n] = id;
                            stack.push_back({nx, ny, nz});
                        }
                    }
                }
                out.sizes.push_back(size);
            }
    return out;
}

inline std::size_t count_components(const LabelVolume& mask, int connectivity = 26) {
    return label_components(mask, connectivity).sizes.size();
}

/// Keeps only the component with the most voxels; ties go to the component
/// containing the smallest linear index.
inline LabelVolume largest_component(const LabelVolume& mask, int connectivity = 26) {
    const Components cc = label_components(mask, connectivity);
    LabelVolume out(mask.grid, 0);
    if (cc.sizes.empty()) return out;
    std::size_t best = 0;
    for (std::size_t l = 1; l < cc.sizes.size(); ++l)
        if (cc.sizes[l] > cc.sizes[best]) best = l;
    const auto keep = static_cast<std::int32_t>(best + 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i) out.data[i] = cc.label[i] == keep ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Skeletonization
//
// Directional sequential thinning. In each of six sub-iterations the border
// voxels facing one direction are collected, then deleted one by one if they
// are still simple and not curve end points. A voxel is simple when its
// foreground 26-neighbors form exactly one 26-component and the background
// voxels of its 18-neighborhood that touch it form exactly one 6-component;
// deleting simple voxels never changes the topology of either phase.

namespace detail {

/// Position in a 3x3x3 neighborhood: (dx+1) + 3(dy+1) + 9(dz+1); 13 is the center.
constexpr int nb_index(int dx, int dy, int dz) { return (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1); }

struct NeighborhoodTables {
    std::array<std::vector<int>, 27> adj26;
    std::array<std::vector<int>, 27> adj6;
    std::array<bool, 27> in18{};
    std::array<bool, 27> face{};

    NeighborhoodTables() {
        auto coord = [](int n) { return std::array<int, 3>{n % 3 - 1, (n / 3) % 3 - 1, n / 9 - 1}; };
        for (int a = 0; a < 27; ++a) {
            const auto ca = coord(a);
            const int ma = std::abs(ca[0]) + std::abs(ca[1]) + std::abs(ca[2]);
            in18[a] = ma >= 1 && ma <= 2;
            face[a] = ma == 1;
            for (int b = 0; b < 27; ++b) {
                if (a == b) continue;
                const auto cb = coord(b);
                const int dx = std::abs(ca[0] - cb[0]), dy = std::abs(ca[1] - cb[1]), dz = std::abs(ca[2] - cb[2]);
                if (std::max({dx, dy, dz}) == 1) {
                    adj26[a].push_back(b);
                    if (dx + dy + dz == 1) adj6[a].push_back(b);
                }
            }
        }
    }
};

inline const NeighborhoodTables& tables() {
    static const NeighborhoodTables t;
    return t;
}

/// Simple-point test on a 27-bit neighborhood (bit n set = foreground).
inline bool is_simple_config(std::uint32_t bits) {
    const auto& t = tables();
    auto fg = [&](int n) { return n != 13 && ((bits >> n) & 1u); };

    // Foreground 26-components among the 26 neighbors.
    int comps = 0;
    std::uint32_t seen = 0;
    int stack[27];
    for (int s = 0; s < 27; ++s) {
        if (!fg(s) || ((seen >> s) & 1u)) continue;
        if (++comps > 1) return false;
        int top = 0;
        stack[top++] = s;
        seen |= 1u << s;
        while (top) {
            const int v = stack[--top];
            for (int w : t.adj26[v])
                if (fg(w) && !((seen >> w) & 1u)) {
                    seen |= 1u << w;
                    stack[top++] = w;
                }
        }
    }
    if (comps != 1) return false;

    // Background 6-components within the 18-neighborhood that touch the center.
    auto bg = [&](int n) { return t.in18[n] && !((bits >> n) & 1u); };
    comps = 0;
    seen = 0;
    for (int s = 0; s < 27; ++s) {
        if (!t.face[s] || !bg(s) || ((seen >> s) & 1u)) continue;
        if (++comps > 1) return false;
        int top = 0;
        stack[top++] = s;
        seen |= 1u << s;
        while (top) {
            const int v = stack[--top];
            for (int w : t.adj6[v])
                if (bg(w) && !((seen >> w) & 1u)) {
                    seen |= 1u << w;
                    stack[top++] = w;
                }
        }
    }
    return comps == 1;
}

class SimpleCache {
public:
    bool operator()(std::uint32_t bits) {
        const auto it = cache_.find(bits);
        if (it != cache_.end()) return it->second;
        const bool s = is_simple_config(bits);
        cache_.emplace(bits, s);
        return s;
    }

private:
    std::unordered_map<std::uint32_t, bool> cache_;
};

inline std::uint32_t neighborhood_bits(const LabelVolume& v, int i, int j, int k) {
    std::uint32_t bits = 0;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int x = i + dx, y = j + dy, z = k + dz;
                if (v.grid.contains(x, y, z) && v.at(x, y, z)) bits |= 1u << nb_index(dx, dy, dz);
            }
    return bits;
}

inline int popcount26(std::uint32_t bits) { return __builtin_popcount(bits & ~(1u << 13)); }

}  // namespace detail

/// Thins a binary mask to a one-voxel-wide skeleton with the same number of
/// 26-connected components. Curve end points are kept.
inline LabelVolume skeletonize(const LabelVolume& mask) {
    LabelVolume out(mask.grid, 0);
    for (std::size_t i = 0; i < mask.data.size(); ++i) out.data[i] = mask.data[i] ? 1 : 0;
    const auto& g = out.grid;
    detail::SimpleCache simple;
    static constexpr int dirs[6][3] = {{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {-1, 0, 0}, {1, 0, 0}};

    std::vector<std::array<int, 3>> fg;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (out.at(i, j, k)) fg.push_back({i, j, k});

    for (bool changed = true; changed;) {
        changed = false;
        for (const auto& d : dirs) {
            std::vector<std::array<int, 3>> candidates;
            for (const auto& [i, j, k] : fg) {
                if (!out.at(i, j, k)) continue;
                const int x = i + d[0], y = j + d[1], z = k + d[2];
                if (g.contains(x, y, z) && out.at(x, y, z)) continue;  // not a border voxel in this direction
                const auto bits = detail::neighborhood_bits(out, i, j, k);
                if (detail::popcount26(bits) <= 1) continue;  // end point
                if (simple(bits)) candidates.push_back({i, j, k});
            }
            for (const auto& [i, j, k] : candidates) {
                const auto bits = detail::neighborhood_bits(out, i, j, k);
                if (detail::popcount26(bits) <= 1 || !simple(bits)) continue;
                out.at(i, j, k) = 0;
                changed = true;
            }
        }
        if (changed) std::erase_if(fg, [&](const auto& p) { return !out.at(p[0], p[1], p[2]); });
    }
    return out;
}

/// Centerline DICE from explicit skeletons:
/// Tprec = |S_P ∩ G| / |S_P|, Tsens = |S_G ∩ P| / |S_G|, harmonic mean of both.
/// Both masks empty -> 1, exactly one empty -> 0.
inline double cl_dice_from_skeletons(const LabelVolume& pred, const LabelVolume& gt, const LabelVolume& skel_pred,
                                     const LabelVolume& skel_gt) {
    require_same_dims(pred, gt);
    require_same_dims(pred, skel_pred);
    require_same_dims(pred, skel_gt);
    const std::size_t np = count_foreground(pred), ng = count_foreground(gt);
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    std::uint64_t sp = 0, sp_in_g = 0, sg = 0, sg_in_p = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        if (skel_pred.data[i]) {
            ++sp;
            sp_in_g += gt.data[i] != 0;
        }
        if (skel_gt.data[i]) {
            ++sg;
            sg_in_p += pred.data[i] != 0;
        }
    }
    if (sp == 0 || sg == 0) return 0.0;
    const double tprec = static_cast<double>(sp_in_g) / static_cast<double>(sp);
    const double tsens = static_cast<double>(sg_in_p) / static_cast<double>(sg);
    if (tprec + tsens == 0.0) return 0.0;
    return 2.0 * tprec * tsens / (tprec + tsens);
}

inline double cl_dice(const LabelVolume& pred, const LabelVolume& gt) {
    require_same_dims(pred, gt);
    return cl_dice_from_skeletons(pred, gt, skeletonize(pred), skeletonize(gt));
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
    double accuracy = 0.0;
    double dice = 0.0;
    double cl_dice = 0.0;
    Confusion counts;
};

inline MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& gt) {
    MetricsReport r;
    r.counts = confusion(pred, gt);
    r.accuracy = accuracy(pred, gt);
    r.dice = dice(pred, gt);
    r.cl_dice = cl_dice(pred, gt);
    return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    return {{"accuracy", r.accuracy},
            {"dice", r.dice},
            {"cl_dice", r.cl_dice},
            {"tp", r.counts.tp},
            {"fp", r.counts.fp},
            {"fn", r.counts.fn},
            {"tn", r.counts.tn}};
}

/// Fixed-order percent table: Acc, DICE, clDICE with one decimal.
inline std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::string out = "Model          Acc    DICE   clDICE\n";
    char line[128];
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof(line), "%-12s %5.1f  %5.1f  %5.1f\n", name.c_str(), 100.0 * r.accuracy,
                      100.0 * r.dice, 100.0 * r.cl_dice);
        out += line;
    }
    return out;
}

}  // namespace venosynth
