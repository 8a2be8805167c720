/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Global Constructive Optimization of a venous tree.
//
// Terminals are sampled inside a domain, attached to the leaves of a small
// hand-made prebuilt tree, and the resulting star is reorganized by repeated
// tree-wide sweeps of four operations:
//
//   split  - a node with more than two children hands a cluster of
//            similarly-directed children to a new intermediate node
//   merge  - internal edges shorter than merge_length are collapsed
//   prune  - pass-through nodes (one child) are fused away
//   relax  - free node positions descend the cost (Weiszfeld steps with
//            step halving, one node at a time)
//
// Flows and Murray radii are refreshed after every sweep and a sweep is kept
// only if it does not raise the total cost, so the recorded cost trace is
// monotone.

#include <algorithm>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <variant>

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include "vessel_tree.hpp"
#include "volume.hpp"

namespace venosynth {

// ---------------------------------------------------------------------------
// Inputs

/// Seed tree drawn by hand. Every node is fixed: positions survive synthesis.
class PrebuiltTree {
public:
    static constexpr std::size_t kMaxNodes = 19;

    explicit PrebuiltTree(VesselTree tree) : tree_(std::move(tree)) {
        for (auto& n : tree_.nodes) n.fixed = true;
        for (auto& e : tree_.edges) e.flow = 0.0;
        if (tree_.nodes.size() > kMaxNodes)
            throw ValidationError("prebuilt tree must have fewer than 20 nodes (got " +
                                  std::to_string(tree_.nodes.size()) + ")");
        const auto violations = validate_tree(tree_);
        if (!violations.empty())
            throw StructureError("invalid prebuilt tree: " + violations.front().message);
    }

    const VesselTree& tree() const { return tree_; }

    std::vector<NodeId> leaves() const {
        const TreeIndex idx(tree_);
        std::vector<NodeId> out;
        for (std::size_t i = 0; i < tree_.nodes.size(); ++i)
            if (idx.is_terminal(i)) out.push_back(tree_.nodes[i].id);
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    VesselTree tree_;
};

struct Ellipsoid {
    Vec3 center;
    Vec3 semi_axes;
};

/// Region in which terminals are sampled.
class DomainMask {
public:
    explicit DomainMask(Ellipsoid e) : shape_(e) {
        if (!(e.semi_axes.x > 0 && e.semi_axes.y > 0 && e.semi_axes.z > 0) || !is_finite(e.semi_axes) ||
            !is_finite(e.center))
            throw ValidationError("ellipsoid semi-axes must be positive");
    }
    explicit DomainMask(LabelVolume grid) : shape_(std::move(grid)) {
        const auto& g = std::get<LabelVolume>(shape_);
        g.grid.validate();
        if (count_foreground(g) == 0) throw ValidationError("domain mask has no interior voxel");
    }

    /// True if p lies strictly inside the domain.
    bool contains(const Vec3& p) const {
        if (const auto* e = std::get_if<Ellipsoid>(&shape_)) {
            const Vec3 d = p - e->center;
            const double q = (d.x / e->semi_axes.x) * (d.x / e->semi_axes.x) +
                             (d.y / e->semi_axes.y) * (d.y / e->semi_axes.y) +
                             (d.z / e->semi_axes.z) * (d.z / e->semi_axes.z);
            return q < 1.0;
        }
        const auto& v = std::get<LabelVolume>(shape_);
        int ijk[3];
        for (int a = 0; a < 3; ++a) {
            const double f = (p[a] - v.grid.origin[a]) / v.grid.spacing[a];
            if (!(f > -0.5 && f < v.grid.dims[a] - 0.5)) return false;
            ijk[a] = static_cast<int>(std::lround(f));
        }
        return v.grid.contains(ijk[0], ijk[1], ijk[2]) && v.at(ijk[0], ijk[1], ijk[2]) != 0;
    }

    /// Axis-aligned box enclosing the domain: {lo, hi}.
    std::pair<Vec3, Vec3> bounds() const {
        if (const auto* e = std::get_if<Ellipsoid>(&shape_)) return {e->center - e->semi_axes, e->center + e->semi_axes};
        const auto& g = std::get<LabelVolume>(shape_).grid;
        Vec3 lo{g.origin[0] - 0.5 * g.spacing[0], g.origin[1] - 0.5 * g.spacing[1], g.origin[2] - 0.5 * g.spacing[2]};
        Vec3 hi{g.origin[0] + (g.dims[0] - 0.5) * g.spacing[0], g.origin[1] + (g.dims[1] - 0.5) * g.spacing[1],
                g.origin[2] + (g.dims[2] - 0.5) * g.spacing[2]};
        return {lo, hi};
    }

    const Ellipsoid* ellipsoid() const { return std::get_if<Ellipsoid>(&shape_); }

private:
    std::variant<Ellipsoid, LabelVolume> shape_;
};

enum class Operation { Relax, Split, Merge, Prune };

inline const char* to_string(Operation op) {
    switch (op) {
        case Operation::Relax: return "relax";
        case Operation::Split: return "split";
        case Operation::Merge: return "merge";
        case Operation::Prune: return "prune";
    }
    return "?";
}

struct Phase {
    std::vector<Operation> operations;
    int sweep_count = 1;
};

struct GcoSchedule {
    std::vector<Phase> phases;

    /// Three rounds of [relax x5, split, merge+prune, relax x5].
    static GcoSchedule default_schedule() {
        GcoSchedule s;
        for (int round = 0; round < 3; ++round) {
            s.phases.push_back({{Operation::Relax}, 5});
            s.phases.push_back({{Operation::Split}, 1});
            s.phases.push_back({{Operation::Merge, Operation::Prune}, 1});
            s.phases.push_back({{Operation::Relax}, 5});
        }
        return s;
    }

    void validate() const {
        if (phases.empty()) throw ValidationError("schedule needs at least one phase");
        for (const auto& p : phases) {
            if (p.operations.empty()) throw ValidationError("schedule phase without operations");
            if (p.sweep_count < 1) throw ValidationError("schedule phase sweep_count must be >= 1");
        }
    }
};

struct Terminal {
    Vec3 position;
    double radius = 0.0;
};

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_quantile(double p) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p); }

}  // namespace detail

/// Draws `count` terminals uniformly inside the mask with radii from
/// N(mean, sd) truncated to (0, mean + 3 sd]. Radii use inverse-CDF sampling
/// so the stream only depends on mt19937_64.
inline std::vector<Terminal> sample_terminals(const DomainMask& mask, int count, double radius_mean,
                                              double radius_sd, std::uint64_t rng_seed) {
    if (count < 1) throw ValidationError("terminal count must be >= 1");
    if (!(radius_mean > 0.0) || !(radius_sd > 0.0)) throw ValidationError("radius mean and sd must be positive");
    constexpr std::uint64_t kMaxAttempts = 1'000'000;

    std::mt19937_64 eng(rng_seed);
    const auto [lo, hi] = mask.bounds();
    const double p_lo = detail::normal_cdf((0.0 - radius_mean) / radius_sd);
    const double p_hi = detail::normal_cdf(3.0);
    const double r_max = radius_mean + 3.0 * radius_sd;

    std::vector<Terminal> out;
    out.reserve(static_cast<std::size_t>(count));
    std::uint64_t attempts = 0;
    while (out.size() < static_cast<std::size_t>(count)) {
        Vec3 p;
        do {
            if (++attempts > kMaxAttempts)
                throw ValidationError("terminal sampling exceeded 1e6 attempts; domain too small");
            const double ux = uniform_open(eng), uy = uniform_open(eng), uz = uniform_open(eng);
            p = {lo.x + ux * (hi.x - lo.x), lo.y + uy * (hi.y - lo.y), lo.z + uz * (hi.z - lo.z)};
        } while (!mask.contains(p));
        double r = 0.0;
        while (!(r > 0.0 && r <= r_max)) {
            const double u = p_lo + uniform_open(eng) * (p_hi - p_lo);
            r = radius_mean + radius_sd * detail::normal_quantile(u);
        }
        out.push_back({p, r});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attachment

/// Connects every terminal as a new leaf under its nearest prebuilt leaf
/// (ties go to the smaller node id). New nodes get consecutive ids after the
/// prebuilt ones, in terminal order.
inline VesselTree attach_terminals(const PrebuiltTree& prebuilt, std::span<const Terminal> terminals) {
    if (terminals.empty()) throw ValidationError("no terminals to attach");
    const auto leaves = prebuilt.leaves();
    if (leaves.empty()) throw StructureError("prebuilt tree has no leaf to attach terminals to");

    VesselTree tree = prebuilt.tree();
    std::vector<Vec3> leaf_pos;
    for (NodeId id : leaves) leaf_pos.push_back(tree.find_node(id)->position);

    NodeId next = tree.next_free_id();
    for (const auto& t : terminals) {
        std::size_t best = 0;
        double best_d2 = dot(t.position - leaf_pos[0], t.position - leaf_pos[0]);
        for (std::size_t l = 1; l < leaves.size(); ++l) {
            const Vec3 d = t.position - leaf_pos[l];
            const double d2 = dot(d, d);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = l;
            }
        }
        tree.nodes.push_back(Node{next, t.position, false});
        tree.edges.push_back(Edge{leaves[best], next, t.radius, 0.0});
        ++next;
    }
    return tree;
}

// ---------------------------------------------------------------------------
// Relaxation

namespace detail {

/// Positions plus, per node, the incident edges with their cost weight per
/// unit length. Flows and radii do not depend on positions, so the weights
/// stay valid while nodes move.
struct RelaxGeometry {
    std::vector<Vec3> pos;
    std::vector<std::vector<std::pair<std::size_t, double>>> incident;  // (neighbor, weight)
    std::vector<char> movable;
    std::vector<std::size_t> order;  // preorder

    RelaxGeometry(const VesselTree& tree, const TreeIndex& idx, const GcoConfig& config) {
        const std::size_t n = tree.nodes.size();
        pos.resize(n);
        incident.resize(n);
        movable.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) pos[i] = tree.nodes[i].position;
        for (const Edge& e : tree.edges) {
            const std::size_t p = idx.node_of.at(e.parent), c = idx.node_of.at(e.child);
            const double w = cost_per_length(e, config);
            incident[p].emplace_back(c, w);
            incident[c].emplace_back(p, w);
        }
        for (std::size_t i = 0; i < n; ++i)
            movable[i] = i != idx.root && !idx.child_edges[i].empty() && !tree.nodes[i].fixed;
        order = idx.preorder;
    }

    double local_cost(std::size_t v, const Vec3& at) const {
        double s = 0.0;
        for (const auto& [nb, w] : incident[v]) s += w * distance(at, pos[nb]);
        return s;
    }

    /// Up to `iterations` Weiszfeld steps on node v; each step is halved until
    /// it strictly lowers the local cost while keeping every incident edge at
    /// least min_len long. Returns true if v moved.
    bool relax_node(std::size_t v, double min_len, int iterations) {
        bool moved = false;
        double cur = local_cost(v, pos[v]);
        for (int it = 0; it < iterations; ++it) {
            Vec3 num{};
            double den = 0.0;
            for (const auto& [nb, w] : incident[v]) {
                const double d = distance(pos[v], pos[nb]);
                if (!(d > 0.0)) return moved;
                num += pos[nb] * (w / d);
                den += w / d;
            }
            const Vec3 step = num / den - pos[v];
            if (!(norm(step) > 0.0)) break;
            bool accepted = false;
            for (double t = 1.0; t > 1.0 / 1024.0; t *= 0.5) {
                const Vec3 cand = pos[v] + step * t;
                bool ok = true;
                for (const auto& nbw : incident[v])
                    if (distance(cand, pos[nbw.first]) < min_len) {
                        ok = false;
                        break;
                    }
                if (!ok) continue;
                const double c = local_cost(v, cand);
                if (c < cur) {
                    pos[v] = cand;
                    cur = c;
                    accepted = moved = true;
                    break;
                }
            }
            if (!accepted) break;
        }
        return moved;
    }

    void write_back(VesselTree& tree) const {
        for (std::size_t i = 0; i < pos.size(); ++i) tree.nodes[i].position = pos[i];
    }
};

/// One pass of node-wise descent over every free node (preorder).
inline VesselTree relax_sweep(VesselTree tree, const GcoConfig& config) {
    const TreeIndex idx(tree);
    RelaxGeometry g(tree, idx, config);
    for (std::size_t v : g.order)
        if (g.movable[v]) g.relax_node(v, config.min_edge_length, 4);
    g.write_back(tree);
    return tree;
}

/// Descent restricted to a few nodes, used to settle a freshly split node.
inline VesselTree relax_nodes(VesselTree tree, const GcoConfig& config, std::span<const NodeId> ids, int iterations) {
    const TreeIndex idx(tree);
    RelaxGeometry g(tree, idx, config);
    for (int it = 0; it < iterations; ++it) {
        bool any = false;
        for (NodeId id : ids) {
            const std::size_t v = idx.node_of.at(id);
            if (g.movable[v]) any |= g.relax_node(v, config.min_edge_length, 4);
        }
        if (!any) break;
    }
    g.write_back(tree);
    return tree;
}

}  // namespace detail

/// Moves free nodes (not root, not terminal, not fixed) to lower the total
/// cost. Sweeps until the relative improvement of a sweep drops below
/// relax_tolerance or max_iterations sweeps ran. Never returns a tree that
/// costs more than the input.
inline VesselTree relax(VesselTree tree, const GcoConfig& config) {
    double prev = total_cost(tree, config).total;
    for (int it = 0; it < config.max_iterations; ++it) {
        VesselTree next = detail::relax_sweep(tree, config);
        const double c = total_cost(next, config).total;
        if (!(c <= prev)) break;
        const double improvement = prev > 0.0 ? (prev - c) / prev : 0.0;
        tree = std::move(next);
        prev = c;
        if (improvement < config.relax_tolerance) break;
    }
    return tree;
}

// ---------------------------------------------------------------------------
// Split

/// Two-way partition of unit directions minimizing the within-group scatter
/// Σ_g Σ_i |u_i - mean_g|². Exhaustive for up to 6 directions, otherwise
/// 2-means with 10 seeded restarts. Returns a 0/1 label per direction.
inline std::vector<int> partition_directions(std::span<const Vec3> dirs, std::uint64_t seed) {
    const std::size_t k = dirs.size();
    if (k < 2) throw ValidationError("need at least two directions to partition");

    auto scatter = [&](const std::vector<int>& label) {
        Vec3 sum[2]{};
        double cnt[2]{0, 0};
        for (std::size_t i = 0; i < k; ++i) {
            sum[label[i]] += dirs[i];
            cnt[label[i]] += 1.0;
        }
        double s = 0.0;
        for (int g = 0; g < 2; ++g) {
            if (cnt[g] == 0.0) return std::numeric_limits<double>::infinity();
            // Σ|u - m|² = Σ|u|² - |Σu|²/n
            double sq = 0.0;
            for (std::size_t i = 0; i < k; ++i)
                if (label[i] == g) sq += dot(dirs[i], dirs[i]);
            s += sq - dot(sum[g], sum[g]) / cnt[g];
        }
        return s;
    };

    std::vector<int> best(k, 0);
    double best_cost = std::numeric_limits<double>::infinity();
    if (k <= 6) {
        // The last direction stays in group 0 so each partition appears once.
        const unsigned limit = 1u << (k - 1);
        std::vector<int> label(k);
        for (unsigned mask = 1; mask < limit; ++mask) {
            for (std::size_t i = 0; i < k; ++i) label[i] = (mask >> i) & 1u;
            const double c = scatter(label);
            if (c < best_cost) {
                best_cost = c;
                best = label;
            }
        }
        return best;
    }

    std::vector<int> label(k);
    for (int restart = 0; restart < 10; ++restart) {
        std::mt19937_64 eng(derive_seed(seed, static_cast<std::uint64_t>(restart)));
        const std::size_t a = uniform_below(eng, k);
        std::size_t b = uniform_below(eng, k - 1);
        if (b >= a) ++b;
        Vec3 center[2] = {dirs[a], dirs[b]};
        std::fill(label.begin(), label.end(), -1);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t i = 0; i < k; ++i) {
                const Vec3 d0 = dirs[i] - center[0], d1 = dirs[i] - center[1];
                const int l = dot(d1, d1) < dot(d0, d0) ? 1 : 0;
                if (l != label[i]) {
                    label[i] = l;
                    changed = true;
                }
            }
            if (!changed) break;
            Vec3 sum[2]{};
            int cnt[2]{0, 0};
            for (std::size_t i = 0; i < k; ++i) {
                sum[label[i]] += dirs[i];
                ++cnt[label[i]];
            }
            if (cnt[0] == 0 || cnt[1] == 0) break;
            center[0] = sum[0] / cnt[0];
            center[1] = sum[1] / cnt[1];
        }
        const double c = scatter(label);
        if (c < best_cost) {
            best_cost = c;
            best = label;
        }
    }
    if (!std::isfinite(best_cost)) {  // all directions identical
        for (std::size_t i = 0; i < k; ++i) best[i] = i < k / 2 ? 1 : 0;
    }
    return best;
}

struct SplitResult {
    VesselTree tree;
    bool applied = false;  // false: node had at most two children
    NodeId new_node = -1;
    std::vector<NodeId> moved_children;  // children now hanging from new_node
};

/// Splits a node with more than two children: the children are grouped by
/// direction and the larger group is re-parented to a new node placed at the
/// centroid of the node and that group's children. Flows and radii are
/// refreshed with the config's Q_t and Murray exponent.
inline SplitResult split(const VesselTree& tree, NodeId node_id, const GcoConfig& config) {
    const TreeIndex idx(tree);
    const auto it = idx.node_of.find(node_id);
    if (it == idx.node_of.end()) throw ValidationError("split: unknown node " + std::to_string(node_id));
    const std::size_t v = it->second;

    std::vector<std::size_t> child_edges = idx.child_edges[v];
    if (child_edges.size() <= 2) return SplitResult{tree, false, -1, {}};
    std::sort(child_edges.begin(), child_edges.end(),
              [&](std::size_t a, std::size_t b) { return tree.edges[a].child < tree.edges[b].child; });

    const Vec3 origin = tree.nodes[v].position;
    std::vector<Vec3> dirs;
    std::vector<Vec3> child_pos;
    for (std::size_t e : child_edges) {
        const Vec3 p = tree.nodes[idx.node_of.at(tree.edges[e].child)].position;
        child_pos.push_back(p);
        dirs.push_back((p - origin) / distance(p, origin));
    }
    const auto label = partition_directions(dirs, derive_seed(config.rng_seed, static_cast<std::uint64_t>(node_id)));

    std::size_t count[2] = {0, 0};
    for (int l : label) ++count[l];
    // Larger group moves; on a tie, the group holding the smallest child id.
    const int moving = count[1] > count[0] ? 1 : (count[0] > count[1] ? 0 : label[0]);

    Vec3 centroid = origin;
    Vec3 mean_dir{};
    double min_len = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < label.size(); ++i)
        if (label[i] == moving) {
            centroid += child_pos[i];
            mean_dir += dirs[i];
            min_len = std::min(min_len, distance(child_pos[i], origin));
        }
    centroid = centroid / static_cast<double>(count[moving] + 1);

    auto clearance = [&](const Vec3& p) {
        double d = distance(p, origin);
        for (std::size_t i = 0; i < label.size(); ++i)
            if (label[i] == moving) d = std::min(d, distance(p, child_pos[i]));
        return d;
    };
    if (!(clearance(centroid) > 0.0)) {
        if (!(norm(mean_dir) > 0.0)) return SplitResult{tree, false, -1, {}};
        centroid = origin + mean_dir / norm(mean_dir) * (0.5 * min_len);
        if (!(clearance(centroid) > 0.0)) return SplitResult{tree, false, -1, {}};
    }

    SplitResult result;
    result.tree = tree;
    VesselTree& out = result.tree;
    const NodeId fresh = out.next_free_id();
    out.nodes.push_back(Node{fresh, centroid, false});
    StableSum flow, rg;
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (label[i] != moving) continue;
        Edge& e = out.edges[child_edges[i]];
        e.parent = fresh;
        flow.add(e.flow);
        rg.add(std::pow(e.radius, config.murray_gamma));
        result.moved_children.push_back(e.child);
    }
    out.edges.push_back(Edge{node_id, fresh, std::pow(rg.value(), 1.0 / config.murray_gamma), flow.value()});
    result.tree = refresh_hemodynamics(std::move(out), config);
    result.applied = true;
    result.new_node = fresh;
    return result;
}

// ---------------------------------------------------------------------------
// Merge / prune

struct MergePruneOptions {
    bool collapse_short = true;  // merge: internal edges shorter than epsilon
    bool fuse_pass_through = true;  // prune: nodes with a single child
};

/// Removes free internal nodes whose incoming edge is shorter than
/// length_epsilon (their children move up to the parent) and fuses
/// pass-through nodes. Terminals, the root and fixed nodes are never removed;
/// a surviving edge keeps the radius and flow of its downstream part.
inline VesselTree merge_prune(const VesselTree& tree, double length_epsilon, MergePruneOptions opts = {}) {
    const TreeIndex idx(tree);
    const std::size_t n = tree.nodes.size();
    std::vector<std::ptrdiff_t> parent(n, -1);
    std::vector<std::vector<std::size_t>> children(n);
    std::vector<std::size_t> in_edge(n, 0);  // original edge index carrying the node's radius/flow
    for (std::size_t e = 0; e < tree.edges.size(); ++e) {
        const std::size_t p = idx.node_of.at(tree.edges[e].parent), c = idx.node_of.at(tree.edges[e].child);
        parent[c] = static_cast<std::ptrdiff_t>(p);
        children[p].push_back(c);
        in_edge[c] = e;
    }
    std::vector<char> alive(n, 1);
    auto pos = [&](std::size_t i) { return tree.nodes[i].position; };

    for (bool changed = true; changed;) {
        changed = false;
        std::vector<std::size_t> order;
        std::vector<std::size_t> stack{idx.root};
        while (!stack.empty()) {
            const std::size_t u = stack.back();
            stack.pop_back();
            order.push_back(u);
            for (auto c = children[u].rbegin(); c != children[u].rend(); ++c) stack.push_back(*c);
        }
        for (std::size_t v : order) {
            if (!alive[v] || parent[v] < 0 || tree.nodes[v].fixed || children[v].empty()) continue;
            const auto p = static_cast<std::size_t>(parent[v]);
            const bool short_edge = opts.collapse_short && distance(pos(p), pos(v)) < length_epsilon;
            const bool pass_through = opts.fuse_pass_through && children[v].size() == 1;
            if (!short_edge && !pass_through) continue;
            bool degenerate = false;
            for (std::size_t c : children[v]) degenerate |= !(distance(pos(p), pos(c)) > 0.0);
            if (degenerate) continue;
            auto& siblings = children[p];
            const auto at = std::find(siblings.begin(), siblings.end(), v);
            siblings.erase(at);
            for (std::size_t c : children[v]) {
                parent[c] = static_cast<std::ptrdiff_t>(p);
                siblings.push_back(c);
            }
            children[v].clear();
            alive[v] = 0;
            changed = true;
        }
    }

    VesselTree out;
    out.root_id = tree.root_id;
    for (std::size_t i = 0; i < n; ++i)
        if (alive[i]) out.nodes.push_back(tree.nodes[i]);
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < n; ++i)
        if (alive[i] && parent[i] >= 0) kept.push_back(i);
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return in_edge[a] < in_edge[b]; });
    for (std::size_t c : kept) {
        Edge e = tree.edges[in_edge[c]];
        e.parent = tree.nodes[static_cast<std::size_t>(parent[c])].id;
        out.edges.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct SynthesisResult {
    VesselTree tree;
    std::vector<Terminal> terminals;  // as sampled
    std::vector<double> cost_trace;   // after attachment, then after each accepted sweep
    int rejected_sweeps = 0;
};

/// Called after attachment and after every sweep (accepted or not) with the
/// candidate tree; used by tests to check intermediate invariants.
using SweepObserver = std::function<void(std::string_view stage, const VesselTree&)>;

namespace detail {

/// Gives every prebuilt leaf at least one terminal: an empty leaf takes the
/// closest terminal from a leaf that holds two or more.
inline VesselTree ensure_leaves_served(VesselTree tree, const PrebuiltTree& prebuilt) {
    for (NodeId leaf : prebuilt.leaves()) {
        std::unordered_map<NodeId, int> load;
        for (const Edge& e : tree.edges) ++load[e.parent];
        if (load[leaf] > 0) continue;
        const Vec3 at = tree.find_node(leaf)->position;
        std::ptrdiff_t best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < tree.edges.size(); ++e) {
            const Edge& edge = tree.edges[e];
            const Node* child = tree.find_node(edge.child);
            if (child->fixed || load[edge.parent] < 2) continue;
            const Vec3 d = child->position - at;
            const double d2 = dot(d, d);
            if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && edge.child < tree.edges[best].child)) {
                best_d2 = d2;
                best = static_cast<std::ptrdiff_t>(e);
            }
        }
        if (best < 0)
            throw ValidationError("terminal_count is too small to serve every prebuilt leaf");
        tree.edges[best].parent = leaf;
    }
    return tree;
}

inline VesselTree split_sweep(VesselTree tree, const GcoConfig& config) {
    double cost = total_cost(tree, config).total;
    std::deque<NodeId> work;
    {
        const TreeIndex idx(tree);
        for (std::size_t v : idx.preorder)
            if (idx.child_edges[v].size() > 2) work.push_back(tree.nodes[v].id);
    }
    while (!work.empty()) {
        const NodeId id = work.front();
        work.pop_front();
        auto r = split(tree, id, config);
        if (!r.applied) continue;
        const NodeId settle[] = {r.new_node};
        VesselTree cand = relax_nodes(std::move(r.tree), config, settle, 8);
        const double c = total_cost(cand, config).total;
        if (!(c < cost)) continue;
        tree = std::move(cand);
        cost = c;
        const TreeIndex idx(tree);
        if (idx.child_edges[idx.node_of.at(id)].size() > 2) work.push_back(id);
        if (idx.child_edges[idx.node_of.at(r.new_node)].size() > 2) work.push_back(r.new_node);
    }
    return tree;
}

}  // namespace detail

inline SynthesisResult synthesize(const PrebuiltTree& prebuilt, const DomainMask& mask, const GcoConfig& config,
                                  const GcoSchedule& schedule, const SweepObserver& observer = {}) {
    config.validate();
    schedule.validate();
    SynthesisResult result;
    result.terminals = sample_terminals(mask, config.terminal_count, config.terminal_radius_mean,
                                        config.terminal_radius_sd, config.rng_seed);
    VesselTree tree = attach_terminals(prebuilt, result.terminals);
    tree = detail::ensure_leaves_served(std::move(tree), prebuilt);
    tree = refresh_hemodynamics(std::move(tree), config);
    double cost = total_cost(tree, config).total;
    result.cost_trace.push_back(cost);
    if (observer) observer("attach", tree);

    for (const Phase& phase : schedule.phases) {
        std::vector<Operation> ops = phase.operations;
        std::sort(ops.begin(), ops.end(), [](Operation a, Operation b) {
            auto rank = [](Operation o) {
                switch (o) {
                    case Operation::Split: return 0;
                    case Operation::Merge: return 1;
                    case Operation::Prune: return 2;
                    case Operation::Relax: return 3;
                }
                return 4;
            };
            return rank(a) < rank(b);
        });
        const bool merge = std::count(ops.begin(), ops.end(), Operation::Merge) > 0;
        const bool prune = std::count(ops.begin(), ops.end(), Operation::Prune) > 0;

        for (int sweep = 0; sweep < phase.sweep_count; ++sweep) {
            VesselTree cand = tree;
            std::string stage;
            for (Operation op : ops) {
                stage += stage.empty() ? "" : "+";
                stage += to_string(op);
                switch (op) {
                    case Operation::Split: cand = detail::split_sweep(std::move(cand), config); break;
                    case Operation::Relax: cand = detail::relax_sweep(std::move(cand), config); break;
                    case Operation::Merge:
                    case Operation::Prune:
                        if (op == Operation::Merge || !merge)
                            cand = merge_prune(cand, config.merge_length, {merge, prune});
                        break;
                }
            }
            cand = refresh_hemodynamics(std::move(cand), config);
            const double c = total_cost(cand, config).total;
            if (observer) observer(stage, cand);
            if (c <= cost) {
                const double improvement = cost > 0.0 ? (cost - c) / cost : 0.0;
                tree = std::move(cand);
                cost = c;
                result.cost_trace.push_back(cost);
                const bool relax_only = ops.size() == 1 && ops.front() == Operation::Relax;
                if (relax_only && improvement < config.relax_tolerance) break;
            } else {
                ++result.rejected_sweeps;
            }
        }
    }
    result.tree = std::move(tree);
    return result;
}

// ---------------------------------------------------------------------------
// JSON for schedules and domains

inline GcoSchedule schedule_from_json(const nlohmann::json& j) {
    try {
        GcoSchedule s;
        for (const auto& jp : j) {
            Phase p;
            for (const auto& jo : jp.at("operations")) {
                const auto name = jo.get<std::string>();
                if (name == "relax") p.operations.push_back(Operation::Relax);
                else if (name == "split") p.operations.push_back(Operation::Split);
                else if (name == "merge") p.operations.push_back(Operation::Merge);
                else if (name == "prune") p.operations.push_back(Operation::Prune);
                else throw ValidationError("unknown schedule operation '" + name + "'");
            }
            p.sweep_count = jp.value("sweeps", 1);
            s.phases.push_back(std::move(p));
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed schedule JSON: ") + e.what());
    }
}

inline nlohmann::json schedule_to_json(const GcoSchedule& s) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : s.phases) {
        nlohmann::json ops = nlohmann::json::array();
        for (auto op : p.operations) ops.push_back(to_string(op));
        j.push_back({{"operations", ops}, {"sweeps", p.sweep_count}});
    }
    return j;
}

inline Ellipsoid ellipsoid_from_json(const nlohmann::json& j) {
    try {
        const auto& c = j.at("center_um");
        const auto& a = j.at("semi_axes_um");
        return Ellipsoid{{c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()},
                         {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed ellipsoid JSON: ") + e.what());
    }
}

inline nlohmann::json ellipsoid_to_json(const Ellipsoid& e) {
    return {{"center_um", {e.center.x, e.center.y, e.center.z}},
            {"semi_axes_um", {e.semi_axes.x, e.semi_axes.y, e.semi_axes.z}}};
}

/// A five-node renal-vein seed inside an ellipsoidal kidney: inlet at the
/// hilum (-x side), one trunk node, three leaves spread towards the cortex.
inline PrebuiltTree default_prebuilt(const Ellipsoid& kidney) {
    const Vec3 c = kidney.center;
    const Vec3 a = kidney.semi_axes;
    const double r0 = 0.04 * std::min({a.x, a.y, a.z});
    VesselTree t;
    t.root_id = 0;
    t.nodes = {{0, c + Vec3{-0.9 * a.x, 0.0, 0.0}, true},
               {1, c + Vec3{-0.45 * a.x, 0.0, 0.0}, true},
               {2, c + Vec3{-0.05 * a.x, 0.45 * a.y, 0.0}, true},
               {3, c + Vec3{-0.05 * a.x, -0.45 * a.y, 0.0}, true},
               {4, c + Vec3{0.4 * a.x, 0.0, 0.1 * a.z}, true}};
    t.edges = {{0, 1, r0, 0.0}, {1, 2, 0.7 * r0, 0.0}, {1, 3, 0.7 * r0, 0.0}, {1, 4, 0.7 * r0, 0.0}};
    return PrebuiltTree(std::move(t));
}

}  // namespace venosynth
