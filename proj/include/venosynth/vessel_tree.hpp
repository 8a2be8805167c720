/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Vessel tree data model: a rooted tree of cylindrical segments. Nodes carry
// positions in micrometres, edges carry radius and volumetric flow. The
// physiology helpers keep flows conserved at every junction and radii
// consistent with Murray's law.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace venosynth {

using NodeId = std::int64_t;

struct Node {
    NodeId id = 0;
    Vec3 position;       // µm
    bool fixed = false;  // never moved or removed by the optimizer
    bool operator==(const Node&) const = default;
};

struct Edge {
    NodeId parent = 0;
    NodeId child = 0;
    double radius = 0.0;  // µm
    double flow = 0.0;    // µm³/s
    bool operator==(const Edge&) const = default;
};

struct VesselTree {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    NodeId root_id = 0;

    const Node* find_node(NodeId id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }
    NodeId next_free_id() const {
        NodeId m = std::numeric_limits<NodeId>::min();
        for (const auto& n : nodes) m = std::max(m, n.id);
        return nodes.empty() ? 0 : m + 1;
    }
    bool operator==(const VesselTree&) const = default;
};

/// Boundary conditions and optimizer weights for constructive growth.
/// Physical defaults are the renal venous parameters.
struct GcoConfig {
    double terminal_radius_mean = 10.79;  // µm
    double terminal_radius_sd = 2.41;     // µm
    int terminal_count = 200;
    std::optional<double> inlet_flow = 1.167e11;  // µm³/s (7 ml/min)
    std::optional<double> terminal_flow;          // µm³/s; derived as Q/N when absent
    double viscosity = 3.6e-3;                    // Pa·s
    double material_weight = 6e-8;                // w_c
    double murray_gamma = 3.0;
    double relax_tolerance = 1e-6;  // relative cost improvement per sweep
    int max_iterations = 100;       // relaxation sweeps per relax call
    std::uint64_t rng_seed = 0;
    double min_edge_length = 1.0;  // µm; relaxation never shortens an edge below this
    double merge_length = 5.0;     // µm; internal edges shorter than this get collapsed

    /// Q_t, either given or Q / N.
    double resolved_terminal_flow() const {
        if (terminal_flow) return *terminal_flow;
        return *inlet_flow / static_cast<double>(terminal_count);
    }

    /// Throws ValidationError naming the offending field.
    void validate() const {
        auto positive = [](double v, const char* field) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw ValidationError(std::string("config field '") + field + "' must be strictly positive");
        };
        positive(terminal_radius_mean, "terminal_radius_mean_um");
        positive(terminal_radius_sd, "terminal_radius_sd_um");
        if (terminal_count < 1) throw ValidationError("config field 'terminal_count' must be >= 1");
        if (!inlet_flow && !terminal_flow)
            throw ValidationError("config needs 'inlet_flow_um3s' or 'terminal_flow_um3s'");
        if (inlet_flow) positive(*inlet_flow, "inlet_flow_um3s");
        if (terminal_flow) positive(*terminal_flow, "terminal_flow_um3s");
        if (inlet_flow && terminal_flow) {
            const double implied = *terminal_flow * terminal_count;
            if (std::abs(implied - *inlet_flow) > 0.01 * *inlet_flow)
                throw ValidationError(
                    "config fields 'terminal_flow_um3s' x 'terminal_count' must equal 'inlet_flow_um3s' within 1%");
        }
        positive(viscosity, "viscosity_pa_s");
        positive(material_weight, "material_weight");
        if (!(murray_gamma >= 2.0 && murray_gamma <= 4.0))
            throw ValidationError("config field 'murray_gamma' must lie in [2, 4]");
        positive(relax_tolerance, "relax_tolerance");
        if (max_iterations < 1) throw ValidationError("config field 'max_iterations' must be >= 1");
        positive(min_edge_length, "min_edge_length_um");
        positive(merge_length, "merge_length_um");
    }
};

struct CostBreakdown {
    double power_loss = 0.0;
    double material_cost = 0.0;  // already weighted by w_c
    double total = 0.0;
};

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    enum class Kind {
        DuplicateNodeId,
        UnknownNode,
        MissingRoot,
        RootHasParent,
        Orphan,
        MultipleParents,
        Unreachable,
        SelfLoop,
        NonfinitePosition,
        ZeroLength,
        NonpositiveRadius,
        FlowNotConserved,
    };
    Kind kind;
    NodeId node = -1;
    std::ptrdiff_t edge = -1;  // index into VesselTree::edges, or -1
    std::string message;
};

inline const char* to_string(Violation::Kind k) {
    switch (k) {
        case Violation::Kind::DuplicateNodeId: return "duplicate node id";
        case Violation::Kind::UnknownNode: return "edge references unknown node";
        case Violation::Kind::MissingRoot: return "missing root";
        case Violation::Kind::RootHasParent: return "root has a parent";
        case Violation::Kind::Orphan: return "non-root node without parent";
        case Violation::Kind::MultipleParents: return "multiple parents";
        case Violation::Kind::Unreachable: return "node unreachable from root";
        case Violation::Kind::SelfLoop: return "self loop";
        case Violation::Kind::NonfinitePosition: return "non-finite position";
        case Violation::Kind::ZeroLength: return "zero-length edge";
        case Violation::Kind::NonpositiveRadius: return "nonpositive radius";
        case Violation::Kind::FlowNotConserved: return "flow not conserved";
    }
    return "unknown";
}

inline bool is_structural(Violation::Kind k) {
    return k != Violation::Kind::NonpositiveRadius && k != Violation::Kind::FlowNotConserved;
}

namespace detail {

inline Violation make_violation(Violation::Kind k, NodeId node, std::ptrdiff_t edge, const std::string& what) {
    std::ostringstream os;
    os << to_string(k) << ": " << what;
    return Violation{k, node, edge, os.str()};
}

}  // namespace detail

/// Checks every tree invariant. Never throws; an empty result means valid.
inline std::vector<Violation> validate_tree(const VesselTree& tree) {
    using K = Violation::Kind;
    using detail::make_violation;
    std::vector<Violation> out;

    std::unordered_map<NodeId, std::size_t> index;
    index.reserve(tree.nodes.size());
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const Node& n = tree.nodes[i];
        if (!index.emplace(n.id, i).second)
            out.push_back(make_violation(K::DuplicateNodeId, n.id, -1, "node " + std::to_string(n.id)));
        if (!is_finite(n.position))
            out.push_back(make_violation(K::NonfinitePosition, n.id, -1, "node " + std::to_string(n.id)));
    }
    const auto root_it = index.find(tree.root_id);
    if (root_it == index.end())
        out.push_back(make_violation(K::MissingRoot, tree.root_id, -1, "root " + std::to_string(tree.root_id)));

    const std::size_t n = tree.nodes.size();
    std::vector<int> in_degree(n, 0);
    std::vector<std::vector<std::size_t>> children(n);
    for (std::size_t e = 0; e < tree.edges.size(); ++e) {
        const Edge& edge = tree.edges[e];
        const auto label = [&] { return "edge " + std::to_string(edge.parent) + "->" + std::to_string(edge.child); };
        const auto pit = index.find(edge.parent);
        const auto cit = index.find(edge.child);
        if (pit == index.end() || cit == index.end()) {
            out.push_back(make_violation(K::UnknownNode, pit == index.end() ? edge.parent : edge.child,
                                         static_cast<std::ptrdiff_t>(e), label()));
            continue;
        }
        if (edge.parent == edge.child) {
            out.push_back(make_violation(K::SelfLoop, edge.child, static_cast<std::ptrdiff_t>(e), label()));
            continue;
        }
        ++in_degree[cit->second];
        children[pit->second].push_back(cit->second);
        const double len = distance(tree.nodes[pit->second].position, tree.nodes[cit->second].position);
        if (!(len > 0.0))
            out.push_back(make_violation(K::ZeroLength, edge.child, static_cast<std::ptrdiff_t>(e), label()));
        if (!(edge.radius > 0.0) || !std::isfinite(edge.radius))
            out.push_back(make_violation(K::NonpositiveRadius, edge.child, static_cast<std::ptrdiff_t>(e), label()));
    }

    for (std::size_t i = 0; i < n; ++i) {
        const NodeId id = tree.nodes[i].id;
        if (id == tree.root_id) {
            if (in_degree[i] > 0)
                out.push_back(make_violation(K::RootHasParent, id, -1, "node " + std::to_string(id)));
        } else if (in_degree[i] == 0) {
            out.push_back(make_violation(K::Orphan, id, -1, "node " + std::to_string(id)));
        } else if (in_degree[i] > 1) {
            out.push_back(make_violation(K::MultipleParents, id, -1,
                                         "node " + std::to_string(id) + " has " + std::to_string(in_degree[i])));
        }
    }

    if (root_it != index.end()) {
        std::vector<char> seen(n, 0);
        std::vector<std::size_t> stack{root_it->second};
        seen[root_it->second] = 1;
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            for (std::size_t c : children[v])
                if (!seen[c]) {
                    seen[c] = 1;
                    stack.push_back(c);
                }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!seen[i] && in_degree[i] == 1)  // orphans are already reported
                out.push_back(make_violation(K::Unreachable, tree.nodes[i].id, -1,
                                             "node " + std::to_string(tree.nodes[i].id)));
    }

    // Flow conservation at internal nodes (one parent, at least one child).
    std::vector<double> inflow(n, 0.0);
    std::vector<StableSum> outflow(n);
    for (const Edge& edge : tree.edges) {
        const auto pit = index.find(edge.parent);
        const auto cit = index.find(edge.child);
        if (pit == index.end() || cit == index.end() || edge.parent == edge.child) continue;
        inflow[cit->second] = edge.flow;
        outflow[pit->second].add(edge.flow);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (in_degree[i] != 1 || children[i].empty()) continue;
        const double in = inflow[i];
        const double o = outflow[i].value();
        const double scale = std::max(std::abs(in), std::abs(o));
        if (std::abs(in - o) > 1e-9 * scale || !std::isfinite(in - o))
            out.push_back(make_violation(K::FlowNotConserved, tree.nodes[i].id, -1,
                                         "node " + std::to_string(tree.nodes[i].id)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Indexed view used by every algorithm. Building it enforces structural
// validity.

struct TreeIndex {
    std::unordered_map<NodeId, std::size_t> node_of;
    std::vector<std::ptrdiff_t> parent_edge;            // per node; -1 for root
    std::vector<std::vector<std::size_t>> child_edges;  // per node
    std::size_t root = 0;
    std::vector<std::size_t> preorder;  // node indices, parents before children

    explicit TreeIndex(const VesselTree& tree) {
        for (const auto& v : validate_tree(tree))
            if (is_structural(v.kind)) throw StructureError("invalid tree: " + v.message);
        const std::size_t n = tree.nodes.size();
        node_of.reserve(n);
        for (std::size_t i = 0; i < n; ++i) node_of.emplace(tree.nodes[i].id, i);
        parent_edge.assign(n, -1);
        child_edges.assign(n, {});
        for (std::size_t e = 0; e < tree.edges.size(); ++e) {
            parent_edge[node_of.at(tree.edges[e].child)] = static_cast<std::ptrdiff_t>(e);
            child_edges[node_of.at(tree.edges[e].parent)].push_back(e);
        }
        root = node_of.at(tree.root_id);
        preorder.reserve(n);
        std::vector<std::size_t> stack{root};
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            preorder.push_back(v);
            const auto& ce = child_edges[v];
            for (auto it = ce.rbegin(); it != ce.rend(); ++it) stack.push_back(node_of.at(tree.edges[*it].child));
        }
    }

    bool is_terminal(std::size_t node) const { return node != root && child_edges[node].empty(); }
};

inline std::vector<NodeId> terminal_ids(const VesselTree& tree) {
    const TreeIndex idx(tree);
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i)
        if (idx.is_terminal(i)) out.push_back(tree.nodes[i].id);
    std::sort(out.begin(), out.end());
    return out;
}

inline double total_length(const VesselTree& tree) {
    const TreeIndex idx(tree);
    StableSum s;
    for (const Edge& e : tree.edges)
        s.add(distance(tree.nodes[idx.node_of.at(e.parent)].position, tree.nodes[idx.node_of.at(e.child)].position));
    return s.value();
}

// ---------------------------------------------------------------------------
// Physiology

/// Assigns Q_t to every terminal edge and subtree sums to internal edges.
inline VesselTree propagate_flows(VesselTree tree, double terminal_flow) {
    if (!(terminal_flow > 0.0) || !std::isfinite(terminal_flow))
        throw ValidationError("terminal flow must be strictly positive");
    const TreeIndex idx(tree);
    for (auto it = idx.preorder.rbegin(); it != idx.preorder.rend(); ++it) {
        const std::size_t v = *it;
        const auto pe = idx.parent_edge[v];
        if (pe < 0) continue;
        if (idx.child_edges[v].empty()) {
            tree.edges[pe].flow = terminal_flow;
        } else {
            StableSum s;
            for (std::size_t ce : idx.child_edges[v]) s.add(tree.edges[ce].flow);
            tree.edges[pe].flow = s.value();
        }
    }
    return tree;
}

/// Sets every internal edge radius from its children: r^γ = Σ r_c^γ,
/// leaf to root. Terminal radii are inputs and stay untouched.
inline VesselTree update_radii_murray(VesselTree tree, double gamma) {
    if (!(gamma > 0.0)) throw ValidationError("Murray exponent must be positive");
    const TreeIndex idx(tree);
    for (auto it = idx.preorder.rbegin(); it != idx.preorder.rend(); ++it) {
        const std::size_t v = *it;
        const auto pe = idx.parent_edge[v];
        if (pe < 0) continue;
        const auto& ce = idx.child_edges[v];
        if (ce.empty()) {
            const double r = tree.edges[pe].radius;
            if (!(r > 0.0) || !std::isfinite(r))
                throw ValidationError("terminal node " + std::to_string(tree.nodes[v].id) +
                                      " has no assigned radius");
        } else if (ce.size() == 1) {
            tree.edges[pe].radius = tree.edges[ce.front()].radius;
        } else {
            StableSum s;
            for (std::size_t c : ce) s.add(std::pow(tree.edges[c].radius, gamma));
            tree.edges[pe].radius = std::pow(s.value(), 1.0 / gamma);
        }
    }
    return tree;
}

/// Cost weight per unit length of a segment: Poiseuille dissipation plus
/// w_c-weighted lumen volume.
inline double power_per_length(double flow, double radius, double viscosity) {
    const double r2 = radius * radius;
    return flow * flow * 8.0 * viscosity / (std::numbers::pi * r2 * r2);
}
inline double material_per_length(double radius, double material_weight) {
    return material_weight * std::numbers::pi * radius * radius;
}
inline double cost_per_length(const Edge& e, const GcoConfig& config) {
    return power_per_length(e.flow, e.radius, config.viscosity) + material_per_length(e.radius, config.material_weight);
}

inline CostBreakdown total_cost(const VesselTree& tree, const GcoConfig& config) {
    const TreeIndex idx(tree);
    StableSum power, material;
    for (const Edge& e : tree.edges) {
        if (!(e.radius > 0.0) || !std::isfinite(e.radius) || !(e.flow > 0.0) || !std::isfinite(e.flow))
            throw ValidationError("edge " + std::to_string(e.parent) + "->" + std::to_string(e.child) +
                                  " has no assigned flow/radius");
        const double len =
            distance(tree.nodes[idx.node_of.at(e.parent)].position, tree.nodes[idx.node_of.at(e.child)].position);
        power.add(power_per_length(e.flow, e.radius, config.viscosity) * len);
        material.add(material_per_length(e.radius, config.material_weight) * len);
    }
    CostBreakdown c;
    c.power_loss = power.value();
    c.material_cost = material.value();
    c.total = c.power_loss + c.material_cost;
    return c;
}

/// propagate_flows followed by update_radii_murray with the config's Q_t and γ.
inline VesselTree refresh_hemodynamics(VesselTree tree, const GcoConfig& config) {
    return update_radii_murray(propagate_flows(std::move(tree), config.resolved_terminal_flow()),
                               config.murray_gamma);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json tree_to_json(const VesselTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
        nlohmann::json j{{"id", n.id}, {"pos_um", {n.position.x, n.position.y, n.position.z}}};
        if (n.fixed) j["fixed"] = true;
        nodes.push_back(std::move(j));
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : tree.edges)
        edges.push_back({{"from", e.parent}, {"to", e.child}, {"radius_um", e.radius}, {"flow_um3s", e.flow}});
    return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}, {"root", tree.root_id}};
}

inline VesselTree tree_from_json(const nlohmann::json& j) {
    try {
        VesselTree tree;
        tree.root_id = j.at("root").get<NodeId>();
        for (const auto& jn : j.at("nodes")) {
            const auto& p = jn.at("pos_um");
            if (p.size() != 3) throw ValidationError("node pos_um must have 3 components");
            tree.nodes.push_back(Node{jn.at("id").get<NodeId>(),
                                      Vec3{p[0].get<double>(), p[1].get<double>(), p[2].get<double>()},
                                      jn.value("fixed", false)});
        }
        for (const auto& je : j.at("edges"))
            tree.edges.push_back(Edge{je.at("from").get<NodeId>(), je.at("to").get<NodeId>(),
                                      je.value("radius_um", 0.0), je.value("flow_um3s", 0.0)});
        return tree;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed tree JSON: ") + e.what());
    }
}

inline nlohmann::json config_to_json(const GcoConfig& c) {
    nlohmann::json j{{"terminal_radius_mean_um", c.terminal_radius_mean},
                     {"terminal_radius_sd_um", c.terminal_radius_sd},
                     {"terminal_count", c.terminal_count},
                     {"viscosity_pa_s", c.viscosity},
                     {"material_weight", c.material_weight},
                     {"murray_gamma", c.murray_gamma},
                     {"relax_tolerance", c.relax_tolerance},
                     {"max_iterations", c.max_iterations},
                     {"rng_seed", c.rng_seed},
                     {"min_edge_length_um", c.min_edge_length},
                     {"merge_length_um", c.merge_length}};
    if (c.inlet_flow) j["inlet_flow_um3s"] = *c.inlet_flow;
    if (c.terminal_flow) j["terminal_flow_um3s"] = *c.terminal_flow;
    return j;
}

/// Missing keys keep their defaults. An explicit null on a flow key clears it.
inline GcoConfig config_from_json(const nlohmann::json& j, GcoConfig c = {}) {
    try {
        auto read = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        auto read_opt = [&](const char* key, std::optional<double>& field) {
            if (!j.contains(key)) return;
            if (j.at(key).is_null()) field.reset();
            else field = j.at(key).get<double>();
        };
        read("terminal_radius_mean_um", c.terminal_radius_mean);
        read("terminal_radius_sd_um", c.terminal_radius_sd);
        read("terminal_count", c.terminal_count);
        read_opt("inlet_flow_um3s", c.inlet_flow);
        read_opt("terminal_flow_um3s", c.terminal_flow);
        read("viscosity_pa_s", c.viscosity);
        read("material_weight", c.material_weight);
        read("murray_gamma", c.murray_gamma);
        read("relax_tolerance", c.relax_tolerance);
        read("max_iterations", c.max_iterations);
        read("rng_seed", c.rng_seed);
        read("min_edge_length_um", c.min_edge_length);
        read("merge_length_um", c.merge_length);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed config JSON: ") + e.what());
    }
}

}  // namespace venosynth
