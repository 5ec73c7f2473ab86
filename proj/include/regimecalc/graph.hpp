#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regimecalc/common.hpp"

namespace regimecalc {

using NodeId = std::string;
using NodeSet = std::set<NodeId>;

enum class NodeKind { Chance, RegimeIndicator };

// Labeled DAG with node kinds and latent flags. Acyclicity is checked on
// every edge insertion. Regime-indicator nodes are decision nodes: they
// never have parents and point at a single target. All queries iterate in
// node-name order, so results are deterministic.
class Dag {
public:
    void add_node(const NodeId& name, NodeKind kind = NodeKind::Chance, bool latent = false) {
        if (name.empty()) throw Error("node name must be non-empty");
        if (info_.count(name)) throw Error("duplicate node: " + name);
        if (kind == NodeKind::RegimeIndicator && latent)
            throw Error("regime indicator cannot be latent: " + name);
        info_[name] = Info{kind, latent};
        parents_[name];
        children_[name];
    }

    void add_edge(const NodeId& from, const NodeId& to) {
        require(from);
        require(to);
        if (from == to) throw Error("self edge: " + from);
        if (info_.at(to).kind == NodeKind::RegimeIndicator)
            throw Error("regime indicator cannot have parents: " + to);
        if (info_.at(from).kind == NodeKind::RegimeIndicator && !children_.at(from).empty())
            throw Error("regime indicator has a single target: " + from);
        if (children_.at(from).count(to)) return;
        if (reaches(to, from)) throw Error("edge " + from + "->" + to + " creates a cycle");
        children_[from].insert(to);
        parents_[to].insert(from);
    }

    void remove_edges_into(const NodeId& v) {
        require(v);
        for (const auto& p : parents_.at(v)) children_[p].erase(v);
        parents_[v].clear();
    }

    bool has_node(const NodeId& v) const { return info_.count(v) != 0; }
    bool has_edge(const NodeId& from, const NodeId& to) const {
        auto it = children_.find(from);
        return it != children_.end() && it->second.count(to) != 0;
    }

    NodeKind kind(const NodeId& v) const { require(v); return info_.at(v).kind; }
    bool latent(const NodeId& v) const { require(v); return info_.at(v).latent; }
    void set_latent(const NodeId& v, bool flag) {
        require(v);
        if (info_.at(v).kind == NodeKind::RegimeIndicator && flag)
            throw Error("regime indicator cannot be latent: " + v);
        info_[v].latent = flag;
    }

    const NodeSet& parents(const NodeId& v) const { require(v); return parents_.at(v); }
    const NodeSet& children(const NodeId& v) const { require(v); return children_.at(v); }

    std::vector<NodeId> nodes() const {
        std::vector<NodeId> out;
        for (const auto& [name, _] : info_) out.push_back(name);
        return out;
    }

    std::vector<NodeId> chance_nodes() const {
        std::vector<NodeId> out;
        for (const auto& [name, info] : info_)
            if (info.kind == NodeKind::Chance) out.push_back(name);
        return out;
    }

    std::vector<NodeId> observable_nodes() const {
        std::vector<NodeId> out;
        for (const auto& [name, info] : info_)
            if (info.kind == NodeKind::Chance && !info.latent) out.push_back(name);
        return out;
    }

    std::size_t num_nodes() const { return info_.size(); }

    std::vector<std::pair<NodeId, NodeId>> edges() const {
        std::vector<std::pair<NodeId, NodeId>> out;
        for (const auto& [from, kids] : children_)
            for (const auto& to : kids) out.emplace_back(from, to);
        return out;
    }

    void require(const NodeId& v) const {
        if (!info_.count(v)) throw Error("unknown node: " + v);
    }

private:
    struct Info {
        NodeKind kind = NodeKind::Chance;
        bool latent = false;
    };

    bool reaches(const NodeId& src, const NodeId& dst) const {
        if (src == dst) return true;
        std::vector<NodeId> stack{src};
        NodeSet seen{src};
        while (!stack.empty()) {
            NodeId v = stack.back();
            stack.pop_back();
            for (const auto& c : children_.at(v)) {
                if (c == dst) return true;
                if (seen.insert(c).second) stack.push_back(c);
            }
        }
        return false;
    }

    std::map<NodeId, Info> info_;
    std::map<NodeId, NodeSet> parents_;
    std::map<NodeId, NodeSet> children_;
};

// Kahn's algorithm; ties broken by node name.
inline std::vector<NodeId> topological_order(const Dag& g) {
    std::map<NodeId, std::size_t> indeg;
    for (const auto& v : g.nodes()) indeg[v] = g.parents(v).size();
    NodeSet ready;
    for (const auto& [v, d] : indeg)
        if (d == 0) ready.insert(v);
    std::vector<NodeId> order;
    while (!ready.empty()) {
        NodeId v = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(v);
        for (const auto& c : g.children(v))
            if (--indeg[c] == 0) ready.insert(c);
    }
    if (order.size() != g.num_nodes()) throw Error("graph is cyclic");
    return order;
}

namespace detail {

inline NodeSet reach_directed(const Dag& g, const NodeId& v, bool forward) {
    g.require(v);
    NodeSet out;
    std::vector<NodeId> stack{v};
    while (!stack.empty()) {
        NodeId cur = stack.back();
        stack.pop_back();
        const NodeSet& next = forward ? g.children(cur) : g.parents(cur);
        for (const auto& n : next)
            if (out.insert(n).second) stack.push_back(n);
    }
    return out;
}

}  // namespace detail

// Strict descendants: v itself is excluded.
inline NodeSet descendants(const Dag& g, const NodeId& v) {
    return detail::reach_directed(g, v, true);
}

inline NodeSet ancestors(const Dag& g, const NodeId& v) {
    return detail::reach_directed(g, v, false);
}

inline NodeSet descendants(const Dag& g, const NodeSet& vs) {
    NodeSet out;
    for (const auto& v : vs) {
        NodeSet d = descendants(g, v);
        out.insert(d.begin(), d.end());
    }
    return out;
}

namespace detail {

inline void check_dsep_args(const Dag& g, const NodeSet& a, const NodeSet& b, const NodeSet& c) {
    for (const auto& v : a) g.require(v);
    for (const auto& v : b) g.require(v);
    for (const auto& v : c) g.require(v);
    auto overlap = [](const NodeSet& x, const NodeSet& y) {
        for (const auto& v : x)
            if (y.count(v)) return true;
        return false;
    };
    if (overlap(a, b) || overlap(a, c) || overlap(b, c))
        throw Error("d-separation query sets must be pairwise disjoint");
}

// C plus every ancestor of C: the nodes at which a collider is opened.
inline NodeSet collider_openers(const Dag& g, const NodeSet& c) {
    NodeSet out = c;
    for (const auto& v : c) {
        NodeSet anc = ancestors(g, v);
        out.insert(anc.begin(), anc.end());
    }
    return out;
}

}  // namespace detail

// Reachability (Bayes-ball style) d-separation test.
inline bool d_separated(const Dag& g, const NodeSet& a, const NodeSet& b, const NodeSet& c) {
    detail::check_dsep_args(g, a, b, c);
    if (a.empty() || b.empty()) return true;
    NodeSet openers = detail::collider_openers(g, c);

    // State: (node, arrived-from-child?). Start pretending we came from a
    // virtual child of each source node.
    std::set<std::pair<NodeId, bool>> seen;
    std::vector<std::pair<NodeId, bool>> stack;
    for (const auto& v : a) stack.emplace_back(v, true);
    while (!stack.empty()) {
        auto [v, from_child] = stack.back();
        stack.pop_back();
        if (!seen.insert({v, from_child}).second) continue;
        if (b.count(v)) return false;
        bool in_c = c.count(v) != 0;
        if (from_child) {
            if (in_c) continue;  // non-collider observed: blocked in every direction
            for (const auto& p : g.parents(v)) stack.emplace_back(p, true);
            for (const auto& ch : g.children(v)) stack.emplace_back(ch, false);
        } else {
            if (!in_c)
                for (const auto& ch : g.children(v)) stack.emplace_back(ch, false);
            if (openers.count(v))
                for (const auto& p : g.parents(v)) stack.emplace_back(p, true);
        }
    }
    return true;
}

// Moralized-ancestral-graph d-separation: independent route used to
// cross-check the reachability implementation.
inline bool d_separated_moral(const Dag& g, const NodeSet& a, const NodeSet& b, const NodeSet& c) {
    detail::check_dsep_args(g, a, b, c);
    if (a.empty() || b.empty()) return true;

    NodeSet relevant;
    for (const NodeSet* s : {&a, &b, &c})
        for (const auto& v : *s) {
            relevant.insert(v);
            NodeSet anc = ancestors(g, v);
            relevant.insert(anc.begin(), anc.end());
        }

    // Undirected adjacency of the moralized ancestral subgraph.
    std::map<NodeId, NodeSet> adj;
    for (const auto& v : relevant) adj[v];
    for (const auto& v : relevant)
        for (const auto& p : g.parents(v))
            if (relevant.count(p)) {
                adj[v].insert(p);
                adj[p].insert(v);
            }
    for (const auto& v : relevant) {
        std::vector<NodeId> pars;
        for (const auto& p : g.parents(v))
            if (relevant.count(p)) pars.push_back(p);
        for (std::size_t i = 0; i < pars.size(); ++i)
            for (std::size_t j = i + 1; j < pars.size(); ++j) {
                adj[pars[i]].insert(pars[j]);
                adj[pars[j]].insert(pars[i]);
            }
    }

    std::vector<NodeId> stack(a.begin(), a.end());
    NodeSet seen = a;
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        if (b.count(v)) return false;
        for (const auto& n : adj[v]) {
            if (c.count(n)) continue;
            if (seen.insert(n).second) stack.push_back(n);
        }
    }
    return true;
}

// True when `path` (a node sequence along skeleton edges) is d-connecting
// given C. Endpoints must lie outside C.
inline bool is_path_open(const Dag& g, const std::vector<NodeId>& path, const NodeSet& c) {
    if (path.size() < 2) return false;
    for (const auto& v : path) g.require(v);
    if (c.count(path.front()) || c.count(path.back())) return false;
    for (std::size_t i = 0; i + 1 < path.size(); ++i)
        if (!g.has_edge(path[i], path[i + 1]) && !g.has_edge(path[i + 1], path[i]))
            return false;
    NodeSet openers = detail::collider_openers(g, c);
    for (std::size_t i = 1; i + 1 < path.size(); ++i) {
        bool in_left = g.has_edge(path[i - 1], path[i]);
        bool in_right = g.has_edge(path[i + 1], path[i]);
        bool collider = in_left && in_right;
        if (collider) {
            if (!openers.count(path[i])) return false;
        } else {
            if (c.count(path[i])) return false;
        }
    }
    return true;
}

// Enumerates simple skeleton paths (deterministic order) and returns the
// first d-connecting one, or nullopt when A and B are d-separated given C.
inline std::optional<std::vector<NodeId>> find_open_path(const Dag& g, const NodeSet& a,
                                                         const NodeSet& b, const NodeSet& c) {
    detail::check_dsep_args(g, a, b, c);
    if (a.empty() || b.empty()) return std::nullopt;
    NodeSet openers = detail::collider_openers(g, c);

    auto neighbors = [&](const NodeId& v) {
        NodeSet out = g.parents(v);
        const NodeSet& ch = g.children(v);
        out.insert(ch.begin(), ch.end());
        return out;
    };
    auto triple_ok = [&](const NodeId& prev, const NodeId& mid, const NodeId& next) {
        bool collider = g.has_edge(prev, mid) && g.has_edge(next, mid);
        return collider ? openers.count(mid) != 0 : c.count(mid) == 0;
    };

    std::vector<NodeId> path;
    NodeSet on_path;
    std::optional<std::vector<NodeId>> found;

    std::function<bool(void)> extend = [&]() -> bool {
        const NodeId last = path.back();  // copy: path reallocates during recursion
        if (path.size() >= 2 && b.count(last)) {
            found = path;
            return true;
        }
        for (const auto& n : neighbors(last)) {
            if (on_path.count(n)) continue;
            if (path.size() >= 2 && !triple_ok(path[path.size() - 2], last, n)) continue;
            path.push_back(n);
            on_path.insert(n);
            if (extend()) return true;
            on_path.erase(n);
            path.pop_back();
        }
        return false;
    };

    for (const auto& start : a) {
        path = {start};
        on_path = {start};
        if (extend()) return found;
    }
    return std::nullopt;
}

// A d-connecting path together with the graph and conditioning set it was
// found in, so a failure verdict can be re-verified later.
struct OpenPathWitness {
    Dag graph;
    std::vector<NodeId> path;
    NodeSet given;

    bool recheck() const { return is_path_open(graph, path, given); }
};

// Outcome of one graphical criterion: either the independence holds, or a
// witness path demonstrates the violation.
struct CheckResult {
    bool ok = true;
    std::string condition;
    std::optional<OpenPathWitness> witness;
};

inline CheckResult checked_dsep(const Dag& g, const NodeSet& a, const NodeSet& b,
                                const NodeSet& c, const std::string& condition) {
    if (d_separated(g, a, b, c)) return CheckResult{true, condition, std::nullopt};
    auto path = find_open_path(g, a, b, c);
    if (!path) throw Error("d-separation verdicts disagree for condition " + condition);
    return CheckResult{false, condition, OpenPathWitness{g, *path, c}};
}

// GraphViz rendering: chance nodes as ellipses (dashed when latent),
// regime indicators as boxes.
inline std::string to_dot(const Dag& g) {
    std::ostringstream os;
    os << "digraph G {\n";
    for (const auto& v : g.nodes()) {
        os << "  \"" << v << "\" [shape="
           << (g.kind(v) == NodeKind::RegimeIndicator ? "box" : "ellipse");
        if (g.kind(v) == NodeKind::Chance && g.latent(v)) os << ", style=dashed";
        os << "];\n";
    }
    for (const auto& [from, to] : g.edges()) os << "  \"" << from << "\" -> \"" << to << "\";\n";
    os << "}\n";
    return os.str();
}

}  // namespace regimecalc
