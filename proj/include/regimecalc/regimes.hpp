#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "regimecalc/common.hpp"
#include "regimecalc/graph.hpp"
#include "regimecalc/model.hpp"

namespace regimecalc {

// The four ways a target variable can be generated. Idle is the untouched
// observational mechanism; the rest replace the target's CPT.
struct IdleRegime {};

struct AtomicRegime {
    int value = 0;
};

// Deterministic plan: set the target to a(cond_set). Rows list the cond_set
// assignment followed by the chosen target value; the map must be total.
struct ConditionalRegime {
    std::vector<NodeId> cond_set;
    std::vector<std::vector<int>> map_rows;

    int decide(const std::vector<int>& cond_values) const {
        for (const auto& row : map_rows) {
            if (row.size() != cond_values.size() + 1) continue;
            bool match = true;
            for (std::size_t i = 0; i < cond_values.size(); ++i)
                if (row[i] != cond_values[i]) {
                    match = false;
                    break;
                }
            if (match) return row.back();
        }
        throw Error("conditional regime: no decision for a cond_set assignment");
    }
};

// Draw the target from a supplied pmf, optionally within cond_set strata.
struct RandomRegime {
    std::vector<NodeId> cond_set;
    Cpt dist;
};

using Regime = std::variant<IdleRegime, AtomicRegime, ConditionalRegime, RandomRegime>;
using Plan = std::map<NodeId, Regime>;

inline bool is_idle(const Regime& r) { return std::holds_alternative<IdleRegime>(r); }
inline bool is_atomic(const Regime& r) { return std::holds_alternative<AtomicRegime>(r); }

inline std::vector<NodeId> regime_cond_set(const Regime& r) {
    if (const auto* c = std::get_if<ConditionalRegime>(&r)) return c->cond_set;
    if (const auto* d = std::get_if<RandomRegime>(&r)) return d->cond_set;
    return {};
}

inline NodeId sigma_name(const NodeId& target) { return "sigma_" + target; }

// Materializes a regime as the CPT it imposes on the target.
inline Cpt regime_cpt(const Regime& r, const Variable& target, const Cpt& observational,
                      const std::map<NodeId, Variable>& vars) {
    if (std::holds_alternative<IdleRegime>(r)) return observational;

    if (const auto* a = std::get_if<AtomicRegime>(&r)) {
        if (a->value < 0 || a->value >= target.card)
            throw Error("atomic regime value out of range for " + target.id);
        Cpt c;
        c.target = target.id;
        c.target_card = target.card;
        c.table.assign(target.card, 0.0);
        c.table[a->value] = 1.0;
        return c;
    }

    if (const auto* cond = std::get_if<ConditionalRegime>(&r)) {
        Cpt c;
        c.target = target.id;
        c.target_card = target.card;
        c.parents = cond->cond_set;
        for (const auto& p : c.parents) {
            auto it = vars.find(p);
            if (it == vars.end()) throw Error("conditional regime references unknown node " + p);
            c.parent_cards.push_back(it->second.card);
        }
        c.table.assign(c.rows() * target.card, 0.0);
        std::vector<int> pv(c.parents.size(), 0);
        std::size_t row = 0;
        if (c.parents.empty()) {
            int v = cond->decide({});
            if (v < 0 || v >= target.card) throw Error("conditional regime value out of range");
            c.table[v] = 1.0;
            return c;
        }
        do {
            int v = cond->decide(pv);
            if (v < 0 || v >= target.card) throw Error("conditional regime value out of range");
            c.table[row * target.card + v] = 1.0;
            ++row;
        } while (detail::next_assignment(pv, c.parent_cards));
        return c;
    }

    const auto& d = std::get<RandomRegime>(r);
    const Cpt& dist = d.dist;
    if (dist.target != target.id || dist.target_card != target.card)
        throw Error("random regime distribution does not target " + target.id);
    if (dist.parents != d.cond_set)
        throw Error("random regime distribution parents disagree with cond_set");
    for (std::size_t i = 0; i < dist.parents.size(); ++i) {
        auto it = vars.find(dist.parents[i]);
        if (it == vars.end()) throw Error("random regime references unknown node " + dist.parents[i]);
        if (it->second.card != dist.parent_cards[i])
            throw Error("random regime parent cardinality mismatch for " + dist.parents[i]);
    }
    dist.validate();
    return dist;
}

namespace detail {

inline void check_cond_set(const Dag& g, const NodeId& target, const std::vector<NodeId>& cond) {
    NodeSet below = descendants(g, target);
    for (const auto& c : cond) {
        g.require(c);
        if (c == target) throw Error("cond_set of " + target + " contains the target itself");
        if (below.count(c))
            throw Error("cond_set of " + target + " contains its descendant " + c);
    }
}

}  // namespace detail

// Builds the influence diagram for a plan: per-target arrow cutting plus a
// boxed sigma node into each target. Callers wanting the all-regimes diagram
// pass cond_sets that are unions over the regimes they consider.
inline Dag surgery(const Dag& g, const Plan& plan) {
    Dag out;
    for (const auto& v : g.nodes()) out.add_node(v, g.kind(v), g.latent(v));

    NodeSet rewired;
    for (const auto& [target, regime] : plan) {
        g.require(target);
        if (g.kind(target) != NodeKind::Chance)
            throw Error("surgery target must be a chance node: " + target);
        detail::check_cond_set(g, target, regime_cond_set(regime));
        if (!is_idle(regime)) rewired.insert(target);
    }

    for (const auto& [from, to] : g.edges())
        if (!rewired.count(to)) out.add_edge(from, to);

    for (const auto& [target, regime] : plan) {
        for (const auto& c : regime_cond_set(regime)) out.add_edge(c, target);
        NodeId sig = sigma_name(target);
        if (out.has_node(sig)) throw Error("sigma node name collision: " + sig);
        out.add_node(sig, NodeKind::RegimeIndicator);
        out.add_edge(sig, target);
    }
    return out;
}

// Ground-truth intervention: replace each targeted CPT by its regime CPT and
// rewire the parents to match. The result is an ordinary model, so any
// intervention distribution is a marginal/conditional of it.
inline Model oracle_intervene(const Model& m, const Plan& plan) {
    for (const auto& [target, regime] : plan) {
        m.dag.require(target);
        detail::check_cond_set(m.dag, target, regime_cond_set(regime));
    }

    Model out;
    NodeSet rewired;
    for (const auto& [target, regime] : plan)
        if (!is_idle(regime)) rewired.insert(target);
    for (const auto& v : m.dag.nodes()) out.dag.add_node(v, NodeKind::Chance, m.dag.latent(v));
    for (const auto& [from, to] : m.dag.edges())
        if (!rewired.count(to)) out.dag.add_edge(from, to);
    out.vars = m.vars;
    out.cpts = m.cpts;

    for (const auto& [target, regime] : plan) {
        Cpt replaced = regime_cpt(regime, m.var(target), m.cpts.at(target), m.vars);
        if (!is_idle(regime)) {
            for (const auto& c : regime_cond_set(regime)) out.dag.add_edge(c, target);
            out.cpts[target] = std::move(replaced);
        }
    }
    out.validate();
    return out;
}

// Specification of the natural mediator regime d_{W,x*}: generate `target`
// from its conditional distribution given W with the treatment held at the
// baseline value.
struct NaturalRegimeSpec {
    NodeId target;
    NodeId treatment;
    std::vector<NodeId> W;
    int baseline = 0;
};

namespace detail {

inline void check_natural_spec(const Dag& g, const NaturalRegimeSpec& spec) {
    g.require(spec.target);
    g.require(spec.treatment);
    if (spec.target == spec.treatment)
        throw Error("natural regime: target equals treatment");
    NodeSet forbidden = descendants(g, spec.treatment);
    forbidden.insert(spec.treatment);
    NodeSet dz = descendants(g, spec.target);
    forbidden.insert(dz.begin(), dz.end());
    forbidden.insert(spec.target);
    for (const auto& w : spec.W) {
        g.require(w);
        if (forbidden.count(w))
            throw Error("natural regime: W member " + w +
                        " is the treatment/target or one of their descendants");
    }
}

}  // namespace detail

// The back-door style criterion for the effect of the treatment X on the
// mediator Z within strata of W: Z ⊥⊥ sigma_X | (X, W, S) on the diagram
// where X keeps its observational parents.
inline CheckResult check_zx_backdoor(const Dag& g, const NodeId& X, const NodeId& Z,
                                     const std::vector<NodeId>& W,
                                     const std::vector<NodeId>& S) {
    Plan plan{{X, Regime{IdleRegime{}}}};
    Dag check = surgery(g, plan);
    NodeSet cond{X};
    cond.insert(W.begin(), W.end());
    cond.insert(S.begin(), S.end());
    return checked_dsep(check, {Z}, {sigma_name(X)}, cond, "obs-nde:5");
}

// d_{W,x*} computed from the full model: intervene atomically on the
// treatment, then read off the target's conditional given W. Latent W is
// acceptable here; this is the ground-truth route.
inline RandomRegime natural_regime_oracle(const Model& m, const NaturalRegimeSpec& spec) {
    detail::check_natural_spec(m.dag, spec);
    Model baseline = oracle_intervene(m, Plan{{spec.treatment, AtomicRegime{spec.baseline}}});

    Cpt dist;
    dist.target = spec.target;
    dist.target_card = m.card(spec.target);
    dist.parents = spec.W;
    for (const auto& w : spec.W) dist.parent_cards.push_back(m.card(w));
    dist.table.assign(dist.rows() * dist.target_card, 0.0);

    std::vector<int> wv(spec.W.size(), 0);
    std::size_t row = 0;
    do {
        std::map<NodeId, int> given;
        for (std::size_t i = 0; i < spec.W.size(); ++i) given[spec.W[i]] = wv[i];
        Table t = conditional(baseline, {spec.target}, given);
        for (int v = 0; v < dist.target_card; ++v) dist.table[row * dist.target_card + v] = t.values[v];
        ++row;
    } while (!spec.W.empty() && detail::next_assignment(wv, dist.parent_cards));
    return RandomRegime{spec.W, std::move(dist)};
}

// d_{W,x*} recovered from observational quantities alone via the back-door
// set S: p(z | w; do x*) = sum_s p(z|w,s,x*) p(s|w).
inline RandomRegime natural_regime_observational(const Model& m, const NaturalRegimeSpec& spec,
                                                 const std::vector<NodeId>& S) {
    detail::check_natural_spec(m.dag, spec);
    CheckResult bd = check_zx_backdoor(m.dag, spec.treatment, spec.target, spec.W, S);
    if (!bd.ok)
        throw NotIdentifiedError("natural regime: S does not satisfy the Z-X back-door criterion");

    ObservationalView view(m);
    for (const auto& v : spec.W) view.require_observable(v);
    for (const auto& v : S) view.require_observable(v);
    view.require_observable(spec.target);
    view.require_observable(spec.treatment);

    Cpt dist;
    dist.target = spec.target;
    dist.target_card = m.card(spec.target);
    dist.parents = spec.W;
    for (const auto& w : spec.W) dist.parent_cards.push_back(m.card(w));
    dist.table.assign(dist.rows() * dist.target_card, 0.0);

    std::vector<NodeId> s_scope(S);
    std::sort(s_scope.begin(), s_scope.end());
    s_scope.erase(std::unique(s_scope.begin(), s_scope.end()), s_scope.end());
    std::vector<int> s_cards;
    for (const auto& s : s_scope) s_cards.push_back(m.card(s));

    std::vector<int> wv(spec.W.size(), 0);
    std::size_t row = 0;
    do {
        std::map<NodeId, int> wmap;
        for (std::size_t i = 0; i < spec.W.size(); ++i) wmap[spec.W[i]] = wv[i];

        Table ps_given_w = s_scope.empty()
                               ? Table::zeros({}, {})
                               : view.conditional_of(s_scope, wmap);
        if (s_scope.empty()) ps_given_w.values = {1.0};

        std::vector<int> sv(s_scope.size(), 0);
        do {
            double weight = ps_given_w.at(sv);
            if (weight == 0.0) continue;
            std::map<NodeId, int> given = wmap;
            for (std::size_t i = 0; i < s_scope.size(); ++i) given[s_scope[i]] = sv[i];
            given[spec.treatment] = spec.baseline;
            Table pz = view.conditional_of({spec.target}, given);
            for (int v = 0; v < dist.target_card; ++v)
                dist.table[row * dist.target_card + v] += weight * pz.values[v];
        } while (!s_scope.empty() && detail::next_assignment(sv, s_cards));
        ++row;
    } while (!spec.W.empty() && detail::next_assignment(wv, dist.parent_cards));
    dist.validate();
    return RandomRegime{spec.W, std::move(dist)};
}

}  // namespace regimecalc
