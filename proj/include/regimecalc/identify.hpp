#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "regimecalc/common.hpp"
#include "regimecalc/graph.hpp"
#include "regimecalc/model.hpp"
#include "regimecalc/regimes.hpp"

namespace regimecalc {

enum class QueryKind { Ace, Cde, Sde, Nde, Nie, Seq };
enum class Verdict { Identified, NotIdentified, NotDefined };

// One step of a sequential plan: the treated node, how it is generated, and
// the covariate block observed just before it.
struct SeqStep {
    NodeId target;
    Regime regime;
    std::vector<NodeId> block;
};

struct RoleSets {
    std::vector<NodeId> C;
    std::vector<NodeId> W;
    std::vector<NodeId> S;
    std::vector<NodeId> L1;
    std::vector<NodeId> L2;
};

struct CausalQuery {
    QueryKind kind = QueryKind::Ace;
    NodeId treatment;
    NodeId response;
    std::optional<NodeId> mediator;
    int x = 1;
    int x_star = 0;
    std::optional<int> mediator_value;            // CDE: the z the mediator is held at
    std::optional<RandomRegime> mediator_regime;  // SDE: the reference regime d_W
    RoleSets roles;
    bool auto_search = true;
    std::vector<SeqStep> steps;  // SEQ only
};

struct FailureWitness {
    std::string condition;
    OpenPathWitness open_path;
};

struct IdentificationResult {
    Verdict verdict = Verdict::NotIdentified;
    bool identified = false;
    std::optional<double> value;
    std::optional<Table> distribution;
    std::vector<std::string> formula;
    std::optional<FailureWitness> witness;
    std::string condition_note;
    RoleSets used_roles;
    std::vector<SeqStep> resolved_steps;  // seq plans with the blocks actually used
};

namespace detail {

inline IdentificationResult failure(Verdict v, const CheckResult& c) {
    IdentificationResult r;
    r.verdict = v;
    r.identified = false;
    if (c.witness) r.witness = FailureWitness{c.condition, *c.witness};
    r.condition_note = c.condition;
    return r;
}

inline std::vector<NodeId> sorted_unique(std::vector<NodeId> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

inline NodeSet to_set(const std::vector<NodeId>& v) { return NodeSet(v.begin(), v.end()); }

inline std::string lower(const NodeId& v) {
    std::string out = v;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

// "p(y|l1,l2,z,x)"-style factor string; empty condition tokens are dropped.
inline std::string factor_string(const std::string& head,
                                 const std::vector<std::string>& given,
                                 const std::string& fn = "p") {
    std::string out = fn + "(" + head;
    std::string conds;
    for (const auto& g : given) {
        if (g.empty()) continue;
        if (!conds.empty()) conds += ",";
        conds += g;
    }
    if (!conds.empty()) out += "|" + conds;
    out += ")";
    return out;
}

// Conditional table p(target | given) materialized from the observable
// joint. Overlapping target/given sets are allowed; probabilities are read
// off one consistent assignment map.
class CondTable {
public:
    CondTable(const ObservationalView& view, const std::vector<NodeId>& target,
              const std::vector<NodeId>& given)
        : target_(sorted_unique(target)), given_(sorted_unique(given)) {
        std::vector<NodeId> all = target_;
        all.insert(all.end(), given_.begin(), given_.end());
        all = sorted_unique(all);
        joint_ = view.marginal_of(all);
        if (!given_.empty()) given_marg_ = joint_.marginalize(given_);
    }

    // Probability of the conditioning slice under the assignment.
    double slice(const std::map<NodeId, int>& a) const {
        if (given_.empty()) return 1.0;
        return given_marg_.at(project(a, given_marg_.scope));
    }

    // p(target | given) read at the assignment; the caller must have checked
    // positivity of the slice first.
    double prob(const std::map<NodeId, int>& a) const {
        double denom = slice(a);
        if (denom < kPositivityEps)
            throw PositivityViolation("conditioning event has probability below 1e-12");
        return joint_.at(project(a, joint_.scope)) / denom;
    }

private:
    static std::vector<int> project(const std::map<NodeId, int>& a,
                                    const std::vector<NodeId>& scope) {
        std::vector<int> out(scope.size());
        for (std::size_t i = 0; i < scope.size(); ++i) {
            auto it = a.find(scope[i]);
            if (it == a.end()) throw Error("assignment missing value for " + scope[i]);
            out[i] = it->second;
        }
        return out;
    }

    std::vector<NodeId> target_;
    std::vector<NodeId> given_;
    Table joint_;
    Table given_marg_;
};

// Multiplies `factor` into `weight` under the positivity protocol: terms that
// are already dead stay dead without touching the factor, and a live term
// hitting an impossible conditioning event raises PositivityViolation.
inline bool accumulate_factor(double& weight, const CondTable& ct,
                              const std::map<NodeId, int>& a) {
    if (weight == 0.0) return false;
    if (ct.slice(a) < kPositivityEps)
        throw PositivityViolation("identification formula conditions on a zero-probability event");
    weight *= ct.prob(a);
    return weight != 0.0;
}

// Influence diagram where each step's target keeps the union of its parent
// sets over the considered regimes (observational parents plus the regime's
// cond_set) and gains its sigma node.
inline Dag union_diagram(const Dag& g, const std::vector<SeqStep>& steps) {
    Plan plan;
    for (const auto& s : steps) {
        std::vector<NodeId> cond(g.parents(s.target).begin(), g.parents(s.target).end());
        for (const auto& c : regime_cond_set(s.regime)) cond.push_back(c);
        plan[s.target] = ConditionalRegime{sorted_unique(cond), {}};
    }
    return surgery(g, plan);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graphical criteria
// ---------------------------------------------------------------------------

// Back-door criterion for an intervention on X: C holds no descendant of X
// and blocks every back-door path from X to Y.
inline CheckResult check_back_door(const Model& m, const NodeId& X, const NodeId& Y,
                                   const std::vector<NodeId>& C) {
    Dag check = surgery(m.dag, Plan{{X, IdleRegime{}}});
    NodeSet sig{sigma_name(X)};
    CheckResult nd = checked_dsep(check, detail::to_set(C), sig, {}, "backdoor:C-descendant-of-X");
    if (!nd.ok) return nd;
    NodeSet cond = detail::to_set(C);
    cond.insert(X);
    return checked_dsep(check, {Y}, sig, cond, "backdoor:open-path");
}

// Simple stability, condition (2): covariate blocks and the response are
// independent of all regime indicators given the observed past. Tested on
// the all-regimes diagram.
inline CheckResult check_simple_stability(const Model& m, const std::vector<SeqStep>& steps,
                                          const NodeId& Y) {
    Dag dia = detail::union_diagram(m.dag, steps);
    NodeSet sigmas;
    for (const auto& s : steps) sigmas.insert(sigma_name(s.target));

    NodeSet past;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        NodeSet fresh;  // the part of the block not already conditioned on
        for (const auto& b : steps[k].block)
            if (!past.count(b)) fresh.insert(b);
        if (!fresh.empty()) {
            CheckResult r = checked_dsep(dia, fresh, sigmas, past,
                                         "simple-stability:L" + std::to_string(k + 1));
            if (!r.ok) return r;
        }
        for (const auto& b : steps[k].block) past.insert(b);
        past.insert(steps[k].target);
    }
    return checked_dsep(dia, {Y}, sigmas, past, "simple-stability:Y");
}

// The weaker condition (3): for each k the response is independent of
// sigma_k given the observed past, on the diagram where earlier targets are
// idle and later targets are surgered by their actual regimes.
inline CheckResult check_weak_condition(const Model& m, const std::vector<SeqStep>& steps,
                                        const NodeId& Y) {
    for (std::size_t k = 0; k < steps.size(); ++k) {
        Plan plan;
        for (std::size_t j = 0; j < steps.size(); ++j) {
            const auto& s = steps[j];
            if (j < k) {
                plan[s.target] = IdleRegime{};
            } else if (j == k) {
                std::vector<NodeId> cond(m.dag.parents(s.target).begin(),
                                         m.dag.parents(s.target).end());
                for (const auto& c : regime_cond_set(s.regime)) cond.push_back(c);
                plan[s.target] = ConditionalRegime{detail::sorted_unique(cond), {}};
            } else {
                plan[s.target] = ConditionalRegime{regime_cond_set(s.regime), {}};
            }
        }
        Dag dia = surgery(m.dag, plan);
        NodeSet cond;
        for (std::size_t j = 0; j <= k; ++j) {
            cond.insert(steps[j].target);
            for (const auto& b : steps[j].block) cond.insert(b);
        }
        CheckResult r = checked_dsep(dia, {Y}, {sigma_name(steps[k].target)}, cond,
                                     "weak-condition:k" + std::to_string(k + 1));
        if (!r.ok) return r;
    }
    return CheckResult{true, "weak-condition", std::nullopt};
}

// Condition (9): the natural regime on the mediator is well defined for this
// W. Part (a) keeps W away from the treatment, the mediator and their
// descendants; part (b) blocks every back-door path from mediator to
// response, in the graph with all arrows into the treatment deleted, by
// {treatment} ∪ W.
inline CheckResult check_nde_defined(const Model& m, const NodeId& X, const NodeId& Z,
                                     const NodeId& Y, const std::vector<NodeId>& W) {
    {
        Dag idle = surgery(m.dag, Plan{{X, IdleRegime{}}, {Z, IdleRegime{}}});
        CheckResult wr = checked_dsep(idle, detail::to_set(W), {sigma_name(X), sigma_name(Z)},
                                      {}, "nde(9):W-regime-dependent");
        if (!wr.ok) return wr;
    }
    std::vector<NodeId> zcond(m.dag.parents(Z).begin(), m.dag.parents(Z).end());
    zcond.insert(zcond.end(), W.begin(), W.end());
    Plan plan{{X, ConditionalRegime{{}, {}}},  // atomic-style: all arrows into X cut
              {Z, ConditionalRegime{detail::sorted_unique(zcond), {}}}};
    Dag dia = surgery(m.dag, plan);
    NodeSet cond{X, Z};
    cond.insert(W.begin(), W.end());
    return checked_dsep(dia, {Y}, {sigma_name(Z)}, cond, "nde(9)");
}

// ---------------------------------------------------------------------------
// Formula evaluation on an observational view
// ---------------------------------------------------------------------------

namespace detail {

struct SeqLayout {
    std::vector<NodeId> sum_vars;  // distinct block vars and targets, in plan order
    std::vector<int> sum_cards;
};

inline SeqLayout seq_layout(const ObservationalView& view, const std::vector<SeqStep>& steps,
                            const NodeId& Y) {
    SeqLayout lay;
    NodeSet seen;
    auto push = [&](const NodeId& v) {
        if (v == Y) throw Error("g-formula: response cannot appear among targets or blocks");
        if (seen.insert(v).second) {
            lay.sum_vars.push_back(v);
            lay.sum_cards.push_back(view.model().card(v));
        }
    };
    NodeSet targets;
    for (const auto& s : steps) {
        if (!targets.insert(s.target).second)
            throw Error("g-formula: duplicate target " + s.target);
    }
    for (const auto& s : steps) {
        for (const auto& b : s.block) {
            if (targets.count(b)) throw Error("g-formula: block member " + b + " is a target");
            push(b);
        }
        push(s.target);
    }
    return lay;
}

}  // namespace detail

// Exact evaluation of the g-formula for the plan described by `steps`:
// p(y; plan) = sum over targets and blocks of p(y | targets, blocks) times
// per-step regime factors and covariate factors, all observational.
inline Table eval_g_formula(const ObservationalView& view, const std::vector<SeqStep>& steps,
                            const NodeId& Y) {
    view.require_observable(Y);
    detail::SeqLayout lay = detail::seq_layout(view, steps, Y);

    // Per-step conditional tables, built once.
    std::vector<std::unique_ptr<detail::CondTable>> block_ct(steps.size());
    std::vector<std::unique_ptr<detail::CondTable>> idle_ct(steps.size());
    std::vector<NodeId> past;  // X̄_{k-1} ∪ L̄_{k-1}
    std::vector<NodeId> outcome_given;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const auto& s = steps[k];
        if (!s.block.empty())
            block_ct[k] = std::make_unique<detail::CondTable>(view, s.block, past);
        std::vector<NodeId> upto = past;
        upto.insert(upto.end(), s.block.begin(), s.block.end());
        NodeSet avail = detail::to_set(upto);
        for (const auto& c : regime_cond_set(s.regime))
            if (!avail.count(c))
                throw Error("g-formula: regime for " + s.target + " conditions on " + c +
                            " which is not in the observed past (targets and blocks)");
        if (is_idle(s.regime))
            idle_ct[k] =
                std::make_unique<detail::CondTable>(view, std::vector<NodeId>{s.target}, upto);
        past = upto;
        past.push_back(s.target);
    }
    outcome_given = past;
    detail::CondTable outcome_ct(view, {Y}, outcome_given);

    Table out = Table::zeros({Y}, {view.model().card(Y)});
    std::vector<int> a(lay.sum_vars.size(), 0);
    do {
        std::map<NodeId, int> asg;
        for (std::size_t i = 0; i < lay.sum_vars.size(); ++i) asg[lay.sum_vars[i]] = a[i];

        double weight = 1.0;
        bool alive = true;
        for (std::size_t k = 0; k < steps.size() && alive; ++k) {
            const auto& s = steps[k];
            if (block_ct[k]) alive = detail::accumulate_factor(weight, *block_ct[k], asg);
            if (!alive) break;
            int tv = asg.at(s.target);
            if (const auto* at = std::get_if<AtomicRegime>(&s.regime)) {
                if (tv != at->value) alive = false;
            } else if (const auto* cr = std::get_if<ConditionalRegime>(&s.regime)) {
                std::vector<int> cv;
                for (const auto& c : cr->cond_set) cv.push_back(asg.at(c));
                if (tv != cr->decide(cv)) alive = false;
            } else if (const auto* rr = std::get_if<RandomRegime>(&s.regime)) {
                std::vector<int> cv;
                for (const auto& c : rr->dist.parents) cv.push_back(asg.at(c));
                weight *= rr->dist.p(tv, cv);
                alive = weight != 0.0;
            } else {
                alive = detail::accumulate_factor(weight, *idle_ct[k], asg);
            }
        }
        if (!alive) continue;
        for (int y = 0; y < view.model().card(Y); ++y) {
            asg[Y] = y;
            if (outcome_ct.slice(asg) < kPositivityEps)
                throw PositivityViolation(
                    "g-formula conditions on a zero-probability treatment/covariate history");
            out.values[y] += weight * outcome_ct.prob(asg);
        }
    } while (detail::next_assignment(a, lay.sum_cards));
    return out;
}

// Checked g-formula: verifies simple stability or the weaker condition,
// then evaluates. Throws NotIdentifiedError when neither criterion holds.
inline Table g_formula(const Model& m, const std::vector<SeqStep>& steps, const NodeId& Y) {
    CheckResult simple = check_simple_stability(m, steps, Y);
    if (!simple.ok) {
        CheckResult weak = check_weak_condition(m, steps, Y);
        if (!weak.ok)
            throw NotIdentifiedError("g-formula preconditions fail at " + weak.condition);
    }
    ObservationalView view(m);
    return eval_g_formula(view, steps, Y);
}

// Back-door adjustment distribution sum_c p(y|c,x) p(c).
inline Table eval_backdoor(const ObservationalView& view, const NodeId& X, const NodeId& Y,
                           const std::vector<NodeId>& C, int x) {
    detail::CondTable y_ct(view, {Y}, [&] {
        std::vector<NodeId> g(C);
        g.push_back(X);
        return g;
    }());
    std::vector<NodeId> c_scope = detail::sorted_unique(C);
    std::vector<int> c_cards;
    for (const auto& c : c_scope) c_cards.push_back(view.model().card(c));
    std::unique_ptr<detail::CondTable> c_ct;
    if (!c_scope.empty()) c_ct = std::make_unique<detail::CondTable>(view, c_scope, std::vector<NodeId>{});

    Table out = Table::zeros({Y}, {view.model().card(Y)});
    std::vector<int> cv(c_scope.size(), 0);
    do {
        std::map<NodeId, int> asg;
        for (std::size_t i = 0; i < c_scope.size(); ++i) asg[c_scope[i]] = cv[i];
        double weight = 1.0;
        if (c_ct && !detail::accumulate_factor(weight, *c_ct, asg)) continue;
        asg[X] = x;
        for (int y = 0; y < view.model().card(Y); ++y) {
            asg[Y] = y;
            if (y_ct.slice(asg) < kPositivityEps)
                throw PositivityViolation("back-door adjustment needs p(c,x) > 0");
            out.values[y] += weight * y_ct.prob(asg);
        }
    } while (!c_scope.empty() && detail::next_assignment(cv, c_cards));
    return out;
}

// Mixture form for a random treatment regime: sum_{x,c} p(y|c,x) pt(x|c) p(c).
inline Table eval_backdoor_random(const ObservationalView& view, const NodeId& X, const NodeId& Y,
                                  const RandomRegime& d) {
    const std::vector<NodeId>& C = d.cond_set;
    detail::CondTable y_ct(view, {Y}, [&] {
        std::vector<NodeId> g(C);
        g.push_back(X);
        return g;
    }());
    std::vector<NodeId> c_scope = detail::sorted_unique(C);
    std::vector<int> c_cards;
    for (const auto& c : c_scope) c_cards.push_back(view.model().card(c));
    std::unique_ptr<detail::CondTable> c_ct;
    if (!c_scope.empty()) c_ct = std::make_unique<detail::CondTable>(view, c_scope, std::vector<NodeId>{});

    Table out = Table::zeros({Y}, {view.model().card(Y)});
    std::vector<int> cv(c_scope.size(), 0);
    do {
        std::map<NodeId, int> asg;
        for (std::size_t i = 0; i < c_scope.size(); ++i) asg[c_scope[i]] = cv[i];
        double base = 1.0;
        if (c_ct && !detail::accumulate_factor(base, *c_ct, asg)) continue;
        for (int x = 0; x < view.model().card(X); ++x) {
            std::vector<int> dcv;
            for (const auto& c : d.dist.parents) dcv.push_back(asg.at(c));
            double weight = base * d.dist.p(x, dcv);
            if (weight == 0.0) continue;
            asg[X] = x;
            for (int y = 0; y < view.model().card(Y); ++y) {
                asg[Y] = y;
                if (y_ct.slice(asg) < kPositivityEps)
                    throw PositivityViolation("back-door adjustment needs p(c,x) > 0");
                out.values[y] += weight * y_ct.prob(asg);
            }
        }
    } while (!c_scope.empty() && detail::next_assignment(cv, c_cards));
    return out;
}

// The observational five-factor formula for the natural-effect ingredient
// p(y; sigma_X = s_x, sigma_Z = d_{W,baseline}):
//   sum_{s,l1,l2,z} p(y|l1,l2,z,x) p(z|w,s,baseline) p(l2|x,l1) p(s|w) p(l1)
inline Table eval_nde_formula(const ObservationalView& view, const NodeId& X, const NodeId& Z,
                              const NodeId& Y, const RoleSets& roles, int x, int baseline) {
    const auto& W = roles.W;
    const auto& S = roles.S;
    const auto& L1 = roles.L1;
    const auto& L2 = roles.L2;

    std::vector<NodeId> sum_vars = detail::sorted_unique([&] {
        std::vector<NodeId> v(S);
        v.insert(v.end(), L1.begin(), L1.end());
        v.insert(v.end(), L2.begin(), L2.end());
        v.push_back(Z);
        return v;
    }());
    std::vector<int> sum_cards;
    for (const auto& v : sum_vars) sum_cards.push_back(view.model().card(v));

    auto concat = [](std::initializer_list<std::vector<NodeId>> parts) {
        std::vector<NodeId> out;
        for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
        return out;
    };

    detail::CondTable y_ct(view, {Y}, concat({L1, L2, {Z, X}}));
    detail::CondTable z_ct(view, {Z}, concat({W, S, {X}}));
    std::unique_ptr<detail::CondTable> l2_ct, s_ct, l1_ct;
    if (!L2.empty()) l2_ct = std::make_unique<detail::CondTable>(view, L2, concat({{X}, L1}));
    if (!S.empty()) s_ct = std::make_unique<detail::CondTable>(view, S, W);
    if (!L1.empty()) l1_ct = std::make_unique<detail::CondTable>(view, L1, std::vector<NodeId>{});

    Table out = Table::zeros({Y}, {view.model().card(Y)});
    std::vector<int> a(sum_vars.size(), 0);
    do {
        std::map<NodeId, int> asg;
        for (std::size_t i = 0; i < sum_vars.size(); ++i) asg[sum_vars[i]] = a[i];

        double weight = 1.0;
        asg[X] = x;
        bool alive = true;
        if (l1_ct) alive = detail::accumulate_factor(weight, *l1_ct, asg);
        if (alive && l2_ct) alive = detail::accumulate_factor(weight, *l2_ct, asg);
        if (alive && s_ct) alive = detail::accumulate_factor(weight, *s_ct, asg);
        if (alive) {
            std::map<NodeId, int> zasg = asg;
            zasg[X] = baseline;
            alive = detail::accumulate_factor(weight, z_ct, zasg);
        }
        if (!alive) continue;
        for (int y = 0; y < view.model().card(Y); ++y) {
            asg[Y] = y;
            if (y_ct.slice(asg) < kPositivityEps)
                throw PositivityViolation("natural-effect formula conditions on a zero-probability event");
            out.values[y] += weight * y_ct.prob(asg);
        }
    } while (detail::next_assignment(a, sum_cards));
    return out;
}

// Standardized direct effect, the display form:
//   sum_{l1,l2,z} [E(Y|x,z,l1,l2) p(l2|x,l1) - E(Y|x*,z,l1,l2) p(l2|x*,l1)] pt(z|w) p(l1)
inline double eval_sde_display(const ObservationalView& view, const NodeId& X, const NodeId& Z,
                               const NodeId& Y, const RandomRegime& d, const RoleSets& roles,
                               int x, int x_star) {
    const auto& L1 = roles.L1;
    const auto& L2 = roles.L2;
    const Variable& yvar = view.model().var(Y);

    std::vector<NodeId> sum_vars = detail::sorted_unique([&] {
        std::vector<NodeId> v(L1);
        v.insert(v.end(), L2.begin(), L2.end());
        v.push_back(Z);
        return v;
    }());
    std::vector<int> sum_cards;
    for (const auto& v : sum_vars) sum_cards.push_back(view.model().card(v));

    std::vector<NodeId> ygiven(L1);
    ygiven.insert(ygiven.end(), L2.begin(), L2.end());
    ygiven.push_back(Z);
    ygiven.push_back(X);
    detail::CondTable y_ct(view, {Y}, ygiven);
    std::unique_ptr<detail::CondTable> l2_ct, l1_ct;
    if (!L2.empty()) {
        std::vector<NodeId> g{X};
        g.insert(g.end(), L1.begin(), L1.end());
        l2_ct = std::make_unique<detail::CondTable>(view, L2, g);
    }
    if (!L1.empty()) l1_ct = std::make_unique<detail::CondTable>(view, L1, std::vector<NodeId>{});

    auto arm = [&](const std::map<NodeId, int>& asg_base, int treat) {
        std::map<NodeId, int> asg = asg_base;
        asg[X] = treat;
        double w = 1.0;
        if (l2_ct && !detail::accumulate_factor(w, *l2_ct, asg)) return 0.0;
        double ey = 0.0;
        for (int y = 0; y < yvar.card; ++y) {
            asg[Y] = y;
            if (y_ct.slice(asg) < kPositivityEps)
                throw PositivityViolation("sde formula conditions on a zero-probability event");
            ey += yvar.numeric[y] * y_ct.prob(asg);
        }
        return w * ey;
    };

    double total = 0.0;
    std::vector<int> a(sum_vars.size(), 0);
    do {
        std::map<NodeId, int> asg;
        for (std::size_t i = 0; i < sum_vars.size(); ++i) asg[sum_vars[i]] = a[i];
        double outer = 1.0;
        if (l1_ct && !detail::accumulate_factor(outer, *l1_ct, asg)) continue;
        std::vector<int> dcv;
        for (const auto& c : d.dist.parents) dcv.push_back(asg.at(c));
        outer *= d.dist.p(asg.at(Z), dcv);
        if (outer == 0.0) continue;
        total += outer * (arm(asg, x) - arm(asg, x_star));
    } while (detail::next_assignment(a, sum_cards));
    return total;
}

// Recombination of two interventional studies (experimental identification):
//   sum_{z,w} p(y|w; do x, do z) p(z|w; do x*) p(w)
// The first source is a CPT of the response given W followed by the
// mediator; the second a CPT of the mediator given W; the third the W table.
inline Table experimental_identify(const Cpt& py_wz, const Cpt& pz_w, const Table& pw) {
    std::vector<NodeId> w_scope = pz_w.parents;
    if (pw.scope != w_scope)
        throw Error("experimental_identify: p(w) scope disagrees with p(z|w) parents");
    std::vector<NodeId> expect = w_scope;
    expect.push_back(pz_w.target);
    if (py_wz.parents != expect)
        throw Error("experimental_identify: p(y|w,z) parents must be W followed by the mediator");
    for (std::size_t i = 0; i < w_scope.size(); ++i) {
        if (pz_w.parent_cards[i] != py_wz.parent_cards[i] || pz_w.parent_cards[i] != pw.cards[i])
            throw Error("experimental_identify: W cardinality mismatch");
    }
    if (py_wz.parent_cards.back() != pz_w.target_card)
        throw Error("experimental_identify: mediator cardinality mismatch");
    py_wz.validate();
    pz_w.validate();

    Table out = Table::zeros({py_wz.target}, {py_wz.target_card});
    std::vector<int> wv(w_scope.size(), 0);
    do {
        double w_p = pw.at(wv);
        if (w_p == 0.0) continue;
        for (int z = 0; z < pz_w.target_card; ++z) {
            double z_p = pz_w.p(z, wv);
            if (z_p == 0.0) continue;
            std::vector<int> pv = wv;
            pv.push_back(z);
            for (int y = 0; y < py_wz.target_card; ++y)
                out.values[y] += w_p * z_p * py_wz.p(y, pv);
        }
    } while (!w_scope.empty() && detail::next_assignment(wv, pw.cards));
    return out;
}

// ---------------------------------------------------------------------------
// Role-set search
// ---------------------------------------------------------------------------

namespace detail {

// All subsets of `pool` (which must be sorted) up to `cap` elements, ordered
// by size and then lexicographically. This order is the engine-wide rule for
// picking "the first admissible" role assignment.
inline std::vector<std::vector<NodeId>> subsets_by_size(const std::vector<NodeId>& pool,
                                                        std::size_t cap) {
    std::vector<std::vector<NodeId>> out;
    std::size_t n = pool.size();
    cap = std::min(cap, n);
    for (std::size_t k = 0; k <= cap; ++k) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i;
        while (true) {
            std::vector<NodeId> sub;
            for (std::size_t i : idx) sub.push_back(pool[i]);
            out.push_back(std::move(sub));
            if (k == 0) break;
            std::size_t i = k;
            while (i-- > 0) {
                if (idx[i] != i + n - k) {
                    ++idx[i];
                    for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
                    break;
                }
                if (i == 0) goto next_size;
            }
        }
    next_size:;
    }
    return out;
}

inline bool contains_all(const NodeSet& hay, const std::vector<NodeId>& needles) {
    for (const auto& n : needles)
        if (!hay.count(n)) return false;
    return true;
}

}  // namespace detail

inline constexpr std::size_t kDefaultMaxAdjustSize = 4;

// ---------------------------------------------------------------------------
// Effect identification, per query kind
// ---------------------------------------------------------------------------

namespace detail {

inline void check_query_nodes(const Model& m, const CausalQuery& q) {
    auto obs = [&](const NodeId& v, const char* role) {
        m.dag.require(v);
        if (m.dag.latent(v))
            throw Error(std::string(role) + " " + v + " is latent; queries must target observables");
    };
    if (q.kind != QueryKind::Seq) {
        obs(q.treatment, "treatment");
        obs(q.response, "response");
        if (q.treatment == q.response) throw Error("treatment equals response");
        if (q.x < 0 || q.x >= m.card(q.treatment) || q.x_star < 0 || q.x_star >= m.card(q.treatment))
            throw Error("treatment value out of range");
    } else {
        obs(q.response, "response");
        if (q.steps.empty()) throw Error("seq query needs at least one step");
        for (const auto& s : q.steps) obs(s.target, "target");
    }
    if (q.kind == QueryKind::Cde || q.kind == QueryKind::Sde || q.kind == QueryKind::Nde ||
        q.kind == QueryKind::Nie) {
        if (!q.mediator) throw Error("mediation query needs a mediator");
        obs(*q.mediator, "mediator");
        if (*q.mediator == q.treatment || *q.mediator == q.response)
            throw Error("mediator must differ from treatment and response");
    }
    auto check_roles = [&](const std::vector<NodeId>& role, const char* name) {
        for (const auto& v : role) {
            m.dag.require(v);
            if (m.dag.latent(v))
                throw Error(std::string("role ") + name + " contains latent node " + v);
            if (v == q.treatment || v == q.response || (q.mediator && v == *q.mediator))
                throw Error(std::string("role ") + name + " overlaps treatment/mediator/response");
        }
    };
    check_roles(q.roles.C, "C");
    check_roles(q.roles.W, "W");
    check_roles(q.roles.S, "S");
    check_roles(q.roles.L1, "L1");
    check_roles(q.roles.L2, "L2");
}

inline std::vector<std::string> seq_formula_strings(const std::vector<SeqStep>& steps,
                                                    const NodeId& Y) {
    std::vector<std::string> out;
    auto tokens = [&](const std::vector<NodeId>& vs) {
        std::string t;
        for (const auto& v : vs) {
            if (!t.empty()) t += ",";
            t += lower(v);
        }
        return t;
    };
    std::vector<NodeId> hist;
    for (const auto& s : steps) hist.push_back(s.target);
    for (const auto& s : steps) hist.insert(hist.end(), s.block.begin(), s.block.end());
    out.push_back(factor_string(lower(Y), {tokens(hist)}));
    std::vector<NodeId> past;
    for (const auto& s : steps) {
        if (const auto* rr = std::get_if<RandomRegime>(&s.regime)) {
            out.push_back(factor_string(lower(s.target), {tokens(rr->cond_set)}, "p~"));
        } else if (const auto* cr = std::get_if<ConditionalRegime>(&s.regime)) {
            out.push_back("delta(" + lower(s.target) + ",a(" + tokens(cr->cond_set) + "))");
        } else if (is_idle(s.regime)) {
            std::vector<NodeId> g = past;
            g.insert(g.end(), s.block.begin(), s.block.end());
            out.push_back(factor_string(lower(s.target), {tokens(g)}));
        }
        if (!s.block.empty()) out.push_back(factor_string(tokens(s.block), {tokens(past)}));
        past.insert(past.end(), s.block.begin(), s.block.end());
        past.push_back(s.target);
    }
    return out;
}

// Candidate pools for block search: observable non-descendants of the
// remaining treatments, excluding treatments and the response.
inline std::vector<NodeId> block_pool(const Model& m, const std::vector<SeqStep>& steps,
                                      std::size_t k, const NodeId& Y) {
    NodeSet forbid{Y};
    for (const auto& s : steps) forbid.insert(s.target);
    for (std::size_t j = k; j < steps.size(); ++j) {
        NodeSet de = descendants(m.dag, steps[j].target);
        forbid.insert(de.begin(), de.end());
    }
    std::vector<NodeId> pool;
    for (const auto& v : m.dag.observable_nodes())
        if (!forbid.count(v)) pool.push_back(v);
    return pool;
}

struct SeqCheck {
    bool ok = false;
    std::string note;
    CheckResult failed;
};

inline SeqCheck seq_condition(const Model& m, const std::vector<SeqStep>& steps, const NodeId& Y) {
    CheckResult simple = check_simple_stability(m, steps, Y);
    if (simple.ok) return {true, "simple-stability", {}};
    CheckResult weak = check_weak_condition(m, steps, Y);
    if (weak.ok) return {true, "weak-condition (graphical-necessary)", {}};
    return {false, "", weak};
}

// Searches covariate blocks for the steps, smallest first. `fixed` entries
// must end up inside L1 ∪ L2 (used by SDE, whose W has to be covered).
inline std::optional<std::pair<std::vector<SeqStep>, std::string>> find_seq_blocks(
    const Model& m, std::vector<SeqStep> steps, const NodeId& Y,
    const std::vector<NodeId>& fixed, std::size_t cap) {
    std::vector<std::vector<std::vector<NodeId>>> options;
    for (std::size_t k = 0; k < steps.size(); ++k)
        options.push_back(subsets_by_size(block_pool(m, steps, k, Y), cap));

    // Iterate tuples of per-step blocks ordered by total size then lex.
    std::vector<std::size_t> pick(steps.size(), 0);
    struct Item {
        std::size_t total;
        std::vector<std::size_t> pick;
    };
    std::vector<Item> order;
    std::function<void(std::size_t, std::vector<std::size_t>&, std::size_t)> build =
        [&](std::size_t k, std::vector<std::size_t>& cur, std::size_t total) {
            if (k == steps.size()) {
                order.push_back({total, cur});
                return;
            }
            for (std::size_t i = 0; i < options[k].size(); ++i) {
                cur.push_back(i);
                build(k + 1, cur, total + options[k][i].size());
                cur.pop_back();
            }
        };
    std::vector<std::size_t> cur;
    build(0, cur, 0);
    std::stable_sort(order.begin(), order.end(),
                     [](const Item& a, const Item& b) { return a.total < b.total; });

    for (const auto& item : order) {
        NodeSet united;
        bool disjoint = true;
        std::size_t total = 0;
        for (std::size_t k = 0; k < steps.size(); ++k) {
            steps[k].block = options[k][item.pick[k]];
            united.insert(steps[k].block.begin(), steps[k].block.end());
            total += steps[k].block.size();
        }
        disjoint = united.size() == total;
        if (!disjoint || !contains_all(united, fixed)) continue;
        SeqCheck chk = seq_condition(m, steps, Y);
        if (chk.ok) return std::make_pair(steps, chk.note);
    }
    return std::nullopt;
}

}  // namespace detail

// Back-door identification of the average causal effect. When roles.C is not
// supplied (auto_search), the smallest admissible adjustment set wins.
inline IdentificationResult ace(const Model& m, const CausalQuery& q,
                                std::size_t max_adjust = kDefaultMaxAdjustSize) {
    detail::check_query_nodes(m, q);
    const NodeId& X = q.treatment;
    const NodeId& Y = q.response;

    std::vector<NodeId> chosen;
    CheckResult verdict;
    if (!q.auto_search) {
        chosen = q.roles.C;
        verdict = check_back_door(m, X, Y, chosen);
        if (!verdict.ok) return detail::failure(Verdict::NotIdentified, verdict);
    } else {
        NodeSet forbid{X, Y};
        NodeSet de = descendants(m.dag, X);
        forbid.insert(de.begin(), de.end());
        std::vector<NodeId> pool;
        for (const auto& v : m.dag.observable_nodes())
            if (!forbid.count(v)) pool.push_back(v);
        bool found = false;
        CheckResult empty_fail;
        for (const auto& cand : detail::subsets_by_size(pool, max_adjust)) {
            CheckResult r = check_back_door(m, X, Y, cand);
            if (r.ok) {
                chosen = cand;
                verdict = r;
                found = true;
                break;
            }
            if (cand.empty()) empty_fail = r;
        }
        if (!found) return detail::failure(Verdict::NotIdentified, empty_fail);
    }

    ObservationalView view(m);
    Table dist_x = eval_backdoor(view, X, Y, chosen, q.x);
    Table dist_xs = eval_backdoor(view, X, Y, chosen, q.x_star);
    const Variable& yvar = m.var(Y);

    IdentificationResult r;
    r.verdict = Verdict::Identified;
    r.identified = true;
    r.value = expectation(dist_x, yvar) - expectation(dist_xs, yvar);
    r.distribution = dist_x;
    r.used_roles.C = chosen;
    r.condition_note = "back-door";
    if (chosen.empty())
        r.formula = {detail::factor_string("y", {"x"})};
    else
        r.formula = {detail::factor_string("y", {"c", "x"}), detail::factor_string("c", {})};
    return r;
}

// Intervention distribution for a random/conditional treatment regime d_C,
// by the back-door mixture formula.
inline Table ace_random(const Model& m, const NodeId& X, const NodeId& Y, const RandomRegime& d) {
    CheckResult bd = check_back_door(m, X, Y, d.cond_set);
    if (!bd.ok) throw NotIdentifiedError("back-door fails for the regime's conditioning set");
    ObservationalView view(m);
    return eval_backdoor_random(view, X, Y, d);
}

namespace detail {

// Shared plumbing for CDE and SDE: resolve blocks, check conditions, then
// hand the two-step plan back for evaluation.
struct MediationPlan {
    std::vector<SeqStep> steps_x;       // treatment at x
    std::vector<SeqStep> steps_x_star;  // treatment at x*
    std::string note;
    RoleSets roles;
};

inline std::variant<MediationPlan, IdentificationResult> resolve_mediation_plan(
    const Model& m, const CausalQuery& q, const Regime& mediator_regime,
    const std::vector<NodeId>& must_cover, std::size_t max_adjust,
    bool require_weak_condition) {
    const NodeId& X = q.treatment;
    const NodeId& Z = *q.mediator;
    const NodeId& Y = q.response;

    std::vector<SeqStep> steps{{X, AtomicRegime{q.x}, q.roles.L1},
                               {Z, mediator_regime, q.roles.L2}};
    std::string note;
    if (q.auto_search) {
        auto found = find_seq_blocks(m, steps, Y, must_cover, max_adjust);
        if (!found) {
            steps[0].block.clear();
            steps[1].block.clear();
            SeqCheck chk = seq_condition(m, steps, Y);
            return failure(Verdict::NotIdentified, chk.failed);
        }
        steps = found->first;
        note = found->second;
    } else {
        SeqCheck chk = seq_condition(m, steps, Y);
        if (!chk.ok) return failure(Verdict::NotIdentified, chk.failed);
        note = chk.note;
    }
    if (require_weak_condition) {
        CheckResult weak = check_weak_condition(m, steps, Y);
        if (!weak.ok) return failure(Verdict::NotIdentified, weak);
    }

    MediationPlan plan;
    plan.steps_x = steps;
    plan.steps_x_star = steps;
    plan.steps_x_star[0].regime = AtomicRegime{q.x_star};
    plan.note = note;
    plan.roles.L1 = steps[0].block;
    plan.roles.L2 = steps[1].block;
    return plan;
}

inline std::vector<std::string> mediation_formula(const RoleSets& roles, bool random_regime,
                                                  const std::string& regime_token) {
    std::string l1 = roles.L1.empty() ? "" : "l1";
    std::string l2 = roles.L2.empty() ? "" : "l2";
    std::vector<std::string> out;
    out.push_back(factor_string("y", {l1, l2, "x", "z"}));
    if (random_regime)
        out.push_back(factor_string("z", {regime_token}, "p~"));
    if (!roles.L2.empty()) out.push_back(factor_string("l2", {"x", l1}));
    if (!roles.L1.empty()) out.push_back(factor_string("l1", {}));
    return out;
}

}  // namespace detail

// Controlled direct effect at mediator value z: two g-formula evaluations
// with both treatments atomic.
inline IdentificationResult cde(const Model& m, const CausalQuery& q,
                                std::size_t max_adjust = kDefaultMaxAdjustSize) {
    detail::check_query_nodes(m, q);
    if (!q.mediator_value) throw Error("cde query needs the mediator value z");
    int z = *q.mediator_value;
    if (z < 0 || z >= m.card(*q.mediator)) throw Error("mediator value out of range");

    auto resolved = detail::resolve_mediation_plan(m, q, AtomicRegime{z}, {}, max_adjust, false);
    if (std::holds_alternative<IdentificationResult>(resolved))
        return std::get<IdentificationResult>(resolved);
    auto plan = std::get<detail::MediationPlan>(resolved);

    ObservationalView view(m);
    Table dist_x = eval_g_formula(view, plan.steps_x, q.response);
    Table dist_xs = eval_g_formula(view, plan.steps_x_star, q.response);
    const Variable& yvar = m.var(q.response);

    IdentificationResult r;
    r.verdict = Verdict::Identified;
    r.identified = true;
    r.value = expectation(dist_x, yvar) - expectation(dist_xs, yvar);
    r.distribution = dist_x;
    r.used_roles = plan.roles;
    r.condition_note = plan.note;
    r.formula = detail::mediation_formula(plan.roles, false, "");
    return r;
}

// Standardized direct effect for a known reference regime d_W.
inline IdentificationResult sde(const Model& m, const CausalQuery& q,
                                std::size_t max_adjust = kDefaultMaxAdjustSize) {
    detail::check_query_nodes(m, q);
    if (!q.mediator_regime) throw Error("sde query needs the mediator regime d_W");
    const RandomRegime& d = *q.mediator_regime;
    const NodeId& X = q.treatment;
    const NodeId& Z = *q.mediator;

    // W must be regime-independent: no treatment/mediator descendants.
    {
        Dag idle = surgery(m.dag, Plan{{X, IdleRegime{}}, {Z, IdleRegime{}}});
        CheckResult wr = checked_dsep(idle, detail::to_set(d.cond_set),
                                      {sigma_name(X), sigma_name(Z)}, {},
                                      "sde:W-regime-dependent");
        if (!wr.ok) return detail::failure(Verdict::NotIdentified, wr);
    }

    auto resolved = detail::resolve_mediation_plan(m, q, d, d.cond_set, max_adjust, true);
    if (std::holds_alternative<IdentificationResult>(resolved))
        return std::get<IdentificationResult>(resolved);
    auto plan = std::get<detail::MediationPlan>(resolved);

    ObservationalView view(m);
    Table dist_x = eval_g_formula(view, plan.steps_x, q.response);
    double value = eval_sde_display(view, X, Z, q.response, d, plan.roles, q.x, q.x_star);

    IdentificationResult r;
    r.verdict = Verdict::Identified;
    r.identified = true;
    r.value = value;
    r.distribution = dist_x;
    r.used_roles = plan.roles;
    r.used_roles.W = d.cond_set;
    r.condition_note = plan.note;
    r.formula = detail::mediation_formula(plan.roles, true, d.cond_set.empty() ? "" : "w");
    return r;
}

// Sequential-plan identification via the g-formula.
inline IdentificationResult identify_seq(const Model& m, const CausalQuery& q,
                                         std::size_t max_adjust = kDefaultMaxAdjustSize) {
    detail::check_query_nodes(m, q);
    std::vector<SeqStep> steps = q.steps;
    std::string note;
    if (q.auto_search) {
        auto found = detail::find_seq_blocks(m, steps, q.response, {}, max_adjust);
        if (!found) {
            for (auto& s : steps) s.block.clear();
            detail::SeqCheck chk = detail::seq_condition(m, steps, q.response);
            return detail::failure(Verdict::NotIdentified, chk.failed);
        }
        steps = found->first;
        note = found->second;
    } else {
        detail::SeqCheck chk = detail::seq_condition(m, steps, q.response);
        if (!chk.ok) return detail::failure(Verdict::NotIdentified, chk.failed);
        note = chk.note;
    }

    ObservationalView view(m);
    Table dist = eval_g_formula(view, steps, q.response);
    const Variable& yvar = m.var(q.response);

    IdentificationResult r;
    r.verdict = Verdict::Identified;
    r.identified = true;
    r.value = expectation(dist, yvar);
    r.distribution = dist;
    r.condition_note = note;
    r.formula = detail::seq_formula_strings(steps, q.response);
    if (steps.size() >= 1) r.used_roles.L1 = steps[0].block;
    if (steps.size() >= 2) r.used_roles.L2 = steps[1].block;
    r.resolved_steps = steps;
    return r;
}

// ---------------------------------------------------------------------------
// Natural (in)direct effects from observational data (conditions 1-5)
// ---------------------------------------------------------------------------

namespace detail {

inline Dag nde_union_diagram(const Dag& g, const NodeId& X, const NodeId& Z,
                             const std::vector<NodeId>& W) {
    std::vector<NodeId> zc(g.parents(Z).begin(), g.parents(Z).end());
    zc.insert(zc.end(), W.begin(), W.end());
    return surgery(g, Plan{{X, IdleRegime{}}, {Z, ConditionalRegime{sorted_unique(zc), {}}}});
}

// The five observational-identification conditions for given roles; returns
// the first failure.
inline CheckResult check_nde_roles(const Model& m, const NodeId& X, const NodeId& Z,
                                   const NodeId& Y, const RoleSets& roles) {
    const Dag& g = m.dag;
    Dag dia = nde_union_diagram(g, X, Z, roles.W);
    NodeSet sigmas{sigma_name(X), sigma_name(Z)};

    std::vector<NodeId> wsl1(roles.W);
    wsl1.insert(wsl1.end(), roles.S.begin(), roles.S.end());
    wsl1.insert(wsl1.end(), roles.L1.begin(), roles.L1.end());
    CheckResult c1 = checked_dsep(dia, to_set(wsl1), sigmas, {}, "obs-nde:1");
    if (!c1.ok) return c1;

    CheckResult c2 = checked_dsep(dia, to_set(roles.L2), {sigma_name(Z)}, {}, "obs-nde:2");
    if (!c2.ok) return c2;

    Dag d3 = surgery(g, Plan{{X, IdleRegime{}}, {Z, ConditionalRegime{sorted_unique(roles.W), {}}}});
    NodeSet cond3{X};
    cond3.insert(roles.W.begin(), roles.W.end());
    cond3.insert(roles.L1.begin(), roles.L1.end());
    CheckResult c3 = checked_dsep(d3, {Y}, {sigma_name(X)}, cond3, "obs-nde:3");
    if (!c3.ok) return c3;

    NodeSet cond4{X, Z};
    cond4.insert(roles.L1.begin(), roles.L1.end());
    cond4.insert(roles.L2.begin(), roles.L2.end());
    CheckResult c4 = checked_dsep(dia, {Y}, {sigma_name(Z)}, cond4, "obs-nde:4");
    if (!c4.ok) return c4;

    CheckResult c5 = check_zx_backdoor(g, X, Z, roles.W, roles.S);
    if (!c5.ok) return c5;

    return CheckResult{true, "obs-nde", std::nullopt};
}

struct NdeResolution {
    RoleSets roles;
};

// Resolves the roles for the natural-effect formula: verifies explicit roles
// or searches (W, L1, L2, S) smallest-first with condition-level pruning.
inline std::variant<NdeResolution, IdentificationResult> resolve_nde_roles(
    const Model& m, const CausalQuery& q, std::size_t max_adjust) {
    const NodeId& X = q.treatment;
    const NodeId& Z = *q.mediator;
    const NodeId& Y = q.response;
    const Dag& g = m.dag;

    if (!q.auto_search) {
        NodeSet l12 = to_set(q.roles.L1);
        for (const auto& v : q.roles.L2) l12.insert(v);
        for (const auto& w : q.roles.W)
            if (!l12.count(w)) throw Error("nde roles: W must be a subset of L1 ∪ L2");
        CheckResult c9 = check_nde_defined(m, X, Z, Y, q.roles.W);
        if (!c9.ok) return failure(Verdict::NotDefined, c9);
        CheckResult rest = check_nde_roles(m, X, Z, Y, q.roles);
        if (!rest.ok) return failure(Verdict::NotIdentified, rest);
        return NdeResolution{q.roles};
    }

    NodeSet forbid{X, Z, Y};
    NodeSet dex = descendants(g, X);
    NodeSet dez = descendants(g, Z);
    std::vector<NodeId> pool_nd, pool_l2;
    for (const auto& v : g.observable_nodes()) {
        if (forbid.count(v)) continue;
        if (!dez.count(v)) {
            pool_l2.push_back(v);
            if (!dex.count(v)) pool_nd.push_back(v);
        }
    }
    auto nd_subsets = subsets_by_size(pool_nd, max_adjust);
    auto l2_subsets = subsets_by_size(pool_l2, max_adjust);

    bool any_w_defined = false;
    std::optional<CheckResult> first_fail;
    std::optional<CheckResult> empty_w_fail;
    for (const auto& W : nd_subsets) {
        CheckResult c9 = check_nde_defined(m, X, Z, Y, W);
        if (!c9.ok) {
            if (W.empty()) empty_w_fail = c9;
            continue;
        }
        any_w_defined = true;
        Dag d3 = surgery(g, Plan{{X, IdleRegime{}}, {Z, ConditionalRegime{sorted_unique(W), {}}}});
        Dag dia = nde_union_diagram(g, X, Z, W);
        for (const auto& L1 : nd_subsets) {
            if (!contains_all(to_set(L1), W)) continue;  // keep W inside L1 when searching
            RoleSets roles;
            roles.W = W;
            roles.L1 = L1;
            NodeSet cond3{X};
            cond3.insert(W.begin(), W.end());
            cond3.insert(L1.begin(), L1.end());
            CheckResult c3 = checked_dsep(d3, {Y}, {sigma_name(X)}, cond3, "obs-nde:3");
            if (!c3.ok) {
                if (!first_fail) first_fail = c3;
                continue;
            }
            for (const auto& L2 : l2_subsets) {
                NodeSet cond4{X, Z};
                cond4.insert(L1.begin(), L1.end());
                cond4.insert(L2.begin(), L2.end());
                CheckResult c4 = checked_dsep(dia, {Y}, {sigma_name(Z)}, cond4, "obs-nde:4");
                if (!c4.ok) {
                    if (!first_fail) first_fail = c4;
                    continue;
                }
                roles.L2 = L2;
                for (const auto& S : nd_subsets) {
                    CheckResult c5 = check_zx_backdoor(g, X, Z, W, S);
                    if (!c5.ok) {
                        if (!first_fail) first_fail = c5;
                        continue;
                    }
                    roles.S = S;
                    CheckResult all = check_nde_roles(m, X, Z, Y, roles);
                    if (all.ok) return NdeResolution{roles};
                    if (!first_fail) first_fail = all;
                }
            }
        }
    }

    if (!any_w_defined) {
        if (!empty_w_fail) empty_w_fail = check_nde_defined(m, X, Z, Y, {});
        // Some latent W may still make the natural regime well defined; then
        // the effect exists but is not identifiable from observables.
        std::vector<NodeId> full_pool;
        for (const auto& v : g.chance_nodes())
            if (!forbid.count(v) && !dex.count(v) && !dez.count(v)) full_pool.push_back(v);
        for (const auto& W : subsets_by_size(full_pool, full_pool.size())) {
            if (check_nde_defined(m, X, Z, Y, W).ok) {
                return failure(Verdict::NotIdentified, *empty_w_fail);
            }
        }
        return failure(Verdict::NotDefined, *empty_w_fail);
    }
    if (first_fail) return failure(Verdict::NotIdentified, *first_fail);
    CheckResult fallback{false, "obs-nde:no-admissible-roles", std::nullopt};
    return failure(Verdict::NotIdentified, fallback);
}

inline std::vector<std::string> nde_formula_strings(const RoleSets& roles) {
    std::string l1 = roles.L1.empty() ? "" : "l1";
    std::string l2 = roles.L2.empty() ? "" : "l2";
    std::string w = roles.W.empty() ? "" : "w";
    std::string s = roles.S.empty() ? "" : "s";
    std::vector<std::string> out;
    out.push_back(factor_string("y", {l1, l2, "z", "x"}));
    out.push_back(factor_string("z", {w, s, "x*"}));
    if (!roles.L2.empty()) out.push_back(factor_string("l2", {"x", l1}));
    if (!roles.S.empty()) out.push_back(factor_string("s", {w}));
    if (!roles.L1.empty()) out.push_back(factor_string("l1", {}));
    return out;
}

}  // namespace detail

// Verifies conditions 1-5 plus (9) and evaluates the five-factor
// observational formula for p(y; sigma_X = s_x, sigma_Z = d_{W,x*}).
inline IdentificationResult identify_nde_observational(const Model& m, const CausalQuery& q,
                                                       std::size_t max_adjust = kDefaultMaxAdjustSize) {
    detail::check_query_nodes(m, q);
    auto resolved = detail::resolve_nde_roles(m, q, max_adjust);
    if (std::holds_alternative<IdentificationResult>(resolved))
        return std::get<IdentificationResult>(resolved);
    RoleSets roles = std::get<detail::NdeResolution>(resolved).roles;

    ObservationalView view(m);
    Table dist = eval_nde_formula(view, q.treatment, *q.mediator, q.response, roles, q.x, q.x_star);

    IdentificationResult r;
    r.verdict = Verdict::Identified;
    r.identified = true;
    r.distribution = dist;
    r.value = expectation(dist, m.var(q.response));
    r.used_roles = roles;
    r.condition_note = "obs-nde:1-5,(9)";
    r.formula = detail::nde_formula_strings(roles);
    return r;
}

// Natural direct effect: contrast of the ingredient at treatments x and x*,
// both with the mediator arising under the x* baseline.
inline IdentificationResult nde(const Model& m, const CausalQuery& q,
                                std::size_t max_adjust = kDefaultMaxAdjustSize) {
    IdentificationResult r = identify_nde_observational(m, q, max_adjust);
    if (!r.identified) return r;
    ObservationalView view(m);
    Table arm_x = *r.distribution;
    Table arm_xs = eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                    q.x_star, q.x_star);
    const Variable& yvar = m.var(q.response);
    r.value = expectation(arm_x, yvar) - expectation(arm_xs, yvar);
    return r;
}

// Natural indirect effect: treat at x throughout, switch the mediator's
// baseline from x to x*.
inline IdentificationResult nie(const Model& m, const CausalQuery& q,
                                std::size_t max_adjust = kDefaultMaxAdjustSize) {
    IdentificationResult r = identify_nde_observational(m, q, max_adjust);
    if (!r.identified) return r;
    ObservationalView view(m);
    Table arm_x = eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                   q.x, q.x);
    Table arm_xs = *r.distribution;
    const Variable& yvar = m.var(q.response);
    r.value = expectation(arm_x, yvar) - expectation(arm_xs, yvar);
    r.distribution = arm_x;
    return r;
}

inline IdentificationResult identify(const Model& m, const CausalQuery& q,
                                     std::size_t max_adjust = kDefaultMaxAdjustSize) {
    switch (q.kind) {
        case QueryKind::Ace: return ace(m, q, max_adjust);
        case QueryKind::Cde: return cde(m, q, max_adjust);
        case QueryKind::Sde: return sde(m, q, max_adjust);
        case QueryKind::Nde: return nde(m, q, max_adjust);
        case QueryKind::Nie: return nie(m, q, max_adjust);
        case QueryKind::Seq: return identify_seq(m, q, max_adjust);
    }
    throw Error("unknown query kind");
}

// ---------------------------------------------------------------------------
// No-interaction check (numeric)
// ---------------------------------------------------------------------------

struct InteractionReport {
    bool no_interaction = false;
    double max_deviation = 0.0;
};

// Numeric test of the no-interaction assumption: the controlled direct
// effect must not depend on the mediator value, for any treatment contrast.
inline InteractionReport check_no_interaction(const Model& m, const NodeId& X, const NodeId& Z,
                                              const NodeId& Y, double tol,
                                              std::size_t max_adjust = kDefaultMaxAdjustSize) {
    CausalQuery q;
    q.kind = QueryKind::Cde;
    q.treatment = X;
    q.response = Y;
    q.mediator = Z;
    q.mediator_value = 0;
    auto resolved = detail::resolve_mediation_plan(m, q, AtomicRegime{0}, {}, max_adjust, false);
    if (std::holds_alternative<IdentificationResult>(resolved))
        throw NotIdentifiedError("check_no_interaction: controlled direct effect is not identified");
    auto plan = std::get<detail::MediationPlan>(resolved);

    ObservationalView view(m);
    const Variable& yvar = m.var(Y);
    int zcard = m.card(Z);
    int xcard = m.card(X);

    // cde[z][x] = E(Y; do X=x, do Z=z)
    std::vector<std::vector<double>> mean(zcard, std::vector<double>(xcard, 0.0));
    for (int z = 0; z < zcard; ++z) {
        for (int x = 0; x < xcard; ++x) {
            std::vector<SeqStep> steps = plan.steps_x;
            steps[0].regime = AtomicRegime{x};
            steps[1].regime = AtomicRegime{z};
            mean[z][x] = expectation(eval_g_formula(view, steps, Y), yvar);
        }
    }

    double max_dev = 0.0;
    for (int x = 0; x < xcard; ++x)
        for (int xs = 0; xs < x; ++xs)
            for (int z = 0; z < zcard; ++z)
                for (int zp = 0; zp < z; ++zp) {
                    double dev = std::abs((mean[z][x] - mean[z][xs]) - (mean[zp][x] - mean[zp][xs]));
                    max_dev = std::max(max_dev, dev);
                }
    return InteractionReport{max_dev <= tol, max_dev};
}

// ---------------------------------------------------------------------------
// Oracle evaluation and the comparison harness
// ---------------------------------------------------------------------------

struct OracleAnswer {
    double value = 0.0;
    std::vector<Table> arms;  // per-arm intervention distributions of Y
};

namespace detail {

inline Table oracle_marginal(const Model& m, const Plan& plan, const NodeId& Y) {
    Model surgered = oracle_intervene(m, plan);
    return marginal(surgered, {Y});
}

// W used for the oracle's natural regime: the query's W when given, else the
// smallest W satisfying condition (9), latent candidates included.
inline std::vector<NodeId> oracle_nde_w(const Model& m, const CausalQuery& q) {
    if (!q.auto_search || !q.roles.W.empty()) return q.roles.W;
    NodeSet forbid{q.treatment, *q.mediator, q.response};
    NodeSet dex = descendants(m.dag, q.treatment);
    NodeSet dez = descendants(m.dag, *q.mediator);
    std::vector<NodeId> pool;
    for (const auto& v : m.dag.chance_nodes()) {
        if (forbid.count(v) || dex.count(v) || dez.count(v)) continue;
        pool.push_back(v);
    }
    for (const auto& W : subsets_by_size(pool, pool.size())) {
        if (check_nde_defined(m, q.treatment, *q.mediator, q.response, W).ok) return W;
    }
    throw NotIdentifiedError("natural effect is not defined: no W satisfies condition (9)");
}

}  // namespace detail

// Ground-truth evaluation of a query by truncated factorization on the full
// model (latents included). `w_override` pins the natural regime's W so a
// comparison can mirror the identified route.
inline OracleAnswer oracle_evaluate(const Model& m, const CausalQuery& q,
                                    const std::vector<NodeId>* w_override = nullptr) {
    const NodeId& Y = q.response;
    const Variable& yvar = m.var(Y);
    OracleAnswer ans;

    switch (q.kind) {
        case QueryKind::Ace: {
            ans.arms.push_back(detail::oracle_marginal(m, Plan{{q.treatment, AtomicRegime{q.x}}}, Y));
            ans.arms.push_back(
                detail::oracle_marginal(m, Plan{{q.treatment, AtomicRegime{q.x_star}}}, Y));
            ans.value = expectation(ans.arms[0], yvar) - expectation(ans.arms[1], yvar);
            return ans;
        }
        case QueryKind::Cde: {
            if (!q.mediator_value) throw Error("cde query needs the mediator value z");
            Plan px{{q.treatment, AtomicRegime{q.x}}, {*q.mediator, AtomicRegime{*q.mediator_value}}};
            Plan ps{{q.treatment, AtomicRegime{q.x_star}},
                    {*q.mediator, AtomicRegime{*q.mediator_value}}};
            ans.arms.push_back(detail::oracle_marginal(m, px, Y));
            ans.arms.push_back(detail::oracle_marginal(m, ps, Y));
            ans.value = expectation(ans.arms[0], yvar) - expectation(ans.arms[1], yvar);
            return ans;
        }
        case QueryKind::Sde: {
            if (!q.mediator_regime) throw Error("sde query needs the mediator regime d_W");
            Plan px{{q.treatment, AtomicRegime{q.x}}, {*q.mediator, *q.mediator_regime}};
            Plan ps{{q.treatment, AtomicRegime{q.x_star}}, {*q.mediator, *q.mediator_regime}};
            ans.arms.push_back(detail::oracle_marginal(m, px, Y));
            ans.arms.push_back(detail::oracle_marginal(m, ps, Y));
            ans.value = expectation(ans.arms[0], yvar) - expectation(ans.arms[1], yvar);
            return ans;
        }
        case QueryKind::Nde: {
            std::vector<NodeId> W = w_override ? *w_override : detail::oracle_nde_w(m, q);
            RandomRegime d_star = natural_regime_oracle(
                m, NaturalRegimeSpec{*q.mediator, q.treatment, W, q.x_star});
            ans.arms.push_back(detail::oracle_marginal(
                m, Plan{{q.treatment, AtomicRegime{q.x}}, {*q.mediator, d_star}}, Y));
            ans.arms.push_back(detail::oracle_marginal(
                m, Plan{{q.treatment, AtomicRegime{q.x_star}}, {*q.mediator, d_star}}, Y));
            ans.value = expectation(ans.arms[0], yvar) - expectation(ans.arms[1], yvar);
            return ans;
        }
        case QueryKind::Nie: {
            std::vector<NodeId> W = w_override ? *w_override : detail::oracle_nde_w(m, q);
            RandomRegime d_x = natural_regime_oracle(
                m, NaturalRegimeSpec{*q.mediator, q.treatment, W, q.x});
            RandomRegime d_star = natural_regime_oracle(
                m, NaturalRegimeSpec{*q.mediator, q.treatment, W, q.x_star});
            ans.arms.push_back(detail::oracle_marginal(
                m, Plan{{q.treatment, AtomicRegime{q.x}}, {*q.mediator, d_x}}, Y));
            ans.arms.push_back(detail::oracle_marginal(
                m, Plan{{q.treatment, AtomicRegime{q.x}}, {*q.mediator, d_star}}, Y));
            ans.value = expectation(ans.arms[0], yvar) - expectation(ans.arms[1], yvar);
            return ans;
        }
        case QueryKind::Seq: {
            Plan plan;
            for (const auto& s : q.steps) plan[s.target] = s.regime;
            ans.arms.push_back(detail::oracle_marginal(m, plan, Y));
            ans.value = expectation(ans.arms[0], yvar);
            return ans;
        }
    }
    throw Error("unknown query kind");
}

// The identified-route per-arm distributions matching oracle_evaluate's arm
// order, re-evaluated with the roles the identification chose.
inline std::vector<Table> identified_arms(const Model& m, const CausalQuery& q,
                                          const IdentificationResult& r) {
    ObservationalView view(m);
    switch (q.kind) {
        case QueryKind::Ace:
            return {eval_backdoor(view, q.treatment, q.response, r.used_roles.C, q.x),
                    eval_backdoor(view, q.treatment, q.response, r.used_roles.C, q.x_star)};
        case QueryKind::Cde:
        case QueryKind::Sde: {
            Regime med = q.kind == QueryKind::Cde ? Regime{AtomicRegime{*q.mediator_value}}
                                                  : Regime{*q.mediator_regime};
            std::vector<SeqStep> steps{{q.treatment, AtomicRegime{q.x}, r.used_roles.L1},
                                       {*q.mediator, med, r.used_roles.L2}};
            Table ax = eval_g_formula(view, steps, q.response);
            steps[0].regime = AtomicRegime{q.x_star};
            Table as = eval_g_formula(view, steps, q.response);
            return {ax, as};
        }
        case QueryKind::Nde:
            return {eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                     q.x, q.x_star),
                    eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                     q.x_star, q.x_star)};
        case QueryKind::Nie:
            return {eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                     q.x, q.x),
                    eval_nde_formula(view, q.treatment, *q.mediator, q.response, r.used_roles,
                                     q.x, q.x_star)};
        case QueryKind::Seq: {
            std::vector<SeqStep> steps = r.resolved_steps.empty() ? q.steps : r.resolved_steps;
            return {eval_g_formula(view, steps, q.response)};
        }
    }
    throw Error("unknown query kind");
}

struct OracleComparison {
    bool skipped = false;
    IdentificationResult result;
    double value_deviation = 0.0;
    double dist_deviation = 0.0;
};

// Evaluates the identified observational formula and the truncated-
// factorization oracle side by side, reporting worst-case deviations.
inline OracleComparison compare_with_oracle(const Model& m, const CausalQuery& q,
                                            std::size_t max_adjust = kDefaultMaxAdjustSize) {
    OracleComparison cmp;
    cmp.result = identify(m, q, max_adjust);
    if (!cmp.result.identified) {
        cmp.skipped = true;
        return cmp;
    }
    std::vector<Table> id_arms = identified_arms(m, q, cmp.result);
    OracleAnswer oracle = oracle_evaluate(m, q, &cmp.result.used_roles.W);
    if (id_arms.size() != oracle.arms.size()) throw Error("oracle arm mismatch");
    for (std::size_t i = 0; i < id_arms.size(); ++i) {
        if (id_arms[i].values.size() != oracle.arms[i].values.size())
            throw Error("oracle distribution size mismatch");
        for (std::size_t j = 0; j < id_arms[i].values.size(); ++j)
            cmp.dist_deviation = std::max(
                cmp.dist_deviation, std::abs(id_arms[i].values[j] - oracle.arms[i].values[j]));
    }
    cmp.value_deviation = std::abs(*cmp.result.value - oracle.value);
    return cmp;
}

}  // namespace regimecalc
