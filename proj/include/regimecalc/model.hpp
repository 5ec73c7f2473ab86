#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "regimecalc/common.hpp"
#include "regimecalc/graph.hpp"

namespace regimecalc {

// Discrete variable with value codes 0..card-1. `numeric` carries the value
// each code contributes to expectations; defaults to the code itself.
struct Variable {
    NodeId id;
    int card = 2;
    std::vector<double> numeric;
    bool explicit_numeric = false;

    static Variable make(const NodeId& id, int card) {
        if (card < 2) throw Error("variable " + id + " needs cardinality >= 2");
        Variable v;
        v.id = id;
        v.card = card;
        v.numeric.resize(card);
        for (int i = 0; i < card; ++i) v.numeric[i] = i;
        return v;
    }
};

namespace detail {

// Mixed-radix counter over `cards`, last position varying fastest. Returns
// false once the counter wraps around to all zeros.
inline bool next_assignment(std::vector<int>& a, const std::vector<int>& cards) {
    for (std::size_t i = a.size(); i-- > 0;) {
        if (++a[i] < cards[i]) return true;
        a[i] = 0;
    }
    return false;
}

inline std::size_t flat_index(const std::vector<int>& a, const std::vector<int>& cards) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < a.size(); ++i) idx = idx * cards[i] + a[i];
    return idx;
}

inline std::size_t table_size(const std::vector<int>& cards) {
    std::size_t n = 1;
    for (int c : cards) n *= static_cast<std::size_t>(c);
    return n;
}

}  // namespace detail

// Conditional probability table p(target | parents). Rows are indexed by the
// parent assignment with the last-listed parent varying fastest; within a row
// entries follow the target's value codes.
struct Cpt {
    NodeId target;
    int target_card = 0;
    std::vector<NodeId> parents;
    std::vector<int> parent_cards;
    std::vector<double> table;

    std::size_t rows() const { return detail::table_size(parent_cards); }

    double p(int value, const std::vector<int>& parent_values) const {
        std::size_t row = detail::flat_index(parent_values, parent_cards);
        return table[row * target_card + value];
    }

    void validate() const {
        if (target_card < 2) throw Error("cpt " + target + ": target cardinality must be >= 2");
        if (parents.size() != parent_cards.size())
            throw Error("cpt " + target + ": parent card list mismatch");
        if (table.size() != rows() * static_cast<std::size_t>(target_card))
            throw Error("cpt " + target + ": table size does not match dimensions");
        for (std::size_t r = 0; r < rows(); ++r) {
            double sum = 0.0;
            for (int v = 0; v < target_card; ++v) {
                double p = table[r * target_card + v];
                if (p < 0.0) throw Error("cpt " + target + ": negative entry");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kNormalizationTol)
                throw Error("cpt " + target + ": row does not sum to 1");
        }
    }
};

// Dense nonnegative table over an ordered scope; row-major with the last
// scope variable varying fastest. Carrier for joints, marginals and
// intervention distributions.
struct Table {
    std::vector<NodeId> scope;
    std::vector<int> cards;
    std::vector<double> values;

    static Table zeros(std::vector<NodeId> scope, std::vector<int> cards) {
        Table t;
        t.scope = std::move(scope);
        t.cards = std::move(cards);
        t.values.assign(detail::table_size(t.cards), 0.0);
        return t;
    }

    std::size_t size() const { return values.size(); }

    double& at(const std::vector<int>& assignment) {
        return values[detail::flat_index(assignment, cards)];
    }
    double at(const std::vector<int>& assignment) const {
        return values[detail::flat_index(assignment, cards)];
    }

    double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

    bool is_normalized(double tol = kNormalizationTol) const {
        return std::abs(sum() - 1.0) <= tol;
    }

    void normalize() {
        double s = sum();
        if (s < kPositivityEps) throw PositivityViolation("cannot normalize an all-zero table");
        for (double& v : values) v /= s;
    }

    // Sums out everything not in `keep`; the result scope preserves the order
    // in `keep` (which must be a subset of this scope).
    Table marginalize(const std::vector<NodeId>& keep) const {
        std::vector<std::size_t> positions;
        std::vector<int> keep_cards;
        for (const auto& v : keep) {
            auto it = std::find(scope.begin(), scope.end(), v);
            if (it == scope.end()) throw Error("marginalize: " + v + " not in scope");
            positions.push_back(static_cast<std::size_t>(it - scope.begin()));
            keep_cards.push_back(cards[it - scope.begin()]);
        }
        Table out = Table::zeros(keep, keep_cards);
        std::vector<int> a(scope.size(), 0);
        std::vector<int> sub(keep.size(), 0);
        std::size_t flat = 0;
        do {
            for (std::size_t i = 0; i < positions.size(); ++i) sub[i] = a[positions[i]];
            out.at(sub) += values[flat];
            ++flat;
        } while (detail::next_assignment(a, cards));
        return out;
    }
};

// Expectation of a normalized single-variable table under the value codes.
inline double expectation(const Table& t) {
    if (t.scope.size() != 1) throw Error("expectation: table must have a single variable scope");
    if (!t.is_normalized()) throw Error("expectation: table is not normalized");
    double e = 0.0;
    for (int v = 0; v < t.cards[0]; ++v) e += v * t.values[v];
    return e;
}

inline double expectation(const Table& t, const Variable& var) {
    if (t.scope.size() != 1 || t.scope[0] != var.id)
        throw Error("expectation: table scope does not match variable");
    if (!t.is_normalized()) throw Error("expectation: table is not normalized");
    double e = 0.0;
    for (int v = 0; v < t.cards[0]; ++v) e += var.numeric[v] * t.values[v];
    return e;
}

// A DAG over chance nodes plus one variable and one CPT per node. Latent
// nodes are ordinary members; hiding them from the analyst is the
// ObservationalView's job.
struct Model {
    Dag dag;
    std::map<NodeId, Variable> vars;
    std::map<NodeId, Cpt> cpts;

    int card(const NodeId& v) const {
        auto it = vars.find(v);
        if (it == vars.end()) throw Error("unknown variable: " + v);
        return it->second.card;
    }

    const Variable& var(const NodeId& v) const {
        auto it = vars.find(v);
        if (it == vars.end()) throw Error("unknown variable: " + v);
        return it->second;
    }

    void validate() const {
        for (const auto& v : dag.nodes()) {
            if (dag.kind(v) != NodeKind::Chance)
                throw Error("model graphs hold chance nodes only; found indicator " + v);
            if (!vars.count(v)) throw Error("node " + v + " has no variable");
            auto it = cpts.find(v);
            if (it == cpts.end()) throw Error("node " + v + " has no cpt");
            const Cpt& c = it->second;
            c.validate();
            if (c.target != v) throw Error("cpt target mismatch for " + v);
            if (c.target_card != vars.at(v).card) throw Error("cpt cardinality mismatch for " + v);
            NodeSet cpt_parents(c.parents.begin(), c.parents.end());
            if (cpt_parents.size() != c.parents.size())
                throw Error("cpt " + v + ": duplicate parent");
            if (cpt_parents != dag.parents(v))
                throw Error("cpt " + v + ": parent list disagrees with graph");
            for (std::size_t i = 0; i < c.parents.size(); ++i)
                if (c.parent_cards[i] != vars.at(c.parents[i]).card)
                    throw Error("cpt " + v + ": parent cardinality mismatch");
        }
        if (vars.size() != dag.num_nodes() || cpts.size() != dag.num_nodes())
            throw Error("model has variables or cpts for unknown nodes");
    }
};

namespace detail {

// Iterates full joint assignments of a model in a fixed node order and
// yields each assignment's probability; CPT parent positions are resolved
// once up front.
class JointEnumerator {
public:
    explicit JointEnumerator(const Model& m) : model_(m) {
        order_ = m.dag.nodes();  // sorted by name
        for (std::size_t i = 0; i < order_.size(); ++i) pos_[order_[i]] = i;
        for (const auto& v : order_) {
            cards_.push_back(m.card(v));
            const Cpt& c = m.cpts.at(v);
            std::vector<std::size_t> ppos;
            for (const auto& p : c.parents) ppos.push_back(pos_.at(p));
            parent_pos_.push_back(std::move(ppos));
        }
    }

    const std::vector<NodeId>& order() const { return order_; }
    const std::vector<int>& cards() const { return cards_; }

    double prob(const std::vector<int>& assignment) const {
        double p = 1.0;
        for (std::size_t i = 0; i < order_.size(); ++i) {
            const Cpt& c = model_.cpts.at(order_[i]);
            std::vector<int> pv(parent_pos_[i].size());
            for (std::size_t j = 0; j < pv.size(); ++j) pv[j] = assignment[parent_pos_[i][j]];
            p *= c.p(assignment[i], pv);
            if (p == 0.0) return 0.0;
        }
        return p;
    }

private:
    const Model& model_;
    std::vector<NodeId> order_;
    std::vector<int> cards_;
    std::map<NodeId, std::size_t> pos_;
    std::vector<std::vector<std::size_t>> parent_pos_;
};

}  // namespace detail

// Probability of one full assignment: the product of CPT entries.
inline double joint_prob(const Model& m, const std::map<NodeId, int>& assignment) {
    double p = 1.0;
    for (const auto& v : m.dag.nodes()) {
        auto it = assignment.find(v);
        if (it == assignment.end()) throw Error("joint_prob: missing value for " + v);
        if (it->second < 0 || it->second >= m.card(v))
            throw Error("joint_prob: value out of range for " + v);
        const Cpt& c = m.cpts.at(v);
        std::vector<int> pv;
        pv.reserve(c.parents.size());
        for (const auto& par : c.parents) pv.push_back(assignment.at(par));
        p *= c.p(it->second, pv);
    }
    return p;
}

// Exact marginal over `vars` (sorted scope), summing out everything else,
// latent nodes included.
inline Table marginal(const Model& m, const std::vector<NodeId>& vars) {
    std::vector<NodeId> scope(vars);
    std::sort(scope.begin(), scope.end());
    scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
    std::vector<int> scope_cards;
    for (const auto& v : scope) scope_cards.push_back(m.card(v));

    detail::JointEnumerator je(m);
    std::vector<std::size_t> positions;
    for (const auto& v : scope) {
        auto it = std::find(je.order().begin(), je.order().end(), v);
        if (it == je.order().end()) throw Error("marginal: " + v + " not in model");
        positions.push_back(static_cast<std::size_t>(it - je.order().begin()));
    }

    Table out = Table::zeros(scope, scope_cards);
    std::vector<int> a(je.order().size(), 0);
    std::vector<int> sub(scope.size(), 0);
    do {
        double p = je.prob(a);
        if (p != 0.0) {
            for (std::size_t i = 0; i < positions.size(); ++i) sub[i] = a[positions[i]];
            out.at(sub) += p;
        }
    } while (detail::next_assignment(a, je.cards()));
    return out;
}

// Exact conditional p(target | given): the marginal over target ∪ given,
// sliced at `given` and renormalized.
inline Table conditional(const Model& m, const std::vector<NodeId>& target,
                         const std::map<NodeId, int>& given) {
    std::vector<NodeId> all(target);
    for (const auto& [v, _] : given) {
        if (std::find(target.begin(), target.end(), v) != target.end())
            throw Error("conditional: " + v + " appears as both target and given");
        all.push_back(v);
    }
    Table joint = marginal(m, all);

    std::vector<NodeId> tscope(target);
    std::sort(tscope.begin(), tscope.end());
    std::vector<int> tcards;
    for (const auto& v : tscope) tcards.push_back(m.card(v));
    Table out = Table::zeros(tscope, tcards);

    std::vector<int> a(joint.scope.size(), 0);
    std::vector<int> sub(tscope.size(), 0);
    double slice = 0.0;
    do {
        bool match = true;
        for (std::size_t i = 0; i < joint.scope.size(); ++i) {
            auto it = given.find(joint.scope[i]);
            if (it != given.end() && it->second != a[i]) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        double p = joint.at(a);
        slice += p;
        for (std::size_t i = 0; i < tscope.size(); ++i) {
            auto it = std::find(joint.scope.begin(), joint.scope.end(), tscope[i]);
            sub[i] = a[it - joint.scope.begin()];
        }
        out.at(sub) += p;
    } while (detail::next_assignment(a, joint.cards));

    if (slice < kPositivityEps)
        throw PositivityViolation("conditioning event has probability below 1e-12");
    for (double& v : out.values) v /= slice;
    return out;
}

// A dataset of full rows; latent columns are carried but flagged.
struct Dataset {
    std::vector<NodeId> columns;
    std::vector<bool> latent;
    std::vector<std::vector<int>> rows;

    std::size_t column_index(const NodeId& v) const {
        auto it = std::find(columns.begin(), columns.end(), v);
        if (it == columns.end()) throw Error("dataset has no column " + v);
        return static_cast<std::size_t>(it - columns.begin());
    }

    bool has_column(const NodeId& v) const {
        return std::find(columns.begin(), columns.end(), v) != columns.end();
    }
};

namespace detail {

// mt19937_64-backed uniform in [0,1) built from the top 53 bits, so sampled
// datasets are bit-stable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    double uniform() { return (gen_() >> 11) * (1.0 / 9007199254740992.0); }
    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

inline int draw_categorical(Rng& rng, const double* probs, int card) {
    double u = rng.uniform();
    double acc = 0.0;
    for (int v = 0; v < card; ++v) {
        acc += probs[v];
        if (u < acc) return v;
    }
    return card - 1;
}

}  // namespace detail

// Ancestral sampling in topological order; deterministic for a given seed.
inline Dataset sample(const Model& m, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw Error("sample: n must be >= 1");
    std::vector<NodeId> order = topological_order(m.dag);
    Dataset out;
    out.columns = order;
    for (const auto& v : order) out.latent.push_back(m.dag.latent(v));

    std::map<NodeId, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

    detail::Rng rng(seed);
    out.rows.reserve(n);
    std::vector<int> row(order.size(), 0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Cpt& c = m.cpts.at(order[i]);
            std::vector<int> pv(c.parents.size());
            for (std::size_t j = 0; j < pv.size(); ++j) pv[j] = row[pos.at(c.parents[j])];
            std::size_t base = detail::flat_index(pv, c.parent_cards) * c.target_card;
            row[i] = detail::draw_categorical(rng, c.table.data() + base, c.target_card);
        }
        out.rows.push_back(row);
    }
    return out;
}

// Maximum-likelihood CPTs with additive smoothing. Cardinalities are taken
// as 1 + the maximum observed code (floor 2) unless `known_cards` pins them.
inline Model fit_cpts(const Dataset& data, const Dag& g, double smoothing,
                      std::vector<std::string>* warnings = nullptr,
                      const std::map<NodeId, int>* known_cards = nullptr) {
    if (smoothing < 0) throw Error("fit_cpts: smoothing must be >= 0");
    Model m;
    for (const auto& v : g.nodes()) {
        if (g.kind(v) != NodeKind::Chance) throw Error("fit_cpts: indicator node " + v);
        if (g.latent(v)) throw Error("fit_cpts: latent node " + v + " cannot be fit from data");
        if (!data.has_column(v)) throw Error("fit_cpts: no data column for node " + v);
        m.dag.add_node(v, NodeKind::Chance, false);
    }
    for (const auto& [from, to] : g.edges()) m.dag.add_edge(from, to);

    std::map<NodeId, int> cards;
    for (const auto& v : g.nodes()) {
        std::size_t col = data.column_index(v);
        int maxv = 1;
        for (const auto& row : data.rows) {
            if (row[col] < 0) throw Error("fit_cpts: negative code in column " + v);
            maxv = std::max(maxv, row[col]);
        }
        cards[v] = maxv + 1;
        if (known_cards) {
            auto it = known_cards->find(v);
            if (it != known_cards->end()) {
                if (it->second < cards[v])
                    throw Error("fit_cpts: column " + v + " has codes beyond its cardinality");
                cards[v] = it->second;
            }
        }
        m.vars[v] = Variable::make(v, cards[v]);
    }

    for (const auto& v : g.nodes()) {
        Cpt c;
        c.target = v;
        c.target_card = cards[v];
        for (const auto& p : g.parents(v)) {
            c.parents.push_back(p);
            c.parent_cards.push_back(cards[p]);
        }
        std::size_t nrows = c.rows();
        std::vector<double> counts(nrows * c.target_card, 0.0);
        std::size_t col = data.column_index(v);
        std::vector<std::size_t> pcols;
        for (const auto& p : c.parents) pcols.push_back(data.column_index(p));
        std::vector<int> pv(c.parents.size());
        for (const auto& row : data.rows) {
            for (std::size_t j = 0; j < pcols.size(); ++j) pv[j] = row[pcols[j]];
            counts[detail::flat_index(pv, c.parent_cards) * c.target_card + row[col]] += 1.0;
        }
        c.table.resize(counts.size());
        for (std::size_t r = 0; r < nrows; ++r) {
            double total = 0.0;
            for (int val = 0; val < c.target_card; ++val) total += counts[r * c.target_card + val];
            if (total == 0.0 && smoothing == 0.0) {
                for (int val = 0; val < c.target_card; ++val)
                    c.table[r * c.target_card + val] = 1.0 / c.target_card;
                if (warnings)
                    warnings->push_back("cpt " + v + ": empty stratum " + std::to_string(r) +
                                        " left uniform");
                continue;
            }
            double denom = total + smoothing * c.target_card;
            for (int val = 0; val < c.target_card; ++val)
                c.table[r * c.target_card + val] = (counts[r * c.target_card + val] + smoothing) / denom;
        }
        m.cpts[v] = std::move(c);
    }
    m.validate();
    return m;
}

// Analyst-side access to a model: only non-latent quantities are reachable.
// The joint over observables is computed once at construction, so reads are
// cheap and the view stays immutable.
class ObservationalView {
public:
    explicit ObservationalView(const Model& m) : model_(&m) {
        joint_ = marginal(m, m.dag.observable_nodes());
    }

    const Model& model() const { return *model_; }
    const Dag& dag() const { return model_->dag; }

    bool observable(const NodeId& v) const {
        return model_->dag.has_node(v) && !model_->dag.latent(v) &&
               model_->dag.kind(v) == NodeKind::Chance;
    }

    void require_observable(const NodeId& v) const {
        model_->dag.require(v);
        if (!observable(v))
            throw LatentAccessError("observational access to latent node " + v);
    }

    Table marginal_of(const std::vector<NodeId>& vars) const {
        for (const auto& v : vars) require_observable(v);
        std::vector<NodeId> scope(vars);
        std::sort(scope.begin(), scope.end());
        scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
        return joint_.marginalize(scope);
    }

    Table conditional_of(const std::vector<NodeId>& target,
                         const std::map<NodeId, int>& given) const {
        for (const auto& v : target) require_observable(v);
        std::map<NodeId, int> g(given);
        std::vector<NodeId> all(target);
        for (const auto& [v, val] : g) {
            require_observable(v);
            all.push_back(v);
        }
        Table joint = marginal_of(all);
        std::vector<NodeId> tscope(target);
        std::sort(tscope.begin(), tscope.end());
        std::vector<int> tcards;
        for (const auto& v : tscope) tcards.push_back(model_->card(v));
        Table out = Table::zeros(tscope, tcards);
        std::vector<int> a(joint.scope.size(), 0);
        std::vector<int> sub(tscope.size(), 0);
        double slice = 0.0;
        do {
            bool match = true;
            for (std::size_t i = 0; i < joint.scope.size(); ++i) {
                auto it = g.find(joint.scope[i]);
                if (it != g.end() && it->second != a[i]) {
                    match = false;
                    break;
                }
            }
            if (!match) continue;
            double p = joint.at(a);
            slice += p;
            for (std::size_t i = 0; i < tscope.size(); ++i) {
                auto it = std::find(joint.scope.begin(), joint.scope.end(), tscope[i]);
                sub[i] = a[it - joint.scope.begin()];
            }
            out.at(sub) += p;
        } while (detail::next_assignment(a, joint.cards));
        if (slice < kPositivityEps)
            throw PositivityViolation("conditioning event has probability below 1e-12");
        for (double& v : out.values) v /= slice;
        return out;
    }

    const Table& observable_joint() const { return joint_; }

private:
    const Model* model_;
    Table joint_;
};

}  // namespace regimecalc
