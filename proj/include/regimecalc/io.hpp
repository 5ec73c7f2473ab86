#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "regimecalc/common.hpp"
#include "regimecalc/graph.hpp"
#include "regimecalc/identify.hpp"
#include "regimecalc/model.hpp"
#include "regimecalc/regimes.hpp"

namespace regimecalc {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Model files
//
// {"variables":[{"name":"X","card":2,"latent":false},...],
//  "edges":[["X","V"],...],
//  "cpts":{"V":{"parents":["X"],"table":[[...],[...]]},...}}
//
// CPT rows are parent assignments with the last-listed parent varying
// fastest. Writing is canonical: variables and cpt keys sorted by name,
// edges sorted lexicographically, two-space indentation.
// ---------------------------------------------------------------------------

inline Model model_from_json(const json& j) {
    Model m;
    if (!j.is_object() || !j.contains("variables") || !j.contains("edges") || !j.contains("cpts"))
        throw FormatError("model file needs variables, edges and cpts");
    try {
        for (const auto& v : j.at("variables")) {
            std::string name = v.at("name").get<std::string>();
            int card = v.at("card").get<int>();
            bool latent = v.value("latent", false);
            Variable var = Variable::make(name, card);
            if (v.contains("values")) {
                auto vals = v.at("values").get<std::vector<double>>();
                if (static_cast<int>(vals.size()) != card)
                    throw FormatError("variable " + name + ": values length must equal card");
                var.numeric = vals;
                var.explicit_numeric = true;
            }
            m.dag.add_node(name, NodeKind::Chance, latent);
            m.vars[name] = std::move(var);
        }
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) throw FormatError("edges must be [from,to] pairs");
            m.dag.add_edge(e.at(0).get<std::string>(), e.at(1).get<std::string>());
        }
        for (const auto& [name, cj] : j.at("cpts").items()) {
            m.dag.require(name);
            Cpt c;
            c.target = name;
            c.target_card = m.card(name);
            for (const auto& p : cj.at("parents")) {
                NodeId pid = p.get<std::string>();
                m.dag.require(pid);
                c.parents.push_back(pid);
                c.parent_cards.push_back(m.card(pid));
            }
            const auto& rows = cj.at("table");
            if (!rows.is_array() || rows.size() != c.rows())
                throw FormatError("cpt " + name + ": wrong number of rows");
            for (const auto& row : rows) {
                if (!row.is_array() || static_cast<int>(row.size()) != c.target_card)
                    throw FormatError("cpt " + name + ": wrong row width");
                for (const auto& p : row) c.table.push_back(p.get<double>());
            }
            m.cpts[name] = std::move(c);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model json: ") + e.what());
    }
    m.validate();
    return m;
}

inline json model_to_json(const Model& m) {
    json j;
    j["variables"] = json::array();
    for (const auto& v : m.dag.nodes()) {
        json vj;
        vj["name"] = v;
        vj["card"] = m.card(v);
        vj["latent"] = m.dag.latent(v);
        const Variable& var = m.var(v);
        if (var.explicit_numeric) vj["values"] = var.numeric;
        j["variables"].push_back(vj);
    }
    j["edges"] = json::array();
    for (const auto& [from, to] : m.dag.edges()) j["edges"].push_back(json::array({from, to}));
    j["cpts"] = json::object();
    for (const auto& v : m.dag.nodes()) {
        const Cpt& c = m.cpts.at(v);
        json cj;
        cj["parents"] = c.parents;
        json rows = json::array();
        for (std::size_t r = 0; r < c.rows(); ++r) {
            json row = json::array();
            for (int val = 0; val < c.target_card; ++val)
                row.push_back(c.table[r * c.target_card + val]);
            rows.push_back(row);
        }
        cj["table"] = rows;
        j["cpts"][v] = cj;
    }
    return j;
}

inline std::string model_to_string(const Model& m) { return model_to_json(m).dump(2) + "\n"; }

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open model file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model json: ") + e.what());
    }
    return model_from_json(j);
}

inline void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write model file " + path);
    out << model_to_string(m);
}

// ---------------------------------------------------------------------------
// Regime / query files
// ---------------------------------------------------------------------------

inline json regime_to_json(const Regime& r) {
    json j;
    if (is_idle(r)) {
        j["type"] = "idle";
    } else if (const auto* a = std::get_if<AtomicRegime>(&r)) {
        j["type"] = "atomic";
        j["value"] = a->value;
    } else if (const auto* c = std::get_if<ConditionalRegime>(&r)) {
        j["type"] = "conditional";
        j["given"] = c->cond_set;
        j["map"] = c->map_rows;
    } else if (const auto* d = std::get_if<RandomRegime>(&r)) {
        j["type"] = "random";
        j["given"] = d->cond_set;
        json rows = json::array();
        for (std::size_t row = 0; row < d->dist.rows(); ++row) {
            json one = json::array();
            for (int v = 0; v < d->dist.target_card; ++v)
                one.push_back(d->dist.table[row * d->dist.target_card + v]);
            rows.push_back(one);
        }
        j["table"] = rows;
    }
    return j;
}

// Parses a regime fragment. Random regimes need the target's identity and
// cardinalities, which come from the model. A {"type":"natural"} fragment is
// materialized immediately: its reference distribution p(z|w; do x*) is
// computed from the loaded model and becomes an ordinary random regime.
inline Regime regime_from_json(const json& j, const Model& m, const NodeId& target,
                               const NodeId& default_treatment = "") {
    std::string type = j.at("type").get<std::string>();
    if (type == "idle") return IdleRegime{};
    if (type == "atomic") return AtomicRegime{j.at("value").get<int>()};
    if (type == "natural") {
        NaturalRegimeSpec spec;
        spec.target = target;
        spec.treatment = j.contains("treatment") ? j.at("treatment").get<std::string>()
                                                 : default_treatment;
        if (spec.treatment.empty())
            throw FormatError("natural regime fragment needs a treatment field");
        spec.W = j.value("W", std::vector<NodeId>{});
        spec.baseline = j.value("baseline", 0);
        return natural_regime_oracle(m, spec);
    }
    if (type == "conditional") {
        ConditionalRegime c;
        c.cond_set = j.at("given").get<std::vector<NodeId>>();
        c.map_rows = j.at("map").get<std::vector<std::vector<int>>>();
        for (const auto& row : c.map_rows)
            if (row.size() != c.cond_set.size() + 1)
                throw FormatError("conditional regime rows must list the given values then the target value");
        return c;
    }
    if (type == "random") {
        RandomRegime d;
        d.cond_set = j.at("given").get<std::vector<NodeId>>();
        d.dist.target = target;
        d.dist.target_card = m.card(target);
        d.dist.parents = d.cond_set;
        for (const auto& c : d.cond_set) d.dist.parent_cards.push_back(m.card(c));
        for (const auto& row : j.at("table"))
            for (const auto& p : row) d.dist.table.push_back(p.get<double>());
        d.dist.validate();
        return d;
    }
    throw FormatError("unknown regime type: " + type);
}

inline QueryKind query_kind_from_string(const std::string& s) {
    if (s == "ace") return QueryKind::Ace;
    if (s == "cde") return QueryKind::Cde;
    if (s == "sde") return QueryKind::Sde;
    if (s == "nde") return QueryKind::Nde;
    if (s == "nie") return QueryKind::Nie;
    if (s == "seq") return QueryKind::Seq;
    throw FormatError("unknown query kind: " + s);
}

inline std::string query_kind_to_string(QueryKind k) {
    switch (k) {
        case QueryKind::Ace: return "ace";
        case QueryKind::Cde: return "cde";
        case QueryKind::Sde: return "sde";
        case QueryKind::Nde: return "nde";
        case QueryKind::Nie: return "nie";
        case QueryKind::Seq: return "seq";
    }
    throw Error("unknown query kind");
}

inline CausalQuery query_from_json(const json& j, const Model& m) {
    CausalQuery q;
    try {
        q.kind = query_kind_from_string(j.at("kind").get<std::string>());
        if (q.kind == QueryKind::Seq) {
            q.response = j.at("response").get<std::string>();
            bool any_block = false;
            for (const auto& sj : j.at("steps")) {
                SeqStep s;
                s.target = sj.at("target").get<std::string>();
                NodeId first = q.steps.empty() ? NodeId{} : q.steps.front().target;
                s.regime = regime_from_json(sj.at("regime"), m, s.target, first);
                if (sj.contains("block")) {
                    s.block = sj.at("block").get<std::vector<NodeId>>();
                    any_block = true;
                }
                q.steps.push_back(std::move(s));
            }
            q.auto_search = j.value("auto_search", !any_block);
            return q;
        }
        q.treatment = j.at("treatment").get<std::string>();
        q.response = j.at("response").get<std::string>();
        if (j.contains("mediator")) q.mediator = j.at("mediator").get<std::string>();
        q.x = j.value("x", 1);
        q.x_star = j.value("x_star", 0);
        if (q.kind == QueryKind::Cde) {
            if (!j.contains("z")) throw FormatError("cde query needs the mediator value z");
            q.mediator_value = j.at("z").get<int>();
        }
        if (q.kind == QueryKind::Sde) {
            if (!j.contains("regime")) throw FormatError("sde query needs a mediator regime");
            if (!q.mediator) throw FormatError("sde query needs a mediator");
            Regime r = regime_from_json(j.at("regime"), m, *q.mediator, q.treatment);
            if (const auto* d = std::get_if<RandomRegime>(&r)) {
                q.mediator_regime = *d;
            } else if (const auto* a = std::get_if<AtomicRegime>(&r)) {
                // point-mass standardization: treat as a degenerate random regime
                RandomRegime d2;
                d2.dist.target = *q.mediator;
                d2.dist.target_card = m.card(*q.mediator);
                d2.dist.table.assign(d2.dist.target_card, 0.0);
                d2.dist.table[a->value] = 1.0;
                q.mediator_regime = d2;
            } else {
                throw FormatError("sde regime must be random (or atomic for a point mass)");
            }
        }
        if (j.contains("roles")) {
            const auto& r = j.at("roles");
            q.roles.C = r.value("C", std::vector<NodeId>{});
            q.roles.W = r.value("W", std::vector<NodeId>{});
            q.roles.S = r.value("S", std::vector<NodeId>{});
            q.roles.L1 = r.value("L1", std::vector<NodeId>{});
            q.roles.L2 = r.value("L2", std::vector<NodeId>{});
        }
        q.auto_search = j.value("auto_search", !j.contains("roles"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed query json: ") + e.what());
    }
    return q;
}

inline CausalQuery load_query(const std::string& path, const Model& m) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open query file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed query json: ") + e.what());
    }
    return query_from_json(j, m);
}

// ---------------------------------------------------------------------------
// Result rendering
// ---------------------------------------------------------------------------

inline json witness_to_json(const std::optional<FailureWitness>& w) {
    if (!w) return nullptr;
    json j;
    j["condition"] = w->condition;
    j["path"] = w->open_path.path;
    j["given"] = std::vector<NodeId>(w->open_path.given.begin(), w->open_path.given.end());
    return j;
}

inline json result_to_json(const IdentificationResult& r) {
    json j;
    j["identified"] = r.identified;
    if (r.value)
        j["value"] = *r.value;
    else
        j["value"] = nullptr;
    if (r.distribution)
        j["distribution"] = r.distribution->values;
    else
        j["distribution"] = nullptr;
    j["formula"] = r.formula;
    j["witness"] = witness_to_json(r.witness);
    return j;
}

// ---------------------------------------------------------------------------
// CSV datasets: header row of node names, integer codes
// ---------------------------------------------------------------------------

inline std::string dataset_to_csv(const Dataset& d, bool include_latent = false) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < d.columns.size(); ++i)
        if (include_latent || !d.latent[i]) cols.push_back(i);
    std::ostringstream os;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (k) os << ",";
        os << d.columns[cols[k]];
    }
    os << "\n";
    for (const auto& row : d.rows) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            if (k) os << ",";
            os << row[cols[k]];
        }
        os << "\n";
    }
    return os.str();
}

inline Dataset dataset_from_csv_stream(std::istream& in) {
    Dataset d;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset");
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) {
        if (cell.empty()) throw FormatError("empty column name in dataset header");
        d.columns.push_back(cell);
        d.latent.push_back(false);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row_s(line);
        std::vector<int> row;
        while (std::getline(row_s, cell, ',')) {
            try {
                row.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw FormatError("non-integer dataset cell: " + cell);
            }
        }
        if (row.size() != d.columns.size()) throw FormatError("ragged dataset row");
        d.rows.push_back(std::move(row));
    }
    return d;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open dataset " + path);
    return dataset_from_csv_stream(in);
}

}  // namespace regimecalc
