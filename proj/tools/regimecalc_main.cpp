// regimecalc: exact causal-effect identification for discrete models with
// intervention regimes. Subcommands load a model (and usually a query),
// run the graphical checks, evaluate identification formulas from the
// observational joint, and cross-check against the truncated-factorization
// oracle.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "regimecalc/identify.hpp"
#include "regimecalc/io.hpp"

namespace rc = regimecalc;
using rc::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotIdentified = 2;

double comparison_tol() {
    if (const char* env = std::getenv("REGIMECALC_TOL")) {
        try {
            double t = std::stod(env);
            if (t > 0) return t;
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring invalid REGIMECALC_TOL\n";
    }
    return rc::kDefaultCompareTol;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(out_path);
        if (!out) throw rc::Error("cannot write output file " + out_path);
        out << text;
    }
}

std::vector<rc::NodeId> split_names(const std::string& csv) {
    std::vector<rc::NodeId> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ','))
        if (!cell.empty()) out.push_back(cell);
    return out;
}

std::string verdict_string(rc::Verdict v) {
    switch (v) {
        case rc::Verdict::Identified: return "identified";
        case rc::Verdict::NotIdentified: return "not-identified";
        case rc::Verdict::NotDefined: return "not-defined";
    }
    return "unknown";
}

json roles_to_json(const rc::RoleSets& r) {
    json j;
    j["C"] = r.C;
    j["W"] = r.W;
    j["S"] = r.S;
    j["L1"] = r.L1;
    j["L2"] = r.L2;
    return j;
}

struct CommonArgs {
    std::string model_path;
    std::string query_path;
    std::string out_path;
    std::string dot_path;
    std::string format = "json";
    std::size_t max_adjust = rc::kDefaultMaxAdjustSize;
};

// Influence diagram a query is judged on: the plan's surgered graph for
// sequential queries, otherwise the union diagram around treatment/mediator.
rc::Dag query_diagram(const rc::Model& m, const rc::CausalQuery& q) {
    rc::Plan plan;
    if (q.kind == rc::QueryKind::Seq) {
        for (const auto& s : q.steps) plan[s.target] = s.regime;
    } else {
        plan[q.treatment] = rc::IdleRegime{};
        if (q.mediator) {
            std::vector<rc::NodeId> zc(m.dag.parents(*q.mediator).begin(),
                                       m.dag.parents(*q.mediator).end());
            zc.insert(zc.end(), q.roles.W.begin(), q.roles.W.end());
            std::sort(zc.begin(), zc.end());
            zc.erase(std::unique(zc.begin(), zc.end()), zc.end());
            plan[*q.mediator] = rc::ConditionalRegime{zc, {}};
        }
    }
    return rc::surgery(m.dag, plan);
}

void maybe_write_dot(const CommonArgs& args, const rc::Model& m, const rc::CausalQuery* q) {
    if (args.dot_path.empty()) return;
    std::ofstream out(args.dot_path);
    if (!out) throw rc::Error("cannot write dot file " + args.dot_path);
    out << (q ? rc::to_dot(query_diagram(m, *q)) : rc::to_dot(m.dag));
}

int run_dsep(const CommonArgs& args, const std::string& a_csv, const std::string& b_csv,
             const std::string& c_csv) {
    rc::Model m = rc::load_model(args.model_path);
    rc::NodeSet A, B, C;
    for (const auto& v : split_names(a_csv)) A.insert(v);
    for (const auto& v : split_names(b_csv)) B.insert(v);
    for (const auto& v : split_names(c_csv)) C.insert(v);
    bool sep = rc::d_separated(m.dag, A, B, C);
    json out;
    out["d_separated"] = sep;
    if (sep) {
        out["open_path"] = nullptr;
    } else {
        auto path = rc::find_open_path(m.dag, A, B, C);
        out["open_path"] = path ? json(*path) : json(nullptr);
    }
    emit(out.dump(2) + "\n", args.out_path);
    return kExitOk;
}

int run_check(const CommonArgs& args) {
    rc::Model m = rc::load_model(args.model_path);
    rc::CausalQuery q = rc::load_query(args.query_path, m);
    maybe_write_dot(args, m, &q);
    rc::IdentificationResult r = rc::identify(m, q, args.max_adjust);
    json out;
    out["identified"] = r.identified;
    out["verdict"] = verdict_string(r.verdict);
    out["condition"] = r.condition_note;
    out["roles"] = roles_to_json(r.used_roles);
    out["formula"] = r.formula;
    out["witness"] = rc::witness_to_json(r.witness);
    if (args.format == "text") {
        std::ostringstream os;
        os << verdict_string(r.verdict);
        if (!r.condition_note.empty()) os << " (" << r.condition_note << ")";
        os << "\n";
        emit(os.str(), args.out_path);
    } else {
        emit(out.dump(2) + "\n", args.out_path);
    }
    return r.identified ? kExitOk : kExitNotIdentified;
}

int run_effect(const CommonArgs& args, const std::string& mode) {
    rc::Model m = rc::load_model(args.model_path);
    rc::CausalQuery q = rc::load_query(args.query_path, m);
    maybe_write_dot(args, m, &q);

    if (mode == "oracle") {
        rc::OracleAnswer ans = rc::oracle_evaluate(m, q);
        if (args.format == "text") {
            emit("oracle value " + std::to_string(ans.value) + "\n", args.out_path);
            return kExitOk;
        }
        json out;
        out["value"] = ans.value;
        out["distribution"] = ans.arms.front().values;
        emit(out.dump(2) + "\n", args.out_path);
        return kExitOk;
    }

    rc::IdentificationResult r = rc::identify(m, q, args.max_adjust);
    if (!r.identified) {
        json out = rc::result_to_json(r);
        out["verdict"] = verdict_string(r.verdict);
        emit(args.format == "text" ? verdict_string(r.verdict) + "\n" : out.dump(2) + "\n",
             args.out_path);
        return kExitNotIdentified;
    }

    json out = rc::result_to_json(r);
    int code = kExitOk;
    double dev = 0.0;
    if (mode == "both") {
        rc::OracleAnswer ans = rc::oracle_evaluate(m, q, &r.used_roles.W);
        std::vector<rc::Table> arms = rc::identified_arms(m, q, r);
        dev = std::abs(*r.value - ans.value);
        for (std::size_t i = 0; i < arms.size(); ++i)
            for (std::size_t k = 0; k < arms[i].values.size(); ++k)
                dev = std::max(dev, std::abs(arms[i].values[k] - ans.arms[i].values[k]));
        out["oracle_value"] = ans.value;
        out["deviation"] = dev;
        if (dev > comparison_tol()) code = kExitError;
    }
    if (args.format == "text") {
        std::ostringstream os;
        os << "value " << *r.value;
        if (mode == "both") os << " (oracle deviation " << dev << ")";
        os << "\n";
        emit(os.str(), args.out_path);
    } else {
        emit(out.dump(2) + "\n", args.out_path);
    }
    return code;
}

int run_compare(const CommonArgs& args) {
    rc::Model m = rc::load_model(args.model_path);
    rc::CausalQuery q = rc::load_query(args.query_path, m);
    maybe_write_dot(args, m, &q);
    rc::OracleComparison cmp = rc::compare_with_oracle(m, q, args.max_adjust);
    json out;
    out["skipped"] = cmp.skipped;
    if (cmp.skipped) {
        out["verdict"] = verdict_string(cmp.result.verdict);
        out["witness"] = rc::witness_to_json(cmp.result.witness);
        emit(out.dump(2) + "\n", args.out_path);
        return kExitOk;
    }
    out["value"] = *cmp.result.value;
    out["value_deviation"] = cmp.value_deviation;
    out["distribution_deviation"] = cmp.dist_deviation;
    emit(out.dump(2) + "\n", args.out_path);
    double tol = comparison_tol();
    return (cmp.value_deviation > tol || cmp.dist_deviation > tol) ? kExitError : kExitOk;
}

int run_simulate(const CommonArgs& args, std::size_t n, std::uint64_t seed, bool include_latent) {
    rc::Model m = rc::load_model(args.model_path);
    rc::Dataset d = rc::sample(m, n, seed);
    emit(rc::dataset_to_csv(d, include_latent), args.out_path);
    return kExitOk;
}

int run_estimate(const CommonArgs& args, const std::string& data_path, double smoothing) {
    rc::Model m = rc::load_model(args.model_path);
    rc::CausalQuery q = rc::load_query(args.query_path, m);
    rc::Dataset data = rc::load_dataset(data_path);

    rc::IdentificationResult r = rc::identify(m, q, args.max_adjust);
    if (!r.identified) {
        json out;
        out["error"] = "query is not identified; nothing to estimate";
        out["verdict"] = verdict_string(r.verdict);
        out["witness"] = rc::witness_to_json(r.witness);
        emit(out.dump(2) + "\n", args.out_path);
        return kExitNotIdentified;
    }

    // Everything the identified formula touches must be present in the data.
    std::vector<rc::NodeId> needed{q.response};
    if (!q.treatment.empty()) needed.push_back(q.treatment);
    if (q.mediator) needed.push_back(*q.mediator);
    const auto& steps = r.resolved_steps.empty() ? q.steps : r.resolved_steps;
    for (const auto& s : steps) {
        needed.push_back(s.target);
        needed.insert(needed.end(), s.block.begin(), s.block.end());
        for (const auto& c : rc::regime_cond_set(s.regime)) needed.push_back(c);
    }
    if (q.mediator_regime)
        for (const auto& c : q.mediator_regime->cond_set) needed.push_back(c);
    for (const auto* role : {&r.used_roles.C, &r.used_roles.W, &r.used_roles.S, &r.used_roles.L1,
                             &r.used_roles.L2})
        needed.insert(needed.end(), role->begin(), role->end());
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    for (const auto& v : needed) {
        if (!data.has_column(v) || m.dag.latent(v)) {
            json out;
            out["error"] = "not estimable from this data: missing observations of " + v;
            emit(out.dump(2) + "\n", args.out_path);
            return kExitNotIdentified;
        }
    }

    std::map<rc::NodeId, int> cards;
    for (const auto& v : m.dag.nodes()) cards[v] = m.card(v);

    bool full_dag_observed = true;
    for (const auto& v : m.dag.nodes())
        if (m.dag.latent(v) || !data.has_column(v)) full_dag_observed = false;

    std::vector<std::string> warnings;
    rc::Model fitted;
    if (full_dag_observed) {
        fitted = rc::fit_cpts(data, m.dag, smoothing, &warnings, &cards);
    } else {
        // Saturated fit over the needed columns: the empirical joint.
        rc::Dag sat;
        std::vector<rc::NodeId> chain;
        for (const auto& col : data.columns)
            if (std::find(needed.begin(), needed.end(), col) != needed.end()) chain.push_back(col);
        for (const auto& v : chain) sat.add_node(v);
        for (std::size_t i = 0; i < chain.size(); ++i)
            for (std::size_t j = i + 1; j < chain.size(); ++j) sat.add_edge(chain[i], chain[j]);
        fitted = rc::fit_cpts(data, sat, smoothing, &warnings, &cards);
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

    std::vector<rc::Table> arms = rc::identified_arms(fitted, q, r);
    const rc::Variable& yvar = m.var(q.response);
    double estimate = rc::expectation(arms[0], yvar);
    if (arms.size() == 2) estimate -= rc::expectation(arms[1], yvar);

    rc::OracleAnswer truth = rc::oracle_evaluate(m, q, &r.used_roles.W);
    json out;
    out["estimate"] = estimate;
    out["true_value"] = truth.value;
    out["abs_error"] = std::abs(estimate - truth.value);
    out["n"] = data.rows.size();
    emit(out.dump(2) + "\n", args.out_path);
    return kExitOk;
}

int run_export_dot(const CommonArgs& args) {
    rc::Model m = rc::load_model(args.model_path);
    if (args.query_path.empty()) {
        emit(rc::to_dot(m.dag), args.out_path);
        return kExitOk;
    }
    rc::CausalQuery q = rc::load_query(args.query_path, m);
    emit(rc::to_dot(query_diagram(m, q)), args.out_path);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exact causal-effect identification for discrete regime models"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string mode = "identified";
    std::string data_path;
    std::string a_csv, b_csv, c_csv;
    std::size_t n = 1000;
    std::uint64_t seed = 1;
    double smoothing = 0.0;
    bool include_latent = false;

    auto add_common = [&](CLI::App* cmd, bool needs_query) {
        cmd->add_option("--model", args.model_path, "model json file")->required();
        if (needs_query)
            cmd->add_option("--query", args.query_path, "query json file")->required();
        cmd->add_option("--out", args.out_path, "write output here instead of stdout");
        cmd->add_option("--format", args.format, "output format (json|text)");
        cmd->add_option("--max-adjust-size", args.max_adjust,
                        "cap on searched adjustment/role set size");
        cmd->add_option("--dot", args.dot_path,
                        "also write the query's influence diagram as graphviz");
    };

    CLI::App* dsep = app.add_subcommand("dsep", "d-separation query on the model graph");
    add_common(dsep, false);
    dsep->add_option("A", a_csv, "first node set, comma separated")->required();
    dsep->add_option("B", b_csv, "second node set, comma separated")->required();
    dsep->add_option("C", c_csv, "conditioning set, comma separated");

    CLI::App* check = app.add_subcommand("check", "identifiability verdict for a query");
    add_common(check, true);

    CLI::App* effect = app.add_subcommand("effect", "evaluate a causal effect");
    add_common(effect, true);
    effect->add_option("--mode", mode, "identified|oracle|both");

    CLI::App* oracle = app.add_subcommand("oracle", "ground-truth effect by truncated factorization");
    add_common(oracle, true);

    CLI::App* compare = app.add_subcommand("compare", "identified formula vs oracle deviation");
    add_common(compare, true);

    CLI::App* simulate = app.add_subcommand("simulate", "forward-sample a dataset");
    add_common(simulate, false);
    simulate->add_option("--n", n, "number of rows")->check(CLI::PositiveNumber);
    simulate->add_option("--seed", seed, "rng seed");
    simulate->add_flag("--include-latent", include_latent, "include latent columns");

    CLI::App* estimate = app.add_subcommand("estimate", "plug-in estimate from a dataset");
    add_common(estimate, true);
    estimate->add_option("--data", data_path, "csv dataset")->required();
    estimate->add_option("--smoothing", smoothing, "additive smoothing for cpt fitting");

    CLI::App* export_dot = app.add_subcommand("export-dot", "graphviz rendering of the model");
    export_dot->add_option("--model", args.model_path, "model json file")->required();
    export_dot->add_option("--query", args.query_path, "render the query's surgered diagram");
    export_dot->add_option("--out", args.out_path, "write output here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (dsep->parsed()) return run_dsep(args, a_csv, b_csv, c_csv);
        if (check->parsed()) return run_check(args);
        if (effect->parsed()) {
            if (mode != "identified" && mode != "oracle" && mode != "both")
                throw rc::Error("unknown mode: " + mode);
            return run_effect(args, mode);
        }
        if (oracle->parsed()) return run_effect(args, "oracle");
        if (compare->parsed()) return run_compare(args);
        if (simulate->parsed()) return run_simulate(args, n, seed, include_latent);
        if (estimate->parsed()) return run_estimate(args, data_path, smoothing);
        if (export_dot->parsed()) return run_export_dot(args);
    } catch (const rc::NotIdentifiedError& e) {
        std::cerr << "not identified: " << e.what() << "\n";
        return kExitNotIdentified;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
