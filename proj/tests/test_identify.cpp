#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "regimecalc/identify.hpp"
#include "test_util.hpp"

using namespace regimecalc;

namespace {

CausalQuery base_query(QueryKind kind, const NodeId& x, const NodeId& y) {
    CausalQuery q;
    q.kind = kind;
    q.treatment = x;
    q.response = y;
    return q;
}

CausalQuery mediation_query(QueryKind kind, const NodeId& x, const NodeId& z, const NodeId& y) {
    CausalQuery q = base_query(kind, x, y);
    q.mediator = z;
    return q;
}

Model confounded_observed(std::mt19937_64& rng) {
    Dag g;
    g.add_node("U");
    g.add_node("X");
    g.add_node("Y");
    g.add_edge("U", "X");
    g.add_edge("U", "Y");
    g.add_edge("X", "Y");
    return testutil::random_model(rng, g);
}

}  // namespace

TEST_CASE("back-door criterion on canonical graphs") {
    Model xy;
    testutil::put(xy, testutil::make_root("X", 0.4));
    testutil::put(xy, testutil::make_cpt("Y", {"X"}, {0.2, 0.7}));
    testutil::connect_from_cpts(xy);
    CHECK(check_back_door(xy, "X", "Y", {}).ok);

    std::mt19937_64 rng(71);
    Model conf = confounded_observed(rng);
    CHECK(check_back_door(conf, "X", "Y", {"U"}).ok);
    CheckResult open = check_back_door(conf, "X", "Y", {});
    CHECK_FALSE(open.ok);
    REQUIRE(open.witness);
    CHECK(open.witness->recheck());

    // descendant adjustment is rejected
    Model chain;
    testutil::put(chain, testutil::make_root("X", 0.4));
    testutil::put(chain, testutil::make_cpt("M", {"X"}, {0.3, 0.8}));
    testutil::put(chain, testutil::make_cpt("Y", {"M"}, {0.2, 0.9}));
    testutil::connect_from_cpts(chain);
    CheckResult bad = check_back_door(chain, "X", "Y", {"M"});
    CHECK_FALSE(bad.ok);
    CHECK(bad.condition == "backdoor:C-descendant-of-X");
}

TEST_CASE("ace on a deterministic copy and on independence") {
    Model copy;
    testutil::put(copy, testutil::make_root("X", 0.5));
    testutil::put(copy, testutil::make_cpt("Y", {"X"}, {0.0, 1.0}));
    testutil::connect_from_cpts(copy);
    auto r = ace(copy, base_query(QueryKind::Ace, "X", "Y"));
    CHECK(*r.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.formula == std::vector<std::string>{"p(y|x)"});

    Model ind;
    testutil::put(ind, testutil::make_root("X", 0.5));
    testutil::put(ind, testutil::make_root("Y", 0.3));
    testutil::connect_from_cpts(ind);
    auto r2 = ace(ind, base_query(QueryKind::Ace, "X", "Y"));
    CHECK(*r2.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ace with an observed confounder matches the oracle") {
    std::mt19937_64 rng(73);
    Model m = confounded_observed(rng);
    auto cmp = compare_with_oracle(m, base_query(QueryKind::Ace, "X", "Y"));
    REQUIRE_FALSE(cmp.skipped);
    CHECK(cmp.result.used_roles.C == std::vector<NodeId>{"U"});
    CHECK(cmp.result.formula == std::vector<std::string>{"p(y|c,x)", "p(c)"});
    CHECK(cmp.value_deviation < 1e-9);
    CHECK(cmp.dist_deviation < 1e-9);
}

TEST_CASE("ace is not identified under a latent confounder") {
    std::mt19937_64 rng(79);
    Model m = confounded_observed(rng);
    m.dag.set_latent("U", true);
    auto r = ace(m, base_query(QueryKind::Ace, "X", "Y"));
    CHECK_FALSE(r.identified);
    CHECK(r.verdict == Verdict::NotIdentified);
    REQUIRE(r.witness);
    CHECK(r.witness->open_path.recheck());
}

TEST_CASE("ace_random mixes the atomic adjustments") {
    std::mt19937_64 rng(83);
    Model plain = testutil::random_model(rng, testutil::load_fixture("g_med.json").dag);
    ObservationalView view(plain);

    RandomRegime point;
    point.dist = regime_cpt(AtomicRegime{1}, plain.var("X"), plain.cpts.at("X"), plain.vars);
    Table t = ace_random(plain, "X", "Y", point);
    Table atomic = eval_backdoor(view, "X", "Y", {}, 1);
    CHECK(testutil::max_abs_diff(t.values, atomic.values) < 1e-12);

    RandomRegime unif;
    unif.dist.target = "X";
    unif.dist.target_card = 2;
    unif.dist.table = {0.5, 0.5};
    Table mix = ace_random(plain, "X", "Y", unif);
    Table a0 = eval_backdoor(view, "X", "Y", {}, 0);
    Table a1 = eval_backdoor(view, "X", "Y", {}, 1);
    for (int y = 0; y < 2; ++y)
        CHECK(mix.values[y] == doctest::Approx(0.5 * a0.values[y] + 0.5 * a1.values[y]).epsilon(1e-12));

    // a regime randomized within strata of the observed confounder
    Model conf = confounded_observed(rng);
    RandomRegime d_u;
    d_u.cond_set = {"U"};
    d_u.dist.target = "X";
    d_u.dist.target_card = 2;
    d_u.dist.parents = {"U"};
    d_u.dist.parent_cards = {2};
    d_u.dist.table = {0.8, 0.2, 0.35, 0.65};
    Table got = ace_random(conf, "X", "Y", d_u);
    Model done = oracle_intervene(conf, Plan{{"X", d_u}});
    Table want = marginal(done, {"Y"});
    CHECK(testutil::max_abs_diff(got.values, want.values) < 1e-9);

    // without adjustment the confounded regime is rejected
    RandomRegime bare;
    bare.dist.target = "X";
    bare.dist.target_card = 2;
    bare.dist.table = {0.5, 0.5};
    CHECK_THROWS_AS(ace_random(conf, "X", "Y", bare), NotIdentifiedError);
}

TEST_CASE("simple stability on g_seq per the worked example") {
    Model m = testutil::load_fixture("g_seq.json");
    std::vector<SeqStep> steps{{"X", AtomicRegime{1}, {}}, {"Z", AtomicRegime{1}, {"V"}}};
    CHECK(check_simple_stability(m, steps, "Y").ok);

    // V unobserved and dropped from the blocks: an open path through V remains.
    std::vector<SeqStep> no_v{{"X", AtomicRegime{1}, {}}, {"Z", AtomicRegime{1}, {}}};
    CheckResult r = check_simple_stability(m, no_v, "Y");
    CHECK_FALSE(r.ok);
    REQUIRE(r.witness);
    CHECK(std::find(r.witness->path.begin(), r.witness->path.end(), "V") != r.witness->path.end());
    CHECK(r.witness->recheck());

    Model xy;
    testutil::put(xy, testutil::make_root("X", 0.4));
    testutil::put(xy, testutil::make_cpt("Y", {"X"}, {0.2, 0.7}));
    testutil::connect_from_cpts(xy);
    CHECK(check_simple_stability(xy, {{"X", AtomicRegime{1}, {}}}, "Y").ok);
}

TEST_CASE("simple stability implies the weak condition") {
    std::mt19937_64 rng(89);
    int done = 0;
    while (done < 150) {
        Model m = testutil::random_model(rng, 4 + rng() % 3, 45);
        std::vector<NodeId> names = m.dag.nodes();
        NodeId x1 = names[rng() % names.size()];
        NodeId x2 = names[rng() % names.size()];
        NodeId y = names[rng() % names.size()];
        if (x1 == x2 || x1 == y || x2 == y) continue;
        if (descendants(m.dag, x2).count(x1)) std::swap(x1, x2);
        std::vector<NodeId> block;
        for (const auto& v : names)
            if (v != x1 && v != x2 && v != y && !descendants(m.dag, x2).count(v) && rng() % 2)
                block.push_back(v);
        std::vector<SeqStep> steps{{x1, AtomicRegime{0}, {}}, {x2, AtomicRegime{1}, block}};
        ++done;
        if (check_simple_stability(m, steps, y).ok) CHECK(check_weak_condition(m, steps, y).ok);
    }
}

TEST_CASE("fig4 weak condition: only regimes that cut V->Z qualify") {
    Model m = testutil::load_fixture("fig4.json");

    RandomRegime unconditional;
    unconditional.dist.target = "Z";
    unconditional.dist.target_card = 2;
    unconditional.dist.table = {0.4, 0.6};
    std::vector<SeqStep> ok_steps{{"X", AtomicRegime{1}, {}}, {"Z", unconditional, {"V"}}};
    CHECK(check_weak_condition(m, ok_steps, "Y").ok);
    // ...but V stays necessary in the conditioning blocks.
    std::vector<SeqStep> no_v{{"X", AtomicRegime{1}, {}}, {"Z", unconditional, {}}};
    CHECK_FALSE(check_weak_condition(m, no_v, "Y").ok);

    ConditionalRegime on_v{{"V"}, {{0, 0}, {1, 1}}};
    std::vector<SeqStep> bad_steps{{"X", AtomicRegime{1}, {}}, {"Z", on_v, {"V"}}};
    CheckResult r = check_weak_condition(m, bad_steps, "Y");
    CHECK_FALSE(r.ok);
    REQUIRE(r.witness);
    CHECK(r.witness->recheck());
}

TEST_CASE("g-formula collapses and matches hand sums on g_seq") {
    Model m = testutil::load_fixture("g_seq.json");

    // K=1 atomic on a back-door-free X->Y model
    Model xy;
    testutil::put(xy, testutil::make_root("X", 0.4));
    testutil::put(xy, testutil::make_cpt("Y", {"X"}, {0.2, 0.7}));
    testutil::connect_from_cpts(xy);
    Table t = g_formula(xy, {{"X", AtomicRegime{1}, {}}}, "Y");
    CHECK(t.values[1] == doctest::Approx(0.7).epsilon(1e-12));

    // Atomic two-step plan: sum_v p(y|x,z,v) p(v|x) by brute force
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z) {
            Table got = g_formula(m, {{"X", AtomicRegime{x}, {}}, {"Z", AtomicRegime{z}, {"V"}}},
                                  "Y");
            double want = 0.0;
            for (int v = 0; v < 2; ++v)
                want += testutil::brute_conditional(m, {{"Y", 1}}, {{"X", x}, {"Z", z}, {"V", v}}) *
                        testutil::brute_conditional(m, {{"V", v}}, {{"X", x}});
            CHECK(got.values[1] == doctest::Approx(want).epsilon(1e-12));
        }

    // Conditional second intervention a(v) = 1 - v
    ConditionalRegime a_of_v{{"V"}, {{0, 1}, {1, 0}}};
    Table got = g_formula(m, {{"X", AtomicRegime{1}, {}}, {"Z", a_of_v, {"V"}}}, "Y");
    double want = 0.0;
    for (int v = 0; v < 2; ++v)
        want += testutil::brute_conditional(m, {{"Y", 1}}, {{"X", 1}, {"Z", 1 - v}, {"V", v}}) *
                testutil::brute_conditional(m, {{"V", v}}, {{"X", 1}});
    CHECK(got.values[1] == doctest::Approx(want).epsilon(1e-12));

    // Unidentified plan raises
    Model latent = testutil::load_fixture("fig4.json");
    ConditionalRegime on_v{{"V"}, {{0, 0}, {1, 1}}};
    CHECK_THROWS_AS(g_formula(latent, {{"X", AtomicRegime{1}, {}}, {"Z", on_v, {"V"}}}, "Y"),
                    NotIdentifiedError);
}

TEST_CASE("three-step plans resolve per-step blocks and match the oracle") {
    // T1 -> L -> T2 -> M -> T3 -> Y with L and M confounding later stages.
    Model m;
    testutil::put(m, testutil::make_root("T1", 0.45));
    testutil::put(m, testutil::make_cpt("L", {"T1"}, {0.3, 0.7}));
    testutil::put(m, testutil::make_cpt("T2", {"L"}, {0.25, 0.6}));
    testutil::put(m, testutil::make_cpt("M", {"T2"}, {0.35, 0.75}));
    testutil::put(m, testutil::make_cpt("T3", {"M"}, {0.2, 0.65}));
    testutil::put(m, testutil::make_cpt("Y", {"L", "M", "T3"},
                                        {0.1, 0.45, 0.3, 0.6, 0.25, 0.55, 0.4, 0.85}));
    testutil::connect_from_cpts(m);

    CausalQuery q;
    q.kind = QueryKind::Seq;
    q.response = "Y";
    q.steps = {{"T1", AtomicRegime{1}, {}},
               {"T2", AtomicRegime{0}, {}},
               {"T3", AtomicRegime{1}, {}}};
    auto r = identify_seq(m, q);
    REQUIRE(r.identified);
    REQUIRE(r.resolved_steps.size() == 3);
    CHECK(r.resolved_steps[1].block == std::vector<NodeId>{"L"});
    CHECK(r.resolved_steps[2].block == std::vector<NodeId>{"M"});

    auto cmp = compare_with_oracle(m, q);
    REQUIRE_FALSE(cmp.skipped);
    CHECK(cmp.dist_deviation < 1e-9);
    CHECK(cmp.value_deviation < 1e-9);
}

TEST_CASE("cde basics and oracle agreement") {
    Model m = testutil::load_fixture("g_seq.json");
    CausalQuery q = mediation_query(QueryKind::Cde, "X", "Z", "Y");
    q.mediator_value = 1;

    CausalQuery same = q;
    same.x = 1;
    same.x_star = 1;
    auto r_same = cde(m, same);
    CHECK(*r_same.value == 0.0);

    auto cmp = compare_with_oracle(m, q);
    REQUIRE_FALSE(cmp.skipped);
    CHECK(cmp.result.used_roles.L2 == std::vector<NodeId>{"V"});
    CHECK(cmp.value_deviation < 1e-9);
    CHECK(cmp.dist_deviation < 1e-9);
}

TEST_CASE("cde is z-independent exactly when the outcome mean is additive") {
    Model add = testutil::load_fixture("additive.json");
    CausalQuery q = mediation_query(QueryKind::Cde, "X", "Z", "Y");
    q.mediator_value = 0;
    auto r0 = cde(add, q);
    q.mediator_value = 1;
    auto r1 = cde(add, q);
    CHECK(std::abs(*r0.value - *r1.value) < 1e-9);

    Model inter = testutil::load_fixture("interaction.json");
    q.mediator_value = 0;
    auto i0 = cde(inter, q);
    q.mediator_value = 1;
    auto i1 = cde(inter, q);
    CHECK(std::abs(*i0.value - *i1.value) > 0.05);
}

TEST_CASE("sde: point mass reduces to cde") {
    Model m = testutil::load_fixture("fig2.json");
    CausalQuery sq = mediation_query(QueryKind::Sde, "X", "Z", "Y");
    RandomRegime point;
    point.dist = regime_cpt(AtomicRegime{1}, m.var("Z"), m.cpts.at("Z"), m.vars);
    sq.mediator_regime = point;
    auto rs = sde(m, sq);
    REQUIRE(rs.identified);

    CausalQuery cq = mediation_query(QueryKind::Cde, "X", "Z", "Y");
    cq.mediator_value = 1;
    auto rcde = cde(m, cq);
    CHECK(std::abs(*rs.value - *rcde.value) < 1e-12);
}

TEST_CASE("sde on fig2 matches the oracle") {
    Model m = testutil::load_fixture("fig2.json");
    CausalQuery q = mediation_query(QueryKind::Sde, "X", "Z", "Y");
    RandomRegime d;
    d.cond_set = {"W"};
    d.dist.target = "Z";
    d.dist.target_card = 2;
    d.dist.parents = {"W"};
    d.dist.parent_cards = {2};
    d.dist.table = {0.7, 0.3, 0.25, 0.75};
    q.mediator_regime = d;
    auto cmp = compare_with_oracle(m, q);
    REQUIRE_FALSE(cmp.skipped);
    CHECK(cmp.value_deviation < 1e-9);
    CHECK(cmp.dist_deviation < 1e-9);
}

TEST_CASE("sde with the observational mediator law equals ace when Z ignores X") {
    Model m;
    testutil::put(m, testutil::make_root("W", 0.3));
    testutil::put(m, testutil::make_cpt("Z", {"W"}, {0.2, 0.7}));
    testutil::put(m, testutil::make_root("X", 0.45));
    testutil::put(m, testutil::make_cpt("Y", {"X", "Z"}, {0.1, 0.45, 0.4, 0.85}));
    testutil::connect_from_cpts(m);

    CausalQuery q = mediation_query(QueryKind::Sde, "X", "Z", "Y");
    RandomRegime d;
    d.cond_set = {"W"};
    d.dist.target = "Z";
    d.dist.target_card = 2;
    d.dist.parents = {"W"};
    d.dist.parent_cards = {2};
    d.dist.table = {0.8, 0.2, 0.3, 0.7};  // the observational p(z|w)
    q.mediator_regime = d;
    auto rs = sde(m, q);
    auto ra = ace(m, base_query(QueryKind::Ace, "X", "Y"));
    REQUIRE(rs.identified);
    CHECK(std::abs(*rs.value - *ra.value) < 1e-9);
}

TEST_CASE("sde rejects a W inside the treatment's cone") {
    Model m = testutil::load_fixture("g_seq.json");
    CausalQuery q = mediation_query(QueryKind::Sde, "X", "Z", "Y");
    RandomRegime d;
    d.cond_set = {"V"};  // descendant of X
    d.dist.target = "Z";
    d.dist.target_card = 2;
    d.dist.parents = {"V"};
    d.dist.parent_cards = {2};
    d.dist.table = {0.5, 0.5, 0.5, 0.5};
    q.mediator_regime = d;
    auto r = sde(m, q);
    CHECK_FALSE(r.identified);
    CHECK(r.witness->condition == "sde:W-regime-dependent");
    CHECK(r.witness->open_path.recheck());
}

TEST_CASE("condition (9) verdicts match the worked examples") {
    Model gseq = testutil::load_fixture("g_seq.json");
    CheckResult gseq_r = check_nde_defined(gseq, "X", "Z", "Y", {});
    CHECK_FALSE(gseq_r.ok);
    CHECK(gseq_r.witness->recheck());

    Model gmed = testutil::load_fixture("g_med.json");
    CHECK(check_nde_defined(gmed, "X", "Z", "Y", {}).ok);

    Model fig4 = testutil::load_fixture("fig4.json");
    CHECK(check_nde_defined(fig4, "X", "Z", "Y", {"U2"}).ok);
    CHECK_FALSE(check_nde_defined(fig4, "X", "Z", "Y", {}).ok);
    CHECK_FALSE(check_nde_defined(fig4, "X", "Z", "Y", {"U1"}).ok);
    CHECK(check_nde_defined(fig4, "X", "Z", "Y", {"U1", "U2"}).ok);
}

TEST_CASE("nde/nie on g_med: zero contrast, decomposition, oracle match") {
    Model m = testutil::load_fixture("g_med.json");
    CausalQuery q = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    q.auto_search = false;  // all-empty roles

    CausalQuery trivial = q;
    trivial.x = 1;
    trivial.x_star = 1;
    auto r_trivial = nde(m, trivial);
    CHECK(*r_trivial.value == 0.0);

    auto r_nde = nde(m, q);
    REQUIRE(r_nde.identified);
    CHECK(r_nde.formula == std::vector<std::string>{"p(y|z,x)", "p(z|x*)"});

    CausalQuery qi = q;
    qi.kind = QueryKind::Nie;
    auto r_nie = nie(m, qi);
    auto r_ace = ace(m, base_query(QueryKind::Ace, "X", "Y"));
    CHECK(std::abs(*r_nde.value + *r_nie.value - *r_ace.value) < 1e-9);

    auto cmp = compare_with_oracle(m, q);
    CHECK(cmp.dist_deviation < 1e-9);
    auto cmp_nie = compare_with_oracle(m, qi);
    CHECK(cmp_nie.dist_deviation < 1e-9);
}

TEST_CASE("nde equals cde when the outcome mean is additive (g_med shape)") {
    // g_med graph with an additive outcome: Y mean = .05 + .15x + .2z + .1v
    Model m;
    testutil::put(m, testutil::make_root("X", 0.45));
    testutil::put(m, testutil::make_cpt("V", {"X"}, {0.25, 0.65}));
    testutil::put(m, testutil::make_cpt("Z", {"X"}, {0.3, 0.8}));
    testutil::put(m, testutil::make_cpt("Y", {"V", "X", "Z"},
                                        {0.05, 0.25, 0.2, 0.4, 0.15, 0.35, 0.3, 0.5}));
    testutil::connect_from_cpts(m);

    CausalQuery q = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    auto r_nde = nde(m, q);
    REQUIRE(r_nde.identified);
    for (int z = 0; z < 2; ++z) {
        CausalQuery cq = mediation_query(QueryKind::Cde, "X", "Z", "Y");
        cq.mediator_value = z;
        auto r_cde = cde(m, cq);
        CHECK(std::abs(*r_nde.value - *r_cde.value) < 1e-9);
    }

    InteractionReport rep = check_no_interaction(m, "X", "Z", "Y", 1e-9);
    CHECK(rep.no_interaction);
}

TEST_CASE("five-factor formula collapses on the bare mediation triangle") {
    // X -> Z -> Y plus X -> Y, no confounding, all roles empty.
    Model m = testutil::load_fixture("additive.json");
    CausalQuery q = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    q.auto_search = false;
    auto r = identify_nde_observational(m, q);
    REQUIRE(r.identified);
    CHECK(r.formula == std::vector<std::string>{"p(y|z,x)", "p(z|x*)"});

    // numerically: sum_z p(y|z,x) p(z|x*) by brute force
    double want = 0.0;
    for (int z = 0; z < 2; ++z)
        want += testutil::brute_conditional(m, {{"Y", 1}}, {{"Z", z}, {"X", 1}}) *
                testutil::brute_conditional(m, {{"Z", z}}, {{"X", 0}});
    CHECK(r.distribution->values[1] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("fig4 observational identification follows the worked example") {
    Model obs = testutil::load_fixture("fig4_observed.json");
    CausalQuery q = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    q.roles.W = {"U2"};
    q.roles.S = {"U1"};
    q.roles.L1 = {"U2"};
    q.auto_search = false;

    auto r = identify_nde_observational(obs, q);
    REQUIRE(r.identified);
    CHECK(r.formula == std::vector<std::string>{"p(y|l1,z,x)", "p(z|w,s,x*)", "p(s|w)", "p(l1)"});
    auto cmp = compare_with_oracle(obs, q);
    CHECK(cmp.dist_deviation < 1e-9);
    CHECK(cmp.value_deviation < 1e-9);

    // auto-search lands on the same roles
    CausalQuery qa = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    auto ra = nde(obs, qa);
    REQUIRE(ra.identified);
    CHECK(ra.used_roles.W == std::vector<NodeId>{"U2"});
    CHECK(ra.used_roles.S == std::vector<NodeId>{"U1"});

    // splitting W into L2 instead of L1 stays identified
    CausalQuery qs = q;
    qs.roles.L1 = {};
    qs.roles.L2 = {"U2"};
    auto rs = identify_nde_observational(obs, qs);
    CHECK(rs.identified);
    auto cmp2 = compare_with_oracle(obs, qs);
    CHECK(cmp2.dist_deviation < 1e-9);

    Model latent = testutil::load_fixture("fig4.json");
    CausalQuery ql = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    auto rl = nde(latent, ql);
    CHECK_FALSE(rl.identified);
    CHECK(rl.verdict == Verdict::NotIdentified);
    REQUIRE(rl.witness);
    CHECK(rl.witness->open_path.recheck());
}

TEST_CASE("role sets may overlap") {
    // S = {U1, U2} overlaps W = {U2}; the factors stay consistent.
    Model obs = testutil::load_fixture("fig4_observed.json");
    CausalQuery q = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    q.roles.W = {"U2"};
    q.roles.S = {"U1", "U2"};
    q.roles.L1 = {"U2"};
    q.auto_search = false;
    auto r = identify_nde_observational(obs, q);
    REQUIRE(r.identified);
    auto cmp = compare_with_oracle(obs, q);
    CHECK(cmp.dist_deviation < 1e-9);
    CHECK(cmp.value_deviation < 1e-9);
}

TEST_CASE("experimental identification recombines interventional tables") {
    Model m = testutil::load_fixture("fig2.json");

    // Study 1: p(y | w; do x, do z); Study 2: p(z | w; do x*); plus p(w).
    Cpt py_wz;
    py_wz.target = "Y";
    py_wz.target_card = 2;
    py_wz.parents = {"W", "Z"};
    py_wz.parent_cards = {2, 2};
    for (int w = 0; w < 2; ++w)
        for (int z = 0; z < 2; ++z) {
            Model done = oracle_intervene(m, Plan{{"X", AtomicRegime{1}}, {"Z", AtomicRegime{z}}});
            Table t = conditional(done, {"Y"}, {{"W", w}});
            py_wz.table.push_back(t.values[0]);
            py_wz.table.push_back(t.values[1]);
        }
    Cpt pz_w;
    pz_w.target = "Z";
    pz_w.target_card = 2;
    pz_w.parents = {"W"};
    pz_w.parent_cards = {2};
    Model base = oracle_intervene(m, Plan{{"X", AtomicRegime{0}}});
    for (int w = 0; w < 2; ++w) {
        Table t = conditional(base, {"Z"}, {{"W", w}});
        pz_w.table.push_back(t.values[0]);
        pz_w.table.push_back(t.values[1]);
    }
    Table pw = marginal(m, {"W"});

    Table got = experimental_identify(py_wz, pz_w, pw);
    RandomRegime d_star = natural_regime_oracle(m, NaturalRegimeSpec{"Z", "X", {"W"}, 0});
    Model want_m = oracle_intervene(m, Plan{{"X", AtomicRegime{1}}, {"Z", d_star}});
    Table want = marginal(want_m, {"Y"});
    CHECK(testutil::max_abs_diff(got.values, want.values) < 1e-12);

    // degenerate W = {}: sum_z p(y; do x, do z) p(z; do x*)
    Cpt py_z;
    py_z.target = "Y";
    py_z.target_card = 2;
    py_z.parents = {"Z"};
    py_z.parent_cards = {2};
    for (int z = 0; z < 2; ++z) {
        Model done = oracle_intervene(m, Plan{{"X", AtomicRegime{1}}, {"Z", AtomicRegime{z}}});
        Table t = marginal(done, {"Y"});
        py_z.table.push_back(t.values[0]);
        py_z.table.push_back(t.values[1]);
    }
    Cpt pz;
    pz.target = "Z";
    pz.target_card = 2;
    pz.table = {marginal(base, {"Z"}).values[0], marginal(base, {"Z"}).values[1]};
    Table unit = Table::zeros({}, {});
    unit.values = {1.0};
    Table got2 = experimental_identify(py_z, pz, unit);
    RandomRegime d0 = natural_regime_oracle(m, NaturalRegimeSpec{"Z", "X", {}, 0});
    Model want2_m = oracle_intervene(m, Plan{{"X", AtomicRegime{1}}, {"Z", d0}});
    CHECK(testutil::max_abs_diff(got2.values, marginal(want2_m, {"Y"}).values) < 1e-12);

    Cpt wrong = pz_w;
    wrong.parents = {"Q"};
    CHECK_THROWS_AS(experimental_identify(py_wz, wrong, pw), Error);
}

TEST_CASE("no-interaction check flags a pure product interaction") {
    Model inter = testutil::load_fixture("interaction.json");
    InteractionReport rep = check_no_interaction(inter, "X", "Z", "Y", 1e-9);
    CHECK_FALSE(rep.no_interaction);
    CHECK(rep.max_deviation == doctest::Approx(0.3).epsilon(1e-9));

    Model add = testutil::load_fixture("additive.json");
    InteractionReport rep2 = check_no_interaction(add, "X", "Z", "Y", 1e-9);
    CHECK(rep2.no_interaction);
    CHECK(rep2.max_deviation < 1e-9);
}

TEST_CASE("no-interaction check also fires when Z ignores the treatment") {
    // Z independent of X, yet the cde depends on z through the interaction.
    Model m;
    testutil::put(m, testutil::make_root("X", 0.5));
    testutil::put(m, testutil::make_root("Z", 0.6));
    testutil::put(m, testutil::make_cpt("Y", {"X", "Z"}, {0.1, 0.1, 0.1, 0.4}));
    testutil::connect_from_cpts(m);
    InteractionReport rep = check_no_interaction(m, "X", "Z", "Y", 1e-9);
    CHECK_FALSE(rep.no_interaction);
    CHECK(rep.max_deviation == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("compare_with_oracle: idle plan deviates by zero; unidentified skips") {
    Model m = testutil::load_fixture("g_seq.json");
    CausalQuery q;
    q.kind = QueryKind::Seq;
    q.response = "Y";
    q.steps = {{"X", IdleRegime{}, {}}};
    q.auto_search = false;
    auto cmp = compare_with_oracle(m, q);
    REQUIRE_FALSE(cmp.skipped);
    CHECK(cmp.dist_deviation < 1e-12);
    CHECK(cmp.value_deviation < 1e-12);

    Model latent = testutil::load_fixture("fig4.json");
    CausalQuery nq = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    auto cmp2 = compare_with_oracle(latent, nq);
    CHECK(cmp2.skipped);
}

TEST_CASE("failure witnesses always re-verify as open paths") {
    Model gseq = testutil::load_fixture("g_seq.json");
    Model fig4 = testutil::load_fixture("fig4.json");
    std::vector<IdentificationResult> failures;

    CausalQuery nq = mediation_query(QueryKind::Nde, "X", "Z", "Y");
    nq.auto_search = false;
    failures.push_back(nde(gseq, nq));
    failures.push_back(nde(fig4, mediation_query(QueryKind::Nde, "X", "Z", "Y")));

    std::mt19937_64 rng(97);
    Model conf = confounded_observed(rng);
    conf.dag.set_latent("U", true);
    failures.push_back(ace(conf, base_query(QueryKind::Ace, "X", "Y")));

    for (const auto& r : failures) {
        REQUIRE_FALSE(r.identified);
        REQUIRE(r.witness);
        CHECK(r.witness->open_path.recheck());
        CHECK_FALSE(d_separated(r.witness->open_path.graph, {r.witness->open_path.path.front()},
                                {r.witness->open_path.path.back()}, r.witness->open_path.given));
    }
}
