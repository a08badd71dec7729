#include "effitest/mip.hpp"
#include "mip_fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace effitest::mip;

TEST_CASE("single integer variable with lower bound constraint") {
    Model m;
    const int x = m.add_variable("x", 0, 10, true, 1.0);
    m.add_constraint("lb", {{x, 1.0}}, Sense::GreaterEqual, 3.0);
    const auto sol = solve(m);
    REQUIRE(sol.optimal());
    CHECK(sol.values[0] == doctest::Approx(3.0));
    CHECK(sol.objective == doctest::Approx(3.0));
}

TEST_CASE("binary knapsack-like instance") {
    // min -x - y, x + y <= 1.5, x,y binary: enumerating 4 points gives -1.
    Model m;
    const int x = m.add_variable("x", 0, 1, true, -1.0);
    const int y = m.add_variable("y", 0, 1, true, -1.0);
    m.add_constraint("cap", {{x, 1.0}, {y, 1.0}}, Sense::LessEqual, 1.5);
    const auto sol = solve(m);
    REQUIRE(sol.optimal());
    CHECK(sol.objective == doctest::Approx(-1.0));
    CHECK(sol.best_bound <= sol.objective + 1e-9);
}

TEST_CASE("equality rows, free variables and offsets") {
    Model m;
    const int a = m.add_variable("a", -kInfinity, kInfinity, false, 1.0);
    const int b = m.add_variable("b", -kInfinity, kInfinity, false, 2.0);
    m.add_constraint("sum", {{a, 1.0}, {b, 1.0}}, Sense::Equal, 4.0);
    m.add_constraint("a_ge", {{a, 1.0}}, Sense::LessEqual, 6.0);
    m.set_objective_offset(-1.0);
    const auto sol = solve(m);
    REQUIRE(sol.optimal());
    CHECK(sol.values[0] == doctest::Approx(6.0));
    CHECK(sol.values[1] == doctest::Approx(-2.0));
    CHECK(sol.objective == doctest::Approx(1.0));
}

TEST_CASE("infeasible and unbounded models are reported") {
    Model inf;
    const int x = inf.add_variable("x", 0, 5, true);
    inf.add_constraint("hi", {{x, 1.0}}, Sense::GreaterEqual, 7.0);
    CHECK(solve(inf).status == Status::Infeasible);

    Model parity;
    const int p = parity.add_variable("p", 0, 10, true);
    parity.add_constraint("half", {{p, 2.0}}, Sense::Equal, 3.0);
    CHECK(solve(parity).status == Status::Infeasible);

    Model unb;
    const int u = unb.add_variable("u", 0, kInfinity, false, -1.0);
    unb.add_constraint("noop", {{u, -1.0}}, Sense::LessEqual, 0.0);
    CHECK(solve(unb).status == Status::Unbounded);
}

TEST_CASE("model validation rejects unbounded integers") {
    Model m;
    m.add_variable("k", 0, kInfinity, true);
    CHECK_THROWS_AS(m.validate(), ModelError);
    Model bad;
    bad.add_variable("x", 0, 1);
    bad.add_constraint("r", {{3, 1.0}}, Sense::LessEqual, 1.0);
    CHECK_THROWS_AS(solve(bad), ModelError);
}

TEST_CASE("node limit yields iteration-limit status") {
    const auto dense = fixtures::random_mip(17);
    Limits limits;
    limits.max_nodes = 1;
    const auto sol = solve(fixtures::to_model(dense), limits);
    CHECK((sol.status == Status::IterationLimit || sol.status == Status::Optimal ||
           sol.status == Status::Infeasible));
    if (sol.status == Status::IterationLimit && !sol.values.empty()) {
        CHECK(sol.best_bound <= sol.objective + 1e-9);
    }
}

TEST_CASE("random MIPs match the enumeration oracle") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        CAPTURE(seed);
        const auto dense = fixtures::random_mip(seed);
        const auto expected = oracle::enumerate_mip(dense);
        const auto model = fixtures::to_model(dense);
        const auto sol = solve(model);
        if (!expected) {
            CHECK(sol.status == Status::Infeasible);
            continue;
        }
        REQUIRE(sol.optimal());
        CHECK(sol.objective == doctest::Approx(*expected).epsilon(1e-9).scale(1.0));
        CHECK(std::abs(sol.objective - *expected) < 1e-6);
        CHECK(model.max_violation(sol.values) < 1e-6);
        CHECK(sol.max_global_bound <= sol.objective + 1e-9);
    }
}

TEST_CASE("solve is deterministic") {
    const auto model = fixtures::to_model(fixtures::random_mip(5));
    const auto a = solve(model);
    const auto b = solve(model);
    CHECK(a.values == b.values);
    CHECK(a.nodes == b.nodes);
}

TEST_CASE("LP duality holds on random LPs") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        CAPTURE(seed);
        const auto lp = fixtures::random_lp(seed);
        const auto model = fixtures::to_model(lp);
        const auto res = solve_lp(model, nullptr, nullptr, {}, {}, true);
        REQUIRE(res.status == Status::Optimal);
        for (double y : res.duals) CHECK(y <= 1e-9);
        CHECK(std::abs(fixtures::dual_objective(lp, res.duals) - res.objective) < 1e-6);
    }
}

TEST_CASE("LP dump lists every section") {
    Model m;
    const int x = m.add_variable("x", 0, 3, true, 2.0);
    const int y = m.add_variable("y", -1, kInfinity, false, -1.0);
    m.add_constraint("c1", {{x, 1.0}, {y, -2.5}}, Sense::GreaterEqual, 1.0);
    const auto text = m.to_lp_string();
    CHECK(text.find("Minimize") != std::string::npos);
    CHECK(text.find("c1: x - 2.5 y >= 1") != std::string::npos);
    CHECK(text.find("-1 <= y <= +inf") != std::string::npos);
    CHECK(text.find("General\n x\n") != std::string::npos);
}
