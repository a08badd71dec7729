#include "effitest/stats.hpp"
#include "effitest/tester.hpp"

#include "model_fixtures.hpp"
#include "alignment_oracle.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace effitest;

namespace {

TesterConfig config(double resolution) {
    TesterConfig cfg;
    cfg.resolution = resolution;
    return cfg;
}

// Graph where edge e runs 2e -> 2e+1; `buffered` lists flip-flops that get
// a buffer over [start, start + width] with `steps` levels.
TimingGraph buffered_pairs(int edges, const std::vector<NodeId>& buffered, double start, double width, int steps) {
    std::vector<FlipFlop> nodes(static_cast<std::size_t>(2 * edges));
    for (int i = 0; i < 2 * edges; ++i) nodes[static_cast<std::size_t>(i)].id = i;
    for (NodeId n : buffered) {
        TuningBuffer b(start, width, steps);
        b.set_level(b.nearest_level(0.0));
        nodes[static_cast<std::size_t>(n)].buffer = b;
    }
    std::vector<TimingEdge> es;
    for (int e = 0; e < edges; ++e) es.push_back({e, 2 * e, 2 * e + 1, e, edges + e});
    return TimingGraph(nodes, es, 10.0);
}

}  // namespace

TEST_CASE("alignment weights") {
    const std::vector<DelayBound> b{{0, 7, 9}, {1, 4, 6}, {2, 5, 7}, {3, 0, 2}};
    // Sorted centers: 1 (e3), 5 (e1), 6 (e2), 8 (e0); middle index 1.
    const auto w = alignment_weights(b, 1000, 1);
    CHECK(w[1] == 1000);
    CHECK(w[3] == 999);
    CHECK(w[2] == 999);
    CHECK(w[0] == 998);
}

TEST_CASE("compute_frequency without buffers") {
    const auto g = fixtures::disjoint_edges(2);
    const auto cfg = config(0.01);
    SUBCASE("one range: its midpoint") {
        const auto c = compute_frequency({{0, 4.0, 6.0}}, g, {}, cfg);
        CHECK(c.period == doctest::Approx(5.0));
        CHECK(c.objective == doctest::Approx(0.0));
        CHECK_FALSE(c.solved_by_milp);
    }
    SUBCASE("coincident centers") {
        const auto c = compute_frequency({{0, 4.0, 6.0}, {1, 3.0, 7.0}}, g, {}, cfg);
        CHECK(c.period == doctest::Approx(5.0));
        CHECK(c.objective == doctest::Approx(0.0));
    }
    SUBCASE("disjoint ranges: center of the heavier one") {
        const auto c = compute_frequency({{0, 4.0, 6.0}, {1, 9.0, 11.0}}, g, {}, cfg);
        CHECK(c.period == doctest::Approx(5.0));
    }
}

TEST_CASE("compute_frequency shifts a range with a sink buffer") {
    // Edge 1 (2 -> 3) has a buffer at 3 over [0, 1.5]: shift x_2 - x_3 in [-1.5, 0].
    const auto g = buffered_pairs(2, {3}, 0.0, 1.5, 4);
    const auto cfg = config(0.01);
    const std::vector<DelayBound> active{{0, 4.0, 6.0}, {1, 7.0, 9.0}};
    const auto c = compute_frequency(active, g, {}, cfg);
    CHECK(c.solved_by_milp);
    CHECK(c.levels.at(3) == 3);
    CHECK(c.shifts[1] == doctest::Approx(-1.5));
    // Weighted optimum: T = 5 with the shifted center at 6.5 (weight 999).
    CHECK(c.period == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(c.objective == doctest::Approx(999 * 1.5));
    CHECK(std::abs(c.objective - oracle::alignment_objective(active, g, {}, cfg)) <= 1e-3 * cfg.k0);
}

TEST_CASE("ranges that cannot meet align to the heavier one") {
    const auto g = buffered_pairs(2, {3}, 0.0, 1.0, 3);
    const auto cfg = config(0.01);
    // Centers 5 and 10; even the full shift of -1 leaves them apart.
    const auto c = compute_frequency({{0, 4.0, 6.0}, {1, 9.0, 11.0}}, g, {}, cfg);
    CHECK(c.period == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("alignment MILP matches exhaustive enumeration") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> edges_dist(1, 3);
    std::uniform_int_distribution<int> levels_dist(2, 5);
    std::uniform_int_distribution<int> milli(0, 4000);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = edges_dist(rng);
        const int steps = levels_dist(rng);
        // Chain 0 -> 1 -> 2 -> 3 so buffers are shared between edges.
        std::vector<FlipFlop> nodes(static_cast<std::size_t>(n + 1));
        for (int i = 0; i <= n; ++i) {
            nodes[static_cast<std::size_t>(i)].id = i;
            if (coin(rng) || i == 1) {
                TuningBuffer b(-1.0, 0.25 * (steps - 1), steps);
                b.set_level(b.nearest_level(0.0));
                nodes[static_cast<std::size_t>(i)].buffer = b;
            }
        }
        std::vector<TimingEdge> es;
        for (int e = 0; e < n; ++e) es.push_back({e, e, e + 1, e, n + e});
        const TimingGraph g(nodes, es, 10.0);
        std::vector<DelayBound> active;
        for (int e = 0; e < n; ++e) {
            const double c = 5.0 + milli(rng) * 1e-3;
            const double half = 0.5 + (milli(rng) % 1000) * 1e-3;
            active.push_back({e, c - half, c + half});
        }
        HoldBounds hold;
        if (trial % 4 == 3) {
            // Satisfied by the default levels, sometimes binding elsewhere.
            for (int e = 0; e < n; ++e) hold.push_back(g.edge_shift(e) - 0.25 * (milli(rng) % 4));
        }
        for (auto form : {AlignmentForm::Epigraph, AlignmentForm::BigM}) {
            auto cfg = config(0.01);
            cfg.gap = 0.0;
            cfg.form = form;
            const auto c = compute_frequency(active, g, hold, cfg);
            const double expect = oracle::alignment_objective(active, g, hold, cfg);
            CHECK(std::abs(c.objective - expect) <= 1e-3 * cfg.k0);
            CHECK(c.objective <= expect + 1e-6);
            for (const auto& [node, level] : c.levels) {
                CHECK(level >= 0);
                CHECK(level < g.flip_flop(node).buffer->step_count());
            }
        }
    }
}

TEST_CASE("contradictory hold bounds are reported") {
    const auto g = buffered_pairs(1, {0, 1}, -0.5, 1.0, 3);
    const auto cfg = config(0.01);
    const HoldBounds hold{5.0};  // x_0 - x_1 >= 5 is out of reach
    try {
        (void)compute_frequency({{0, 4.0, 6.0}}, g, hold, cfg);
        FAIL("expected AlignmentError");
    } catch (const AlignmentError& e) {
        CHECK_FALSE(e.constraints().empty());
    }
}

TEST_CASE("apply_frequency_step") {
    const auto g = fixtures::disjoint_edges(2);
    Eigen::VectorXd d(4);
    d << 7.9, 8.1, -1, -1;
    const ChipInstance chip{0, d};
    const auto pass = apply_frequency_step({0, 1}, chip, g, 8.0);
    CHECK(pass[0]);
    CHECK_FALSE(pass[1]);
}

TEST_CASE("loop of four balances at 5.5 with one buffer moved") {
    auto bench = fixtures::loop_of_four();
    const auto chip = fixtures::mean_chip(bench.model);
    auto& g = bench.graph;
    const std::vector<EdgeId> all{0, 1, 2, 3};
    // Without tuning the slowest stage needs 8.
    CHECK_FALSE(apply_frequency_step(all, chip, g, 7.9)[1]);
    g.set_buffer_level(1, g.flip_flop(1).buffer->nearest_level(-2.5));
    CHECK(g.buffer_value(1) == doctest::Approx(-2.5));
    for (bool p : apply_frequency_step(all, chip, g, 5.5)) CHECK(p);
    const auto at54 = apply_frequency_step(all, chip, g, 5.4);
    CHECK(std::count(at54.begin(), at54.end(), false) >= 1);
}

TEST_CASE("single edge bisection counts") {
    const auto g = fixtures::disjoint_edges(1);
    const double sigma = 0.5;
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(1, 10.0), Eigen::MatrixXd::Constant(1, 1, sigma * sigma));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> inside(10.0 - 3 * sigma, 10.0 + 3 * sigma);
    for (int halvings : {8, 6}) {
        const auto cfg = config(6.0 * sigma / std::ldexp(1.0, halvings));
        for (int k = 0; k < 50; ++k) {
            Eigen::VectorXd d(2);
            d << inside(rng), -1.0;
            TimingGraph work = g;
            const auto r = run_batch_test(TestBatch{0, {0}, 2}, ChipInstance{k, d}, m, work,
                                          initial_bounds(g, m, {0}), cfg, {});
            CHECK(r.iterations == halvings);
            const auto& b = r.bounds.at(0);
            CHECK(b.lower <= d(0));
            CHECK(d(0) <= b.upper);
            CHECK(b.width() == doctest::Approx(cfg.resolution));
        }
    }
}

TEST_CASE("delays outside the window collapse onto its edge") {
    const auto g = fixtures::disjoint_edges(1);
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(1, 10.0), Eigen::MatrixXd::Constant(1, 1, 1.0));
    const auto cfg = config(6.0 / 256.0);
    Eigen::VectorXd d(2);
    d << 14.0, -1.0;  // 4 sigma above the mean
    TimingGraph work = g;
    IterationLog log;
    const auto r = run_batch_test(TestBatch{0, {0}, 2}, ChipInstance{0, d}, m, work, initial_bounds(g, m, {0}), cfg, {}, &log);
    CHECK(r.out_of_window == std::vector<EdgeId>{0});
    CHECK(r.bounds.at(0).upper == doctest::Approx(13.0));
    CHECK(r.bounds.at(0).lower == doctest::Approx(13.0 - cfg.resolution));
    CHECK(r.iterations == 8);
}

TEST_CASE("two identical aligned edges cost one edge's iterations") {
    const auto g = fixtures::disjoint_edges(2);
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(2, 10.0), Eigen::MatrixXd::Ones(2, 2));
    const auto cfg = config(6.0 / 256.0);
    for (double v : {8.3, 10.0, 11.9}) {
        Eigen::VectorXd d(4);
        d << v, v, -1, -1;
        TimingGraph work = g;
        const auto r = run_batch_test(TestBatch{0, {0, 1}, 4}, ChipInstance{0, d}, m, work,
                                      initial_bounds(g, m, {0, 1}), cfg, {});
        CHECK(r.iterations == 8);
    }
}

TEST_CASE("alignment saves iterations over sequential stepping") {
    // Both edges end in buffered flip-flops with a range wide enough to line
    // up any two delays within the window.
    const auto g = buffered_pairs(2, {1, 3}, -4.0, 8.0, 161);
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(2, 10.0), Eigen::MatrixXd::Identity(2, 2));
    auto cfg = config(6.0 / 256.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> inside(7.0, 13.0);
    int aligned = 0;
    int plain = 0;
    for (int k = 0; k < 20; ++k) {
        Eigen::VectorXd d(4);
        d << inside(rng), inside(rng), -1, -1;
        TimingGraph a = g;
        TimingGraph b = g;
        cfg.align = true;
        aligned += run_batch_test(TestBatch{0, {0, 1}, 4}, ChipInstance{k, d}, m, a, initial_bounds(g, m, {0, 1}), cfg, {}).iterations;
        cfg.align = false;
        plain += run_batch_test(TestBatch{0, {0, 1}, 4}, ChipInstance{k, d}, m, b, initial_bounds(g, m, {0, 1}), cfg, {}).iterations;
    }
    CHECK(aligned < plain);
}

TEST_CASE("chip test on a generated benchmark: bracketing, monotone bounds, replay") {
    GeneratorConfig gen;
    gen.flip_flops = 120;
    gen.buffer_fraction = 0.05;
    gen.paths = 50;
    gen.clusters = 3;
    gen.seed = 12;
    const auto bench = generate_benchmark(gen);
    const auto plan = plan_test_set(bench.graph.all_edge_ids(), bench.graph, bench.model);
    const auto batches = form_batches(bench.graph.all_edge_ids(), bench.graph);
    auto cfg = config(default_resolution(bench.graph, bench.model, bench.graph.all_edge_ids()));
    const ChipSampler sampler(bench.model);

    double max_sd = 0.0;
    for (EdgeId e : bench.graph.all_edge_ids()) max_sd = std::max(max_sd, bench.model.stddev(e));
    const int per_edge_cap = static_cast<int>(std::ceil(std::log2(6.0 * max_sd / cfg.resolution))) + 1;

    const auto start = initial_bounds(bench.graph, bench.model, bench.graph.all_edge_ids());
    for (int chip_id = 0; chip_id < 40; ++chip_id) {
        const auto chip = sampler.sample(5, chip_id);
        TimingGraph work = bench.graph;
        IterationLog log;
        const auto r = run_chip_test(batches, chip, bench.model, work, cfg, {}, &log);
        CHECK_FALSE(r.guard_tripped);
        for (const auto& [e, b] : r.bounds) {
            const double d = chip.true_delays(e);
            const auto& s = start.at(e);
            if (d >= s.lower && d <= s.upper) {
                CHECK(b.lower <= d);
                CHECK(d <= b.upper);
            }
            CHECK(b.width() <= cfg.resolution * (1 + 1e-9));
        }
        for (std::size_t k = 0; k < batches.size(); ++k) {
            CHECK(r.batch_iterations[k] <= per_edge_cap * static_cast<int>(batches[k].edges.size()));
        }

        // Replay through the text form and compare every step.
        std::stringstream text;
        log.write_jsonl(text);
        const auto back = IterationLog::read_jsonl(text);
        REQUIRE(back.records().size() == log.records().size());
        std::map<EdgeId, DelayBound> cur = start;
        for (const auto& rec : back.records()) {
            std::map<NodeId, double> value(rec.buffers.begin(), rec.buffers.end());
            for (const auto& step : rec.edges) {
                const auto& e = bench.graph.edge(step.edge);
                const double xs = value.count(e.src) ? value[e.src] : 0.0;
                const double xd = value.count(e.dst) ? value[e.dst] : 0.0;
                CHECK(step.shift == xs - xd);
                CHECK(step.threshold == rec.period - step.shift);
                auto& b = cur.at(step.edge);
                const double old_l = b.lower, old_u = b.upper;
                update_bound(b, step.threshold, step.pass);
                CHECK(b.lower == step.lower);
                CHECK(b.upper == step.upper);
                CHECK(b.lower >= old_l);
                CHECK(b.upper <= old_u);
                CHECK(b.lower <= b.upper);
            }
        }
        const auto replayed = replay_bounds(back, start);
        for (const auto& [e, b] : r.bounds) {
            CHECK(replayed.at(e).lower == b.lower);
            CHECK(replayed.at(e).upper == b.upper);
        }
        // Buffers are back at their defaults.
        for (NodeId n : work.buffered_nodes()) {
            CHECK(work.flip_flop(n).buffer->level() == bench.graph.flip_flop(n).buffer->level());
        }
    }
    (void)plan;
}

TEST_CASE("zero batches cost nothing") {
    const auto g = fixtures::disjoint_edges(1);
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(1, 10.0), Eigen::MatrixXd::Identity(1, 1));
    TimingGraph work = g;
    const auto r = run_chip_test({}, fixtures::mean_chip(m), m, work, config(0.1), {});
    CHECK(r.iterations == 0);
    CHECK(r.bounds.empty());
}

TEST_CASE("tester config validation") {
    const auto g = fixtures::disjoint_edges(1);
    const auto m = fixtures::setup_model(Eigen::VectorXd::Constant(1, 10.0), Eigen::MatrixXd::Identity(1, 1));
    TimingGraph work = g;
    CHECK_THROWS(run_batch_test(TestBatch{0, {0}, 2}, fixtures::mean_chip(m), m, work, initial_bounds(g, m, {0}),
                                config(0.0), {}));
    CHECK(default_resolution(g, m, {0}) == doctest::Approx(6.0 / 256.0));
}
