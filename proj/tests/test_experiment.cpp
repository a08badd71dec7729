#include "effitest/benchmark_io.hpp"
#include "effitest/experiment.hpp"

#include "model_fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace effitest;
using namespace fixtures;

namespace {

GeneratorConfig small_generator(std::uint64_t seed = 5) {
    GeneratorConfig g;
    g.flip_flops = 60;
    g.buffer_fraction = 0.1;
    g.paths = 40;
    g.clusters = 2;
    g.seed = seed;
    return g;
}

ExperimentConfig small_experiment(int chips = 24) {
    ExperimentConfig c;
    c.name = "small";
    c.generator = small_generator();
    c.chips = chips;
    c.chip_seed = 3;
    c.quantile_samples = 2000;
    c.hold.samples = 200;
    c.ablation_chips = 8;
    c.log_chips = 3;
    c.workers = 1;
    return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("effitest_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string all_csvs(const ExperimentResult& r) {
    std::string s = metrics_csv({r.metrics}) + yield_csv(r.metrics.benchmark, r.yields) + ablation_csv(r.ablation);
    for (const auto& y : r.yields) s += chips_csv(y.report);
    return s;
}

}  // namespace

TEST_CASE("experiment config survives a JSON round trip") {
    auto c = small_experiment();
    c.mode = Mode::MultiplexNoAlign;
    c.period_quantiles = {0.3, 0.6, 0.9};
    c.sigma_scale = 1.1;
    c.alignment_form = AlignmentForm::BigM;
    c.config_form = ConfigForm::Full;
    c.resolution = 0.01;
    const auto back = experiment_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.mode == Mode::MultiplexNoAlign);
    CHECK(back.alignment_form == AlignmentForm::BigM);
    CHECK(back.config_form == ConfigForm::Full);
    REQUIRE(back.generator.has_value());
    CHECK(back.generator->paths == 40);
}

TEST_CASE("experiment config rejects unknown keys and bad values") {
    auto j = to_json(small_experiment());
    j["chipz"] = 5;
    CHECK_THROWS(experiment_config_from_json(j));

    auto c = small_experiment();
    c.benchmark_file = "x.json";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_experiment();
    c.period_quantiles = {0.5, 0.5};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_experiment();
    c.period_quantiles = {1.0};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_experiment();
    c.sigma_scale = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS(mode_from_string("fast"));
    for (Mode m : {Mode::EffiTest, Mode::BaselinePathwise, Mode::MultiplexNoAlign, Mode::EffiTestNoPrediction}) {
        CHECK(mode_from_string(to_string(m)) == m);
    }
}

TEST_CASE("metric identities") {
    MetricsTable m;
    m.n_p = 300;
    m.n_pt = 20;
    m.t_a = 60.0;
    m.t_a_prime = 2400.0;
    m.finalize();
    CHECK(m.t_v == doctest::Approx(3.0));
    CHECK(m.t_v_prime == doctest::Approx(8.0));
    CHECK(m.r_a == doctest::Approx(97.5));
    CHECK(m.r_v == doctest::Approx(62.5));

    MetricsTable z;
    z.finalize();
    CHECK(z.t_v == 0.0);
    CHECK(z.r_a == 0.0);
}

TEST_CASE("pathwise baseline on one path takes eight iterations") {
    Eigen::VectorXd mu(1);
    mu << 5.0;
    Eigen::MatrixXd cov(1, 1);
    cov << 0.25;
    const DelayModel model = setup_model(mu, cov);
    const TimingGraph graph = disjoint_edges(1);
    const ModePlan plan = plan_mode(Mode::BaselinePathwise, graph, model);
    REQUIRE(plan.batches.size() == 1);
    CHECK_FALSE(plan.align);

    TesterConfig t;
    t.resolution = default_resolution(graph, model, graph.all_edge_ids());
    CHECK(t.resolution == doctest::Approx(6 * 0.5 / 256));
    const ChipSampler sampler(model);
    const HoldBounds hold(1, -mip::kInfinity);
    for (int c = 0; c < 20; ++c) {
        ChipTestResult r;
        const auto bounds = measure_chip(plan, sampler.sample(9, c), model, graph, t, hold, &r);
        if (!r.out_of_window.empty()) continue;
        CHECK(r.iterations == 8);
        CHECK(bounds.at(0).upper - bounds.at(0).lower <= t.resolution * (1 + 1e-9));
    }
}

TEST_CASE("plans: every mode measures the paths it claims") {
    const Benchmark b = generate_benchmark(small_generator());
    const auto all = b.graph.all_edge_ids();
    const auto eff = plan_mode(Mode::EffiTest, b.graph, b.model);
    CHECK(eff.predict);
    REQUIRE(eff.predictor.has_value());
    CHECK(eff.measured.size() < all.size());
    std::size_t in_batches = 0;
    for (const auto& batch : eff.batches) in_batches += batch.edges.size();
    CHECK(in_batches == eff.measured.size());
    CHECK(eff.measured.size() + eff.predictor->untested().size() == all.size());

    for (Mode m : {Mode::MultiplexNoAlign, Mode::EffiTestNoPrediction, Mode::BaselinePathwise}) {
        const auto p = plan_mode(m, b.graph, b.model);
        CHECK(p.measured.size() == all.size());
        CHECK_FALSE(p.predict);
        CHECK(p.align == (m == Mode::EffiTestNoPrediction));
    }
}

TEST_CASE("critical delay quantiles are ordered sample ranks") {
    const Benchmark b = generate_benchmark(small_generator());
    const auto q = critical_delay_quantiles(b.graph, b.model, {0.1, 0.5, 0.9}, 1000, 4);
    REQUIRE(q.size() == 3);
    CHECK(q[0] < q[1]);
    CHECK(q[1] < q[2]);
    // The no-buffer yield at the q-quantile of its own sample is q.
    const ChipSampler sampler(b.model);
    int pass = 0;
    for (int c = 0; c < 4000; ++c) pass += critical_delay(sampler.sample(77, c), b.graph) <= q[1];
    CHECK(pass / 4000.0 == doctest::Approx(0.5).epsilon(0.08));
}

TEST_CASE("empty inputs give header-only reports") {
    CHECK(metrics_csv({}) == "benchmark,n_s,n_g,n_b,n_p,n_pt,t_a,t_v,t_a_prime,t_v_prime,r_a,r_v\n");
    CHECK(ablation_csv({}) == "mode,chips,paths,batches,iterations_per_chip,iterations_per_path\n");
    CHECK(chips_csv(YieldReport{}) == "chip_id,feasible,setup_pass,hold_pass,xi,iterations\n");
    std::vector<PeriodYield> two(2);
    const auto y = yield_csv("b", two);
    CHECK(y.substr(0, y.find('\n')) == "benchmark,T1,y_i_T1,y_t_T1,y_r_T1,T2,y_i_T2,y_t_T2,y_r_T2");
}

TEST_CASE("small run: metrics, yields and ablation are consistent") {
    const auto r = run_experiment(small_experiment());
    const auto& m = r.metrics;
    CHECK(m.n_p == 40);
    CHECK(m.n_pt < m.n_p);
    CHECK(m.t_v == doctest::Approx(m.t_a / m.n_pt));
    CHECK(m.t_v_prime == doctest::Approx(m.t_a_prime / m.n_p));
    CHECK(m.r_a == doctest::Approx((m.t_a_prime - m.t_a) / m.t_a_prime * 100));
    CHECK(m.t_a < m.t_a_prime);

    REQUIRE(r.yields.size() == 2);
    CHECK(r.periods[0] < r.periods[1]);
    for (const auto& y : r.yields) {
        CHECK(y.report.verdicts.size() == 24);
        int pass = 0;
        for (const auto& v : y.report.verdicts) pass += v.pass();
        CHECK(y.report.y_tested == doctest::Approx(pass / 24.0));
        CHECK(y.report.y_ideal >= y.report.y_tested);
        CHECK(y.report.y_ideal >= y.report.y_no_buffer);
    }

    REQUIRE(r.ablation.size() == 4);
    CHECK(r.ablation[0].mode == Mode::BaselinePathwise);
    CHECK(r.ablation[3].mode == Mode::EffiTest);
    for (const auto& a : r.ablation) CHECK(a.chips == 8);

    // Only the first log_chips chips are logged.
    std::set<int> logged;
    for (const auto& rec : r.log.records()) logged.insert(rec.chip_id);
    CHECK(logged == std::set<int>{0, 1, 2});
}

TEST_CASE("mode dominance in iterations per path") {
    for (std::uint64_t seed : {21u, 22u}) {
        auto c = small_experiment(8);
        c.generator = small_generator(seed);
        c.ablation_chips = 100;
        c.chips = 100;
        c.workers = 0;
        c.period_quantiles = {0.5};
        const auto r = run_experiment(c);
        REQUIRE(r.ablation.size() == 4);
        const double base = r.ablation[0].iterations_per_path;
        const double no_align = r.ablation[1].iterations_per_path;
        const double aligned = r.ablation[2].iterations_per_path;
        CHECK(base >= no_align);
        CHECK(no_align >= aligned);
        CHECK(r.ablation[3].iterations_per_chip <= r.ablation[2].iterations_per_chip);
    }
}

TEST_CASE("runs are deterministic and independent of the worker count") {
    auto c = small_experiment(16);
    const auto a = run_experiment(c);
    c.workers = 3;
    const auto b = run_experiment(c);
    CHECK(all_csvs(a) == all_csvs(b));
    std::ostringstream la;
    std::ostringstream lb;
    a.log.write_jsonl(la);
    b.log.write_jsonl(lb);
    CHECK(la.str() == lb.str());
}

TEST_CASE("reports round trip through results.json") {
    const auto r = run_experiment(small_experiment(12));
    const auto dir = scratch_dir("roundtrip");
    emit_reports(r, dir);
    for (const char* f : {"metrics.csv", "yield.csv", "ablation.csv", "chips_T1.csv", "chips_T2.csv",
                          "iterations.jsonl", "summary.json", "manifest.json", "runtime.json", "results.json"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    CHECK(slurp(dir / "metrics.csv").find("T_p") == std::string::npos);

    const auto back = load_results(dir);
    CHECK(all_csvs(back) == all_csvs(r));
    CHECK(back.log.records().size() == r.log.records().size());
    CHECK(back.hold == r.hold);
    CHECK(summary_json(back) == summary_json(r));

    const auto again = scratch_dir("roundtrip2");
    emit_reports(back, again);
    for (const char* f : {"metrics.csv", "yield.csv", "ablation.csv", "chips_T1.csv", "iterations.jsonl",
                          "summary.json", "manifest.json"}) {
        CHECK(slurp(dir / f) == slurp(again / f));
    }
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(again);
}

TEST_CASE("a benchmark file gives the same run as the inline generator") {
    const auto dir = scratch_dir("benchfile");
    std::filesystem::create_directories(dir);
    save_benchmark(generate_benchmark(small_generator()), dir / "bench.json");
    auto inline_cfg = small_experiment(10);
    auto file_cfg = inline_cfg;
    file_cfg.generator.reset();
    file_cfg.benchmark_file = (dir / "bench.json").string();
    CHECK(all_csvs(run_experiment(inline_cfg)) == all_csvs(run_experiment(file_cfg)));
    std::filesystem::remove_all(dir);
}

TEST_CASE("failures name the stage") {
    auto c = small_experiment();
    c.generator.reset();
    c.benchmark_file = "/nonexistent/bench.json";
    try {
        run_experiment(c);
        FAIL("expected an error");
    } catch (const ExperimentError& e) {
        CHECK(e.stage() == "load");
    }
    c = small_experiment();
    c.chips = 0;
    try {
        run_experiment(c);
        FAIL("expected an error");
    } catch (const ExperimentError& e) {
        CHECK(e.stage() == "config");
    }
    CHECK_THROWS(load_results("/nonexistent/dir"));
}

TEST_CASE("enlarged variance: larger drop, buffers still help") {
    auto c = small_experiment(300);
    c.generator->seed = 8;
    c.workers = 0;
    c.ablation_chips = 0;
    const auto base = run_experiment(c);
    c.sigma_scale = 1.1;
    const auto wide = run_experiment(c);
    double drop_base = 0.0;
    double drop_wide = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
        drop_base += base.yields[k].report.drop();
        drop_wide += wide.yields[k].report.drop();
        CHECK(wide.yields[k].report.y_tested > wide.yields[k].report.y_no_buffer);
    }
    CHECK(drop_wide >= drop_base);
    CHECK(wide.resolution > base.resolution);
}
