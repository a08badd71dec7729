#include "effitest/experiment.hpp"

#include "effitest/benchmark_io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace effitest {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs fn(i) for i in [0, n) on `workers` threads; the first exception is
// rethrown after every thread has joined.
template <class Fn>
void parallel_for(int n, int workers, Fn fn) {
    if (n <= 0) return;
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next.store(n);
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

int worker_count(const ExperimentConfig& cfg) {
    if (cfg.workers > 0) return cfg.workers;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

template <class Fn>
auto stage(const std::string& name, Fn fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ExperimentError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExperimentError(name, e.what());
    }
}

const char* form_name(AlignmentForm f) { return f == AlignmentForm::Epigraph ? "epigraph" : "big-m"; }
const char* form_name(ConfigForm f) { return f == ConfigForm::Aggregated ? "aggregated" : "full"; }

AlignmentForm alignment_form_from(const std::string& s) {
    if (s == "epigraph") return AlignmentForm::Epigraph;
    if (s == "big-m") return AlignmentForm::BigM;
    throw std::invalid_argument("unknown alignment form '" + s + "'");
}

ConfigForm config_form_from(const std::string& s) {
    if (s == "aggregated") return ConfigForm::Aggregated;
    if (s == "full") return ConfigForm::Full;
    throw std::invalid_argument("unknown configuration form '" + s + "'");
}

TesterConfig tester_config(const ExperimentConfig& cfg, double resolution, bool align) {
    TesterConfig t;
    t.resolution = resolution;
    t.align = align;
    t.form = cfg.alignment_form;
    return t;
}

}  // namespace

const char* to_string(Mode mode) {
    switch (mode) {
        case Mode::EffiTest: return "effitest";
        case Mode::BaselinePathwise: return "baseline-pathwise";
        case Mode::MultiplexNoAlign: return "multiplex-no-align";
        case Mode::EffiTestNoPrediction: return "effitest-no-prediction";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    for (Mode m : {Mode::EffiTest, Mode::BaselinePathwise, Mode::MultiplexNoAlign, Mode::EffiTestNoPrediction}) {
        if (s == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown mode '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (generator.has_value() == !benchmark_file.empty()) {
        throw std::invalid_argument("give exactly one of generator and benchmark_file");
    }
    if (generator) generator->validate();
    if (chips < 1) throw std::invalid_argument("chip count must be at least 1");
    if (period_quantiles.empty()) throw std::invalid_argument("at least one period is required");
    std::set<double> seen;
    for (double q : period_quantiles) {
        if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("period quantiles must lie in (0, 1)");
        if (!seen.insert(q).second) throw std::invalid_argument("period quantiles must be distinct");
    }
    if (quantile_samples < 1) throw std::invalid_argument("quantile_samples must be positive");
    if (!(resolution >= 0.0) || !std::isfinite(resolution)) throw std::invalid_argument("resolution must be >= 0");
    hold.validate();
    if (!(sigma_scale > 0.0) || !std::isfinite(sigma_scale)) throw std::invalid_argument("sigma_scale must be positive");
    if (ablation_chips < 0 || log_chips < 0 || workers < 0) {
        throw std::invalid_argument("ablation_chips, log_chips and workers must be non-negative");
    }
}

json to_json(const ExperimentConfig& cfg) {
    json j{
        {"name", cfg.name},
        {"chips", cfg.chips},
        {"chip_seed", cfg.chip_seed},
        {"mode", to_string(cfg.mode)},
        {"period_quantiles", cfg.period_quantiles},
        {"quantile_samples", cfg.quantile_samples},
        {"quantile_seed", cfg.quantile_seed},
        {"resolution", cfg.resolution},
        {"hold",
         {{"samples", cfg.hold.samples},
          {"target", cfg.hold.target},
          {"seed", cfg.hold.seed},
          {"exact_limit", cfg.hold.exact_limit}}},
        {"sigma_scale", cfg.sigma_scale},
        {"alignment_form", form_name(cfg.alignment_form)},
        {"config_form", form_name(cfg.config_form)},
        {"ablation_chips", cfg.ablation_chips},
        {"log_chips", cfg.log_chips},
        {"workers", cfg.workers},
    };
    if (cfg.generator) j["generator"] = to_json(*cfg.generator);
    if (!cfg.benchmark_file.empty()) j["benchmark_file"] = cfg.benchmark_file;
    return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
    static const std::set<std::string> known{
        "name", "generator", "benchmark_file", "chips", "chip_seed", "mode", "period_quantiles",
        "quantile_samples", "quantile_seed", "resolution", "hold", "sigma_scale", "alignment_form",
        "config_form", "ablation_chips", "log_chips", "workers"};
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw std::invalid_argument("unknown experiment config key '" + key + "'");
    }
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    if (j.contains("generator")) cfg.generator = generator_config_from_json(j.at("generator"));
    cfg.benchmark_file = j.value("benchmark_file", cfg.benchmark_file);
    cfg.chips = j.value("chips", cfg.chips);
    cfg.chip_seed = j.value("chip_seed", cfg.chip_seed);
    if (j.contains("mode")) cfg.mode = mode_from_string(j.at("mode").get<std::string>());
    cfg.period_quantiles = j.value("period_quantiles", cfg.period_quantiles);
    cfg.quantile_samples = j.value("quantile_samples", cfg.quantile_samples);
    cfg.quantile_seed = j.value("quantile_seed", cfg.quantile_seed);
    cfg.resolution = j.value("resolution", cfg.resolution);
    if (j.contains("hold")) {
        const auto& h = j.at("hold");
        cfg.hold.samples = h.value("samples", cfg.hold.samples);
        cfg.hold.target = h.value("target", cfg.hold.target);
        cfg.hold.seed = h.value("seed", cfg.hold.seed);
        cfg.hold.exact_limit = h.value("exact_limit", cfg.hold.exact_limit);
    }
    cfg.sigma_scale = j.value("sigma_scale", cfg.sigma_scale);
    if (j.contains("alignment_form")) cfg.alignment_form = alignment_form_from(j.at("alignment_form").get<std::string>());
    if (j.contains("config_form")) cfg.config_form = config_form_from(j.at("config_form").get<std::string>());
    cfg.ablation_chips = j.value("ablation_chips", cfg.ablation_chips);
    cfg.log_chips = j.value("log_chips", cfg.log_chips);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.validate();
    return cfg;
}

void MetricsTable::finalize() {
    t_v = n_pt > 0 ? t_a / n_pt : 0.0;
    t_v_prime = n_p > 0 ? t_a_prime / n_p : 0.0;
    r_a = t_a_prime > 0.0 ? (t_a_prime - t_a) / t_a_prime * 100.0 : 0.0;
    r_v = t_v_prime > 0.0 ? (t_v_prime - t_v) / t_v_prime * 100.0 : 0.0;
}

Benchmark load_experiment_benchmark(const ExperimentConfig& cfg) {
    Benchmark b = cfg.generator ? generate_benchmark(*cfg.generator) : load_benchmark(cfg.benchmark_file);
    if (cfg.sigma_scale != 1.0) b.model = b.model.with_scaled_stddev(cfg.sigma_scale);
    return b;
}

ModePlan plan_mode(Mode mode, const TimingGraph& graph, const DelayModel& model) {
    ModePlan p;
    p.mode = mode;
    const auto all = graph.all_edge_ids();
    switch (mode) {
        case Mode::EffiTest: {
            const auto plan = plan_test_set(all, graph, model);
            const DelayPredictor first(graph, model, plan.groups, plan.tested);
            auto fill = fill_empty_slots(form_batches(plan.tested, graph), first.untested(),
                                         first.conditional_stddev(), graph);
            p.batches = std::move(fill.batches);
            p.measured = plan.tested;
            p.measured.insert(p.measured.end(), fill.promoted.begin(), fill.promoted.end());
            // Filled paths are measured too, so they join the conditioning set.
            p.predictor.emplace(graph, model, plan.groups, p.measured);
            p.predict = true;
            break;
        }
        case Mode::EffiTestNoPrediction:
        case Mode::MultiplexNoAlign:
            p.batches = form_batches(all, graph);
            p.measured = all;
            p.align = mode == Mode::EffiTestNoPrediction;
            break;
        case Mode::BaselinePathwise:
            for (EdgeId e : all) {
                p.batches.push_back(TestBatch{static_cast<int>(p.batches.size()), {e}, graph.num_flip_flops()});
            }
            p.measured = all;
            p.align = false;
            break;
    }
    return p;
}

std::vector<double> critical_delay_quantiles(const TimingGraph& graph, const DelayModel& model,
                                             const std::vector<double>& quantiles, int samples,
                                             std::uint64_t seed) {
    const int n = graph.num_edges();
    Eigen::VectorXd mu(n);
    Eigen::MatrixXd cov(n, n);
    std::vector<VariableLabel> labels;
    for (int a = 0; a < n; ++a) {
        const int va = graph.edge(a).setup_var;
        mu(a) = model.mean(va);
        for (int b = 0; b < n; ++b) cov(a, b) = model.covariance()(va, graph.edge(b).setup_var);
        labels.push_back({a, VariableKind::SetupDelay});
    }
    const ChipSampler sampler(DelayModel(mu, cov, labels));
    std::vector<double> crit;
    crit.reserve(static_cast<std::size_t>(samples));
    for (int k = 0; k < samples; ++k) crit.push_back(sampler.sample(seed, k).true_delays.maxCoeff());
    std::sort(crit.begin(), crit.end());
    std::vector<double> out;
    for (double q : quantiles) {
        const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q * samples - 1e-9)));
        out.push_back(crit[std::min(rank, crit.size()) - 1]);
    }
    return out;
}

std::map<EdgeId, DelayBound> measure_chip(const ModePlan& plan, const ChipInstance& chip, const DelayModel& model,
                                          const TimingGraph& graph, const TesterConfig& cfg, const HoldBounds& hold,
                                          ChipTestResult* test, IterationLog* log) {
    TimingGraph g = graph;
    TesterConfig t = cfg;
    t.align = plan.align;
    auto r = run_chip_test(plan.batches, chip, model, g, t, hold, log);
    auto bounds = r.bounds;
    if (plan.predict && plan.predictor) {
        std::map<EdgeId, double> measured;
        for (EdgeId e : plan.measured) measured[e] = r.bounds.at(e).upper;
        for (const auto& p : plan.predictor->predict(measured)) {
            bounds[p.edge] = DelayBound{p.edge, p.lower(), p.upper()};
        }
    }
    if (test) *test = std::move(r);
    return bounds;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    stage("config", [&] {
        cfg.validate();
        return 0;
    });
    ExperimentResult out;
    out.config = cfg;
    const Benchmark bench = stage("load", [&] { return load_experiment_benchmark(cfg); });
    const TimingGraph& graph = bench.graph;
    const DelayModel& model = bench.model;
    const int workers = worker_count(cfg);

    auto& m = out.metrics;
    m.benchmark = cfg.name;
    m.n_s = graph.num_flip_flops();
    m.n_g = bench.generator ? bench.generator->gate_count : 0;
    m.n_b = graph.num_buffers();
    m.n_p = graph.num_edges();

    const auto t_plan = Clock::now();
    out.hold = stage("hold_bounds", [&] { return compute_hold_bounds(graph, model, cfg.hold).lambda; });
    const ModePlan plan = stage("plan", [&] { return plan_mode(cfg.mode, graph, model); });
    const ModePlan baseline = plan_mode(Mode::BaselinePathwise, graph, model);
    m.T_p = seconds_since(t_plan);
    m.n_pt = static_cast<int>(plan.measured.size());

    out.resolution = cfg.resolution > 0.0 ? cfg.resolution : default_resolution(graph, model, graph.all_edge_ids());
    out.periods = stage("periods", [&] {
        return critical_delay_quantiles(graph, model, cfg.period_quantiles, cfg.quantile_samples, cfg.quantile_seed);
    });
    const TesterConfig tcfg = tester_config(cfg, out.resolution, true);
    ConfigOptions copt;
    copt.form = cfg.config_form;

    const ChipSampler sampler(model);
    const std::size_t np = out.periods.size();
    std::vector<ChipOutcome> chips(static_cast<std::size_t>(cfg.chips));
    std::vector<IterationLog> logs(static_cast<std::size_t>(std::min(cfg.chips, cfg.log_chips)));
    std::vector<int> baseline_iterations(static_cast<std::size_t>(cfg.chips), 0);

    stage("chips", [&] {
        parallel_for(cfg.chips, workers, [&](int c) {
            const auto idx = static_cast<std::size_t>(c);
            const ChipInstance chip = sampler.sample(cfg.chip_seed, c);
            ChipOutcome& o = chips[idx];
            o.chip_id = c;

            const auto t0 = Clock::now();
            ChipTestResult test;
            IterationLog* log = idx < logs.size() ? &logs[idx] : nullptr;
            const auto bounds = measure_chip(plan, chip, model, graph, tcfg, out.hold, &test, log);
            o.test_seconds = seconds_since(t0);
            o.iterations = test.iterations;
            o.out_of_window = !test.out_of_window.empty();
            o.guard_tripped = test.guard_tripped;

            ChipTestResult base;
            measure_chip(baseline, chip, model, graph, tcfg, out.hold, &base);
            baseline_iterations[idx] = base.iterations;

            const auto t1 = Clock::now();
            for (std::size_t k = 0; k < np; ++k) {
                ConfigProblem problem{out.periods[k], bounds, out.hold};
                o.configs.push_back(configure_buffers(graph, problem, copt));
            }
            o.config_seconds = seconds_since(t1);
            for (std::size_t k = 0; k < np; ++k) {
                const auto& conf = o.configs[k];
                ChipVerdict v;
                if (conf.feasible) {
                    v = check_chip(chip, graph, &conf.levels, out.periods[k]);
                } else {
                    v.chip_id = c;
                }
                v.xi = conf.xi;
                v.iterations = o.iterations;
                o.verdicts.push_back(v);
                const auto best = ideal_configuration(chip, graph, out.periods[k], out.hold, copt);
                o.ideal_pass.push_back(best.feasible && check_chip(chip, graph, &best.levels, out.periods[k]).pass());
                o.no_buffer_pass.push_back(check_chip(chip, graph, nullptr, out.periods[k]).pass());
            }
        });
        return 0;
    });

    double iter_sum = 0.0;
    double base_sum = 0.0;
    double test_time = 0.0;
    double config_time = 0.0;
    for (std::size_t c = 0; c < chips.size(); ++c) {
        iter_sum += chips[c].iterations;
        base_sum += baseline_iterations[c];
        test_time += chips[c].test_seconds;
        config_time += chips[c].config_seconds;
        out.out_of_window_chips += chips[c].out_of_window;
        out.guard_tripped_chips += chips[c].guard_tripped;
    }
    const double n = static_cast<double>(chips.size());
    m.t_a = iter_sum / n;
    m.t_a_prime = base_sum / n;
    m.T_t = test_time / n;
    m.T_s = config_time / n;
    m.finalize();

    for (std::size_t k = 0; k < np; ++k) {
        PeriodYield py;
        py.quantile = cfg.period_quantiles[k];
        py.report.period = out.periods[k];
        int tested = 0;
        int ideal = 0;
        int bare = 0;
        for (const auto& o : chips) {
            py.report.verdicts.push_back(o.verdicts[k]);
            tested += o.verdicts[k].pass();
            ideal += o.ideal_pass[k];
            bare += o.no_buffer_pass[k];
        }
        py.report.y_tested = tested / n;
        py.report.y_ideal = ideal / n;
        py.report.y_no_buffer = bare / n;
        out.yields.push_back(std::move(py));
    }
    for (auto& l : logs) out.log.append(l);

    const int ab = std::min(cfg.ablation_chips, cfg.chips);
    if (ab > 0) {
        stage("ablation", [&] {
            for (Mode mode : {Mode::BaselinePathwise, Mode::MultiplexNoAlign, Mode::EffiTestNoPrediction,
                              Mode::EffiTest}) {
                std::optional<ModePlan> local;
                const ModePlan* p = &baseline;
                if (mode == cfg.mode) {
                    p = &plan;
                } else if (mode != Mode::BaselinePathwise) {
                    local = plan_mode(mode, graph, model);
                    p = &*local;
                }
                std::vector<int> iters(static_cast<std::size_t>(ab), 0);
                parallel_for(ab, workers, [&](int c) {
                    ChipTestResult r;
                    measure_chip(*p, sampler.sample(cfg.chip_seed, c), model, graph, tcfg, out.hold, &r);
                    iters[static_cast<std::size_t>(c)] = r.iterations;
                });
                AblationRow row;
                row.mode = mode;
                row.chips = ab;
                row.paths = static_cast<int>(p->measured.size());
                row.batches = static_cast<int>(p->batches.size());
                double sum = 0.0;
                for (int v : iters) sum += v;
                row.iterations_per_chip = sum / ab;
                row.iterations_per_path = row.paths > 0 ? row.iterations_per_chip / row.paths : 0.0;
                out.ablation.push_back(row);
            }
            return 0;
        });
    }
    return out;
}

}  // namespace effitest
