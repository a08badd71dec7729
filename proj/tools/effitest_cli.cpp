// effitest: generate benchmarks, run experiments, replay manifests and
// re-emit reports.

#include "effitest/benchmark_io.hpp"
#include "effitest/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

using namespace effitest;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void print_summary(const ExperimentResult& r, const std::string& out) {
    const auto& m = r.metrics;
    std::printf("%s: n_p=%d n_pt=%d t_a=%.2f t'_a=%.2f r_a=%.2f%% r_v=%.2f%%\n", m.benchmark.c_str(), m.n_p, m.n_pt,
                m.t_a, m.t_a_prime, m.r_a, m.r_v);
    for (std::size_t k = 0; k < r.yields.size(); ++k) {
        const auto& y = r.yields[k].report;
        std::printf("  T%zu=%.4f  y_i=%.2f%% y_t=%.2f%% y_r=%.2f%% no-buffer=%.2f%%\n", k + 1, y.period,
                    100 * y.y_ideal, 100 * y.y_tested, 100 * y.drop(), 100 * y.y_no_buffer);
    }
    std::printf("reports written to %s\n", out.c_str());
}

ExperimentResult run_and_emit(ExperimentConfig cfg, const std::string& out) {
    auto result = run_experiment(cfg);
    emit_reports(result, out);
    print_summary(result, out);
    return result;
}

// Re-derives every logged bound from the starting windows and compares it
// with the bounds recorded in the log.
int verify_log(const ExperimentResult& r) {
    if (r.log.empty()) return 0;
    const Benchmark bench = load_experiment_benchmark(r.config);
    std::set<int> chips;
    for (const auto& rec : r.log.records()) chips.insert(rec.chip_id);
    int mismatches = 0;
    for (int chip : chips) {
        IterationLog one;
        std::map<EdgeId, DelayBound> last;
        std::vector<EdgeId> edges;
        for (const auto& rec : r.log.records()) {
            if (rec.chip_id != chip) continue;
            one.append(rec);
            for (const auto& s : rec.edges) {
                if (!last.count(s.edge)) edges.push_back(s.edge);
                last[s.edge] = DelayBound{s.edge, s.lower, s.upper};
            }
        }
        const auto start = initial_bounds(bench.graph, bench.model, edges);
        const auto replayed = replay_bounds(one, start);
        for (const auto& [e, b] : last) {
            const auto& x = replayed.at(e);
            if (x.lower != b.lower || x.upper != b.upper) ++mismatches;
        }
    }
    std::printf("replayed %zu iteration records over %zu chips: %d mismatches\n", r.log.records().size(),
                chips.size(), mismatches);
    return mismatches;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-silicon delay test and buffer configuration experiments"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Write a synthetic benchmark file");
    std::string gen_config;
    std::string gen_out;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("-c,--config", gen_config, "Generator config (JSON); defaults when omitted");
    gen->add_option("-o,--out", gen_out, "Benchmark file to write")->required();
    gen->add_option("-s,--seed", gen_seed, "Override the generator seed");

    auto* run = app.add_subcommand("run", "Run an experiment and write its reports");
    std::string run_config;
    std::string run_out;
    std::optional<int> run_chips;
    std::optional<std::uint64_t> run_seed;
    std::optional<int> run_workers;
    run->add_option("-c,--config", run_config, "Experiment config (JSON)")->required();
    run->add_option("-o,--out", run_out, "Output directory")->required();
    run->add_option("-n,--chips", run_chips, "Override the chip count");
    run->add_option("-s,--seed", run_seed, "Override the chip seed");
    run->add_option("-j,--workers", run_workers, "Worker threads (0 = all cores)");

    auto* replay = app.add_subcommand("replay", "Re-run the experiment recorded in a manifest");
    std::string manifest;
    std::string replay_out;
    std::optional<int> replay_workers;
    replay->add_option("-m,--manifest", manifest, "manifest.json from an earlier run")->required();
    replay->add_option("-o,--out", replay_out, "Output directory")->required();
    replay->add_option("-j,--workers", replay_workers, "Worker threads (0 = all cores)");

    auto* report = app.add_subcommand("report", "Re-emit reports from a results directory");
    std::string report_from;
    std::string report_out;
    report->add_option("-f,--from", report_from, "Directory written by run or replay")->required();
    report->add_option("-o,--out", report_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            GeneratorConfig cfg = gen_config.empty() ? GeneratorConfig{} : generator_config_from_json(read_json_file(gen_config));
            if (gen_seed) cfg.seed = *gen_seed;
            const auto bench = generate_benchmark(cfg);
            save_benchmark(bench, gen_out);
            std::printf("wrote %s: %d flip-flops, %d buffers, %d paths\n", gen_out.c_str(),
                        bench.graph.num_flip_flops(), bench.graph.num_buffers(), bench.graph.num_edges());
        } else if (*run) {
            auto cfg = experiment_config_from_json(read_json_file(run_config));
            if (run_chips) cfg.chips = *run_chips;
            if (run_seed) cfg.chip_seed = *run_seed;
            if (run_workers) cfg.workers = *run_workers;
            cfg.validate();
            run_and_emit(cfg, run_out);
        } else if (*replay) {
            const json m = read_json_file(manifest);
            auto cfg = experiment_config_from_json(m.at("config"));
            if (replay_workers) cfg.workers = *replay_workers;
            run_and_emit(cfg, replay_out);
        } else if (*report) {
            const auto r = load_results(report_from);
            emit_reports(r, report_out);
            print_summary(r, report_out);
            if (verify_log(r) != 0) return 3;
        }
    } catch (const ExperimentError& e) {
        std::fprintf(stderr, "error in stage %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
