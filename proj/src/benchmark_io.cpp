#include "effitest/benchmark_io.hpp"

#include <fstream>
#include <stdexcept>

namespace effitest {

using nlohmann::json;

json to_json(const GeneratorConfig& cfg) {
    return json{
        {"flip_flops", cfg.flip_flops},
        {"buffer_fraction", cfg.buffer_fraction},
        {"paths", cfg.paths},
        {"clusters", cfg.clusters},
        {"intra_cluster_corr", cfg.intra_cluster_corr},
        {"global_corr", cfg.global_corr},
        {"mean_delay_range", {cfg.mean_delay_low, cfg.mean_delay_high}},
        {"cv", cfg.cv},
        {"seed", cfg.seed},
        {"gate_count", cfg.gate_count},
        {"side_imbalance", cfg.side_imbalance},
        {"hold_margin_range", {cfg.hold_margin_low, cfg.hold_margin_high}},
        {"hold_coupling", cfg.hold_coupling},
        {"buffer_steps", cfg.buffer_steps},
    };
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig cfg;
    cfg.flip_flops = j.value("flip_flops", cfg.flip_flops);
    cfg.buffer_fraction = j.value("buffer_fraction", cfg.buffer_fraction);
    cfg.paths = j.value("paths", cfg.paths);
    cfg.clusters = j.value("clusters", cfg.clusters);
    cfg.intra_cluster_corr = j.value("intra_cluster_corr", cfg.intra_cluster_corr);
    cfg.global_corr = j.value("global_corr", cfg.global_corr);
    if (j.contains("mean_delay_range")) {
        cfg.mean_delay_low = j.at("mean_delay_range").at(0).get<double>();
        cfg.mean_delay_high = j.at("mean_delay_range").at(1).get<double>();
    }
    cfg.cv = j.value("cv", cfg.cv);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.gate_count = j.value("gate_count", cfg.gate_count);
    cfg.side_imbalance = j.value("side_imbalance", cfg.side_imbalance);
    if (j.contains("hold_margin_range")) {
        cfg.hold_margin_low = j.at("hold_margin_range").at(0).get<double>();
        cfg.hold_margin_high = j.at("hold_margin_range").at(1).get<double>();
    }
    cfg.hold_coupling = j.value("hold_coupling", cfg.hold_coupling);
    cfg.buffer_steps = j.value("buffer_steps", cfg.buffer_steps);
    return cfg;
}

json to_json(const Benchmark& bench) {
    const auto& g = bench.graph;
    json nodes = json::array();
    for (const auto& ff : g.flip_flops()) {
        json n{{"id", ff.id}, {"setup_time", ff.setup_time}, {"hold_time", ff.hold_time}};
        if (ff.buffer) {
            n["buffer"] = {{"range_start", ff.buffer->range_start()},
                           {"range_width", ff.buffer->range_width()},
                           {"step_count", ff.buffer->step_count()},
                           {"level", ff.buffer->level()}};
        } else {
            n["buffer"] = nullptr;
        }
        nodes.push_back(std::move(n));
    }
    json edges = json::array();
    for (const auto& e : g.edges()) {
        edges.push_back({{"id", e.id},
                         {"src", e.src},
                         {"dst", e.dst},
                         {"setup_var", e.setup_var},
                         {"hold_var", e.hold_var}});
    }
    json exclusions = json::array();
    for (const auto& [a, b] : g.exclusions()) exclusions.push_back({a, b});

    const auto& m = bench.model;
    json labels = json::array();
    for (const auto& l : m.labels()) labels.push_back({{"edge", l.edge}, {"kind", to_string(l.kind)}});
    std::vector<double> mean(m.mean().data(), m.mean().data() + m.mean().size());
    std::vector<double> cov;
    cov.reserve(static_cast<std::size_t>(m.size()) * static_cast<std::size_t>(m.size()));
    for (int r = 0; r < m.size(); ++r) {
        for (int c = 0; c < m.size(); ++c) cov.push_back(m.covariance()(r, c));
    }

    json doc{
        {"format", "effitest-benchmark"},
        {"version", kBenchmarkFormatVersion},
        {"designated_period", g.designated_period()},
        {"flip_flops", std::move(nodes)},
        {"edges", std::move(edges)},
        {"exclusions", std::move(exclusions)},
        {"model", {{"dimension", m.size()}, {"labels", labels}, {"mean", mean}, {"covariance", cov}}},
    };
    doc["generator"] = bench.generator ? to_json(*bench.generator) : json(nullptr);
    return doc;
}

Benchmark benchmark_from_json(const json& j) {
    if (j.value("format", std::string{}) != "effitest-benchmark") {
        throw TimingModelError("not an effitest benchmark document");
    }
    if (j.at("version").get<int>() != kBenchmarkFormatVersion) {
        throw TimingModelError("unsupported benchmark version " + j.at("version").dump());
    }
    std::vector<FlipFlop> nodes;
    for (const auto& n : j.at("flip_flops")) {
        FlipFlop ff;
        ff.id = n.at("id").get<int>();
        ff.setup_time = n.value("setup_time", 0.0);
        ff.hold_time = n.value("hold_time", 0.0);
        if (n.contains("buffer") && !n.at("buffer").is_null()) {
            const auto& b = n.at("buffer");
            ff.buffer = TuningBuffer(b.at("range_start").get<double>(), b.at("range_width").get<double>(),
                                     b.at("step_count").get<int>(), b.at("level").get<int>());
        }
        nodes.push_back(std::move(ff));
    }
    std::vector<TimingEdge> edges;
    for (const auto& e : j.at("edges")) {
        edges.push_back(TimingEdge{e.at("id").get<int>(), e.at("src").get<int>(), e.at("dst").get<int>(),
                                   e.at("setup_var").get<int>(), e.at("hold_var").get<int>()});
    }
    std::vector<Exclusion> exclusions;
    for (const auto& p : j.value("exclusions", json::array())) {
        exclusions.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }

    const auto& mj = j.at("model");
    const int dim = mj.at("dimension").get<int>();
    const auto mean = mj.at("mean").get<std::vector<double>>();
    const auto cov = mj.at("covariance").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != dim ||
        cov.size() != static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim)) {
        throw TimingModelError("model arrays do not match the declared dimension");
    }
    Eigen::VectorXd mu(dim);
    Eigen::MatrixXd sigma(dim, dim);
    for (int r = 0; r < dim; ++r) {
        mu(r) = mean[static_cast<std::size_t>(r)];
        for (int c = 0; c < dim; ++c) {
            sigma(r, c) = cov[static_cast<std::size_t>(r) * static_cast<std::size_t>(dim) +
                              static_cast<std::size_t>(c)];
        }
    }
    std::vector<VariableLabel> labels;
    for (const auto& l : mj.at("labels")) {
        labels.push_back({l.at("edge").get<int>(),
                          variable_kind_from_string(l.at("kind").get<std::string>())});
    }

    Benchmark bench{TimingGraph(std::move(nodes), std::move(edges),
                                j.at("designated_period").get<double>(), std::move(exclusions)),
                    DelayModel(std::move(mu), std::move(sigma), std::move(labels)), std::nullopt};
    for (const auto& e : bench.graph.edges()) {
        if (e.setup_var < 0 || e.setup_var >= dim || e.hold_var < 0 || e.hold_var >= dim) {
            throw TimingModelError("edge " + std::to_string(e.id) +
                                   " references a variable outside the model");
        }
    }
    if (j.contains("generator") && !j.at("generator").is_null()) {
        bench.generator = generator_config_from_json(j.at("generator"));
    }
    return bench;
}

void save_benchmark(const Benchmark& bench, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write benchmark file " + path.string());
    out << to_json(bench).dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing benchmark file " + path.string());
}

Benchmark load_benchmark(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read benchmark file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    return benchmark_from_json(j);
}

}  // namespace effitest
