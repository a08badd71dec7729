#include "effitest/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace effitest {

using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string pct(double fraction) { return num(100.0 * fraction); }

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

json metrics_json(const MetricsTable& m) {
    return json{{"benchmark", m.benchmark}, {"n_s", m.n_s}, {"n_g", m.n_g}, {"n_b", m.n_b},
                {"n_p", m.n_p}, {"n_pt", m.n_pt}, {"t_a", m.t_a}, {"t_a_prime", m.t_a_prime},
                {"T_p", m.T_p}, {"T_t", m.T_t}, {"T_s", m.T_s}};
}

MetricsTable metrics_from(const json& j) {
    MetricsTable m;
    m.benchmark = j.at("benchmark").get<std::string>();
    m.n_s = j.at("n_s");
    m.n_g = j.at("n_g");
    m.n_b = j.at("n_b");
    m.n_p = j.at("n_p");
    m.n_pt = j.at("n_pt");
    m.t_a = j.at("t_a");
    m.t_a_prime = j.at("t_a_prime");
    m.T_p = j.at("T_p");
    m.T_t = j.at("T_t");
    m.T_s = j.at("T_s");
    m.finalize();
    return m;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsTable>& rows) {
    std::string s = "benchmark,n_s,n_g,n_b,n_p,n_pt,t_a,t_v,t_a_prime,t_v_prime,r_a,r_v\n";
    for (const auto& m : rows) {
        s += m.benchmark + "," + std::to_string(m.n_s) + "," + std::to_string(m.n_g) + "," +
             std::to_string(m.n_b) + "," + std::to_string(m.n_p) + "," + std::to_string(m.n_pt) + "," +
             num(m.t_a) + "," + num(m.t_v) + "," + num(m.t_a_prime) + "," + num(m.t_v_prime) + "," +
             num(m.r_a) + "," + num(m.r_v) + "\n";
    }
    return s;
}

std::string yield_csv(const std::string& benchmark, const std::vector<PeriodYield>& yields) {
    std::string head = "benchmark";
    std::string row = benchmark;
    for (std::size_t k = 0; k < yields.size(); ++k) {
        const std::string t = "T" + std::to_string(k + 1);
        head += "," + t + ",y_i_" + t + ",y_t_" + t + ",y_r_" + t;
        const auto& r = yields[k].report;
        row += "," + num(r.period) + "," + pct(r.y_ideal) + "," + pct(r.y_tested) + "," + pct(r.drop());
    }
    return head + "\n" + row + "\n";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s = "mode,chips,paths,batches,iterations_per_chip,iterations_per_path\n";
    for (const auto& r : rows) {
        s += std::string(to_string(r.mode)) + "," + std::to_string(r.chips) + "," + std::to_string(r.paths) + "," +
             std::to_string(r.batches) + "," + num(r.iterations_per_chip) + "," + num(r.iterations_per_path) + "\n";
    }
    return s;
}

std::string chips_csv(const YieldReport& report) {
    std::string s = "chip_id,feasible,setup_pass,hold_pass,xi,iterations\n";
    for (const auto& v : report.verdicts) {
        s += std::to_string(v.chip_id) + "," + (v.feasible ? "1" : "0") + "," + (v.setup_pass ? "1" : "0") + "," +
             (v.hold_pass ? "1" : "0") + "," + num(v.xi) + "," + std::to_string(v.iterations) + "\n";
    }
    return s;
}

json summary_json(const ExperimentResult& r) {
    const auto& m = r.metrics;
    json y_i = json::array();
    json y_t = json::array();
    json y_r = json::array();
    json y_nb = json::array();
    json periods = json::array();
    json quantiles = json::array();
    for (const auto& py : r.yields) {
        periods.push_back(py.report.period);
        quantiles.push_back(py.quantile);
        y_i.push_back(100.0 * py.report.y_ideal);
        y_t.push_back(100.0 * py.report.y_tested);
        y_r.push_back(100.0 * py.report.drop());
        y_nb.push_back(100.0 * py.report.y_no_buffer);
    }
    return json{{"benchmark", m.benchmark},
                {"mode", to_string(r.config.mode)},
                {"chips", r.config.chips},
                {"n_p", m.n_p},
                {"n_pt", m.n_pt},
                {"quantiles", quantiles},
                {"periods", periods},
                {"y_i", y_i},
                {"y_t", y_t},
                {"y_r", y_r},
                {"y_no_buffer", y_nb},
                {"t_a", m.t_a},
                {"t_v", m.t_v},
                {"t'_a", m.t_a_prime},
                {"t'_v", m.t_v_prime},
                {"r_a", m.r_a},
                {"r_v", m.r_v},
                {"resolution", r.resolution},
                {"out_of_window_chips", r.out_of_window_chips},
                {"guard_tripped_chips", r.guard_tripped_chips}};
}

void emit_reports(const ExperimentResult& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

    write_file(dir / "metrics.csv", metrics_csv({r.metrics}));
    write_file(dir / "yield.csv", yield_csv(r.metrics.benchmark, r.yields));
    write_file(dir / "ablation.csv", ablation_csv(r.ablation));
    for (std::size_t k = 0; k < r.yields.size(); ++k) {
        write_file(dir / ("chips_T" + std::to_string(k + 1) + ".csv"), chips_csv(r.yields[k].report));
    }
    std::ostringstream log;
    r.log.write_jsonl(log);
    write_file(dir / "iterations.jsonl", log.str());
    write_file(dir / "summary.json", summary_json(r).dump(2) + "\n");

    json manifest{{"format", 1},
                  {"config", to_json(r.config)},
                  {"resolved", {{"resolution", r.resolution}, {"periods", r.periods}}}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "runtime.json",
               json{{"T_p", r.metrics.T_p}, {"T_t", r.metrics.T_t}, {"T_s", r.metrics.T_s}}.dump(2) + "\n");

    json yields = json::array();
    for (const auto& py : r.yields) {
        json verdicts = json::array();
        for (const auto& v : py.report.verdicts) {
            verdicts.push_back({v.chip_id, v.feasible, v.setup_pass, v.hold_pass, v.xi, v.iterations});
        }
        yields.push_back({{"quantile", py.quantile},
                          {"period", py.report.period},
                          {"y_ideal", py.report.y_ideal},
                          {"y_tested", py.report.y_tested},
                          {"y_no_buffer", py.report.y_no_buffer},
                          {"verdicts", verdicts}});
    }
    json ablation = json::array();
    for (const auto& a : r.ablation) {
        ablation.push_back({{"mode", to_string(a.mode)},
                            {"chips", a.chips},
                            {"paths", a.paths},
                            {"batches", a.batches},
                            {"iterations_per_chip", a.iterations_per_chip},
                            {"iterations_per_path", a.iterations_per_path}});
    }
    json results{{"config", to_json(r.config)},
                 {"resolution", r.resolution},
                 {"periods", r.periods},
                 {"hold", r.hold},
                 {"metrics", metrics_json(r.metrics)},
                 {"yields", yields},
                 {"ablation", ablation},
                 {"out_of_window_chips", r.out_of_window_chips},
                 {"guard_tripped_chips", r.guard_tripped_chips}};
    write_file(dir / "results.json", results.dump() + "\n");
}

ExperimentResult load_results(const std::filesystem::path& dir) {
    const json j = read_json(dir / "results.json");
    ExperimentResult r;
    try {
        r.config = experiment_config_from_json(j.at("config"));
        r.resolution = j.at("resolution");
        r.periods = j.at("periods").get<std::vector<double>>();
        r.hold = j.at("hold").get<std::vector<double>>();
        r.metrics = metrics_from(j.at("metrics"));
        for (const auto& y : j.at("yields")) {
            PeriodYield py;
            py.quantile = y.at("quantile");
            py.report.period = y.at("period");
            py.report.y_ideal = y.at("y_ideal");
            py.report.y_tested = y.at("y_tested");
            py.report.y_no_buffer = y.at("y_no_buffer");
            for (const auto& v : y.at("verdicts")) {
                ChipVerdict cv;
                cv.chip_id = v.at(0);
                cv.feasible = v.at(1);
                cv.setup_pass = v.at(2);
                cv.hold_pass = v.at(3);
                cv.xi = v.at(4);
                cv.iterations = v.at(5);
                py.report.verdicts.push_back(cv);
            }
            r.yields.push_back(std::move(py));
        }
        for (const auto& a : j.at("ablation")) {
            AblationRow row;
            row.mode = mode_from_string(a.at("mode").get<std::string>());
            row.chips = a.at("chips");
            row.paths = a.at("paths");
            row.batches = a.at("batches");
            row.iterations_per_chip = a.at("iterations_per_chip");
            row.iterations_per_path = a.at("iterations_per_path");
            r.ablation.push_back(row);
        }
        r.out_of_window_chips = j.at("out_of_window_chips");
        r.guard_tripped_chips = j.at("guard_tripped_chips");
    } catch (const json::exception& e) {
        throw std::runtime_error((dir / "results.json").string() + ": " + e.what());
    }
    std::ifstream log(dir / "iterations.jsonl", std::ios::binary);
    if (log) r.log = IterationLog::read_jsonl(log);
    return r;
}

}  // namespace effitest
