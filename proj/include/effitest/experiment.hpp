// End-to-end runs over simulated chips: offline planning, per-chip testing
// and configuration, yield evaluation, the pathwise baseline and ablations.

#ifndef EFFITEST_EXPERIMENT_HPP
#define EFFITEST_EXPERIMENT_HPP

#include "effitest/configurator.hpp"
#include "effitest/scheduler.hpp"
#include "effitest/stats.hpp"
#include "effitest/tester.hpp"
#include "effitest/timing_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace effitest {

enum class Mode { EffiTest, BaselinePathwise, MultiplexNoAlign, EffiTestNoPrediction };

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct ExperimentConfig {
    std::string name = "experiment";
    /// Exactly one of generator / benchmark_file.
    std::optional<GeneratorConfig> generator;
    std::string benchmark_file;

    int chips = 1000;
    std::uint64_t chip_seed = 11;
    Mode mode = Mode::EffiTest;
    /// Periods as quantiles of the no-buffer critical delay.
    std::vector<double> period_quantiles{0.5, 0.8413};
    int quantile_samples = 10000;
    std::uint64_t quantile_seed = 101;
    /// Removal resolution; 0 picks 6 * mean sigma / 2^8.
    double resolution = 0.0;
    HoldConfig hold{};
    /// Every standard deviation scaled by this factor, covariances kept.
    double sigma_scale = 1.0;
    AlignmentForm alignment_form = AlignmentForm::Epigraph;
    ConfigForm config_form = ConfigForm::Aggregated;
    /// Chips for the mode comparison; 0 disables it.
    int ablation_chips = 100;
    /// Chips whose frequency steps are written to the iteration log.
    int log_chips = 10;
    /// 0 uses the hardware concurrency.
    int workers = 0;

    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

class ExperimentError : public std::runtime_error {
public:
    ExperimentError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(stage) {}
    [[nodiscard]] const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct MetricsTable {
    std::string benchmark;
    int n_s = 0;   // flip-flops
    int n_g = 0;   // gates (metadata)
    int n_b = 0;   // buffers
    int n_p = 0;   // required paths
    int n_pt = 0;  // paths tested per chip, filled slots included
    double t_a = 0.0;        // iterations per chip
    double t_v = 0.0;        // t_a / n_pt
    double t_a_prime = 0.0;  // pathwise iterations per chip
    double t_v_prime = 0.0;  // t'_a / n_p
    double r_a = 0.0;
    double r_v = 0.0;
    // Seconds; kept out of the CSV reports.
    double T_p = 0.0;
    double T_t = 0.0;
    double T_s = 0.0;

    /// Derived columns from the counts.
    void finalize();
};

struct PeriodYield {
    double quantile = 0.0;
    YieldReport report;
};

struct AblationRow {
    Mode mode = Mode::EffiTest;
    int chips = 0;
    int paths = 0;  // paths measured per chip
    int batches = 0;
    double iterations_per_chip = 0.0;
    double iterations_per_path = 0.0;
};

/// Offline artefacts shared by every chip of one mode.
struct ModePlan {
    Mode mode = Mode::EffiTest;
    std::vector<TestBatch> batches;
    std::vector<EdgeId> measured;
    bool align = true;
    bool predict = false;
    std::optional<DelayPredictor> predictor;
};

struct ChipOutcome {
    int chip_id = 0;
    int iterations = 0;
    bool out_of_window = false;
    bool guard_tripped = false;
    std::vector<BufferConfiguration> configs;  // one per period
    std::vector<ChipVerdict> verdicts;
    std::vector<bool> ideal_pass;
    std::vector<bool> no_buffer_pass;
    double test_seconds = 0.0;
    double config_seconds = 0.0;
};

struct ExperimentResult {
    ExperimentConfig config;
    double resolution = 0.0;
    std::vector<double> periods;
    HoldBounds hold;
    MetricsTable metrics;
    std::vector<PeriodYield> yields;
    std::vector<AblationRow> ablation;
    IterationLog log;
    int out_of_window_chips = 0;
    int guard_tripped_chips = 0;
};

Benchmark load_experiment_benchmark(const ExperimentConfig& cfg);

ModePlan plan_mode(Mode mode, const TimingGraph& graph, const DelayModel& model);

/// Sample quantile (value at rank ceil(q * n)) of the no-buffer critical
/// delay over `samples` chips.
std::vector<double> critical_delay_quantiles(const TimingGraph& graph, const DelayModel& model,
                                             const std::vector<double>& quantiles, int samples,
                                             std::uint64_t seed);

/// Tests one chip under a mode plan and returns the final bounds of every
/// required path (measured, or predicted as mu' +- 3 sigma').
std::map<EdgeId, DelayBound> measure_chip(const ModePlan& plan, const ChipInstance& chip,
                                          const DelayModel& model, const TimingGraph& graph,
                                          const TesterConfig& cfg, const HoldBounds& hold,
                                          ChipTestResult* test = nullptr, IterationLog* log = nullptr);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Writes metrics.csv, yield.csv, ablation.csv, chips_T<k>.csv,
/// iterations.jsonl, summary.json, manifest.json, runtime.json and
/// results.json into `dir`.
void emit_reports(const ExperimentResult& result, const std::filesystem::path& dir);

/// Reads the results.json written by emit_reports.
ExperimentResult load_results(const std::filesystem::path& dir);

std::string metrics_csv(const std::vector<MetricsTable>& rows);
std::string yield_csv(const std::string& benchmark, const std::vector<PeriodYield>& yields);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string chips_csv(const YieldReport& report);
nlohmann::json summary_json(const ExperimentResult& result);

}  // namespace effitest

#endif
